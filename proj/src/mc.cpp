#include "sivsim/mc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/random/binomial_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

#include "sivsim/random.hpp"

namespace sivsim {

void validate(const DetectionConfig& d) {
  require(std::isfinite(d.efficiency) && d.efficiency >= 0 && d.efficiency <= 1,
          Errc::kInvalidArgument, "detection efficiency must be in [0, 1]");
  require(std::isfinite(d.background_rate) && d.background_rate >= 0,
          Errc::kInvalidArgument, "background_rate must be >= 0");
  require(std::isfinite(d.split_ratio) && d.split_ratio > 0 && d.split_ratio < 1,
          Errc::kInvalidArgument, "split_ratio must be in (0, 1)");
  require(std::isfinite(d.jitter_sigma_ps) && d.jitter_sigma_ps >= 0,
          Errc::kInvalidArgument, "jitter_sigma_ps must be >= 0");
  require(std::isfinite(d.dead_time_ps) && d.dead_time_ps >= 0,
          Errc::kInvalidArgument, "dead_time_ps must be >= 0");
  require(d.max_records > 0, Errc::kInvalidArgument, "max_records must be > 0");
}

void validate(const PulseConfig& p) {
  require(std::isfinite(p.rep_rate_mhz) && p.rep_rate_mhz > 0, Errc::kInvalidArgument,
          "rep_rate_mhz must be > 0");
  require(std::isfinite(p.window_ns) && p.window_ns > 0 &&
              p.window_ns <= p.period_ns() * (1 + 1e-12),
          Errc::kInvalidArgument, "window_ns must be in (0, 1/rep_rate]");
  require(std::isfinite(p.irf_sigma_ps) && p.irf_sigma_ps >= 0,
          Errc::kInvalidArgument, "irf_sigma_ps must be >= 0");
  require(std::isfinite(p.pulse_energy_scale) && p.pulse_energy_scale > 0,
          Errc::kInvalidArgument, "pulse_energy_scale must be > 0");
  require(std::isfinite(p.pulse_offset_ns) && p.pulse_offset_ns >= 0 &&
              p.pulse_offset_ns < p.window_ns,
          Errc::kInvalidArgument, "pulse_offset_ns must lie inside the window");
}

std::size_t PhotonStream::count(DetectorChannel ch) const {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [ch](const PhotonRecord& r) { return r.channel == ch; }));
}

double ExcitationSchedule::total_duration_s() const {
  double total = 0;
  for (const auto& s : segments) total += s.duration_s;
  return total;
}

namespace {

struct SegmentRates {
  double k12, k21, k23, k31;
  double eps;
};

SegmentRates segment_rates(const TransitionRatesd& r, const Excitationd& e, double eps) {
  return {pump_rate(r, e), r.k21, effective_capture_rate(r, e), r.k31, eps};
}

// Record before dead time and final ordering; absolute time in ps, may be
// negative or past the end after jitter.
struct RawRecord {
  std::int64_t t_ps;
  std::uint8_t channel;

  bool operator<(const RawRecord& o) const {
    return t_ps != o.t_ps ? t_ps < o.t_ps : channel < o.channel;
  }
};

class Detector {
 public:
  Detector(const DetectionConfig& d, std::vector<RawRecord>& buffer)
      : buffer_(buffer), split_(d.split_ratio), jitter_(d.jitter_sigma_ps) {}

  void set_origin(std::int64_t origin_ps) { origin_ = origin_ps; }

  // Photon detected at t_ns past the window origin.
  void photon(double t_ns, Engine& rng) {
    const std::uint8_t ch = open_uniform(rng) < split_ ? 0 : 1;
    double t_ps = t_ns * 1e3;
    if (jitter_ > 0) {
      double z;
      do {
        z = normal_(rng);
      } while (std::abs(z) > 8.0);
      t_ps += z * jitter_;
    }
    buffer_.push_back({origin_ + std::llround(t_ps), ch});
  }

 private:
  std::vector<RawRecord>& buffer_;
  std::int64_t origin_ = 0;
  double split_;
  double jitter_;
  boost::random::normal_distribution<double> normal_{0.0, 1.0};
};

// One emitter's Markov chain. Time is kept in ns relative to the current
// window origin so that long runs keep sub-ps resolution.
class EmitterProcess {
 public:
  EmitterProcess(std::uint64_t seed, const SegmentRates& first) : rng_(seed) {
    // Start from the stationary distribution of the first segment.
    const double w1 = first.k31 * (first.k21 + first.k23);
    const double w2 = first.k12 * first.k31;
    const double w3 = first.k12 * first.k23;
    const double u = open_uniform(rng_) * (w1 + w2 + w3);
    level_ = u < w1 ? 1 : (u < w1 + w2 ? 2 : 3);
  }

  Engine& rng() { return rng_; }

  // Advance to `end_ns`. When `rates_change` is set the chain must be in a
  // definite state at end_ns because the next window uses other rates.
  void run(const SegmentRates& r, double end_ns, bool rates_change,
           SimulationMethod method, Detector& det) {
    if (method == SimulationMethod::kPerTransition) {
      run_transitions(r, end_ns, det, false);
      return;
    }
    while (true) {
      if (!pending_) {
        if (level_ != 1) {
          run_transitions(r, end_ns, det, true);
          if (level_ != 1) return;  // reached end_ns
        }
        if (r.k12 <= 0) {
          t_ = end_ns;
          return;
        }
        draw_block(r);
      }
      const double tp = block_.start + block_.s1 + block_.s2 + block_.s3;
      if (tp < end_ns) {
        det.photon(tp, rng_);
        t_ = tp;
        level_ = 1;
        pending_ = false;
        continue;
      }
      if (rates_change) {
        bridge(end_ns);
        pending_ = false;
        t_ = end_ns;
      }
      return;
    }
  }

  void shift(double dt_ns) {
    t_ -= dt_ns;
    block_.start -= dt_ns;
  }

  std::uint64_t transitions() const { return transitions_; }

 private:
  struct Block {
    std::int64_t n_c = 0;  // visits to |2>, the last one ends in a detected photon
    std::int64_t n_s = 0;  // shelving excursions among the other n_c - 1 exits
    double start = 0;
    double s1 = 0, s2 = 0, s3 = 0;  // summed dwell in |1>, |2>, |3>
  };

  // From |1>, sample the whole path up to the next detected photon. Each exit
  // from |2> is a detected photon (p_d), an undetected photon (p_u) or a
  // shelving event (p_s); the dwell sums are gamma distributed.
  void draw_block(const SegmentRates& r) {
    const double k2 = r.k21 + r.k23;
    const double p_d = r.eps * r.k21 / k2;
    const double p_s = r.k23 / k2;
    const double p_u = (1 - r.eps) * r.k21 / k2;
    block_.start = t_;
    block_.n_c = 1 + std::geometric_distribution<std::int64_t>(p_d)(rng_);
    const double q = p_s + p_u > 0 ? p_s / (p_s + p_u) : 0.0;
    block_.n_s = block_.n_c > 1
                     ? boost::random::binomial_distribution<std::int64_t>(block_.n_c - 1, q)(rng_)
                     : 0;
    block_.s1 = gamma_sum(block_.n_c, r.k12);
    block_.s2 = gamma_sum(block_.n_c, k2);
    block_.s3 = gamma_sum(block_.n_s, r.k31);
    pending_ = true;
  }

  double gamma_sum(std::int64_t n, double rate) {
    if (n <= 0) return 0.0;
    if (n == 1) return std::exponential_distribution<double>(rate)(rng_);
    // Marsaglia-Tsang squeeze for integer shape >= 2.
    const double d = static_cast<double>(n) - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      const double x = normal_(rng_);
      double v = 1.0 + c * x;
      if (v <= 0) continue;
      v = v * v * v;
      const double u = open_uniform(rng_);
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2 || std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v)))
        return d * v / rate;
    }
  }

  // Split `*rest` into `*m` exchangeable exponential pieces, one at a time:
  // given the sum, the pieces are uniform on the simplex.
  double next_piece(double* rest, std::int64_t* m) {
    double piece;
    if (*m <= 1) {
      piece = *rest;
    } else {
      piece = *rest * (1.0 - std::pow(open_uniform(rng_), 1.0 / static_cast<double>(*m - 1)));
    }
    *rest -= piece;
    --*m;
    return piece;
  }

  // A pending block overran a rate change at `end_ns`. Rebuild its path,
  // conditional on the already-drawn counts and dwell sums, far enough to know
  // the level occupied at end_ns. Undetected emissions before end_ns are
  // dropped by construction (they were undetected).
  void bridge(double end_ns) {
    double t = block_.start;
    double r1 = block_.s1, r2 = block_.s2, r3 = block_.s3;
    std::int64_t m1 = block_.n_c, m2 = block_.n_c, m3 = block_.n_s;
    std::int64_t exits_left = block_.n_c - 1;
    std::int64_t shelved_left = block_.n_s;
    for (std::int64_t visit = 0; visit < block_.n_c; ++visit) {
      t += next_piece(&r1, &m1);
      if (t >= end_ns) {
        level_ = 1;
        return;
      }
      t += next_piece(&r2, &m2);
      if (t >= end_ns) {
        level_ = 2;
        return;
      }
      if (visit + 1 == block_.n_c) break;
      const bool shelve =
          shelved_left > 0 &&
          open_uniform(rng_) * static_cast<double>(exits_left) < static_cast<double>(shelved_left);
      --exits_left;
      if (shelve) {
        --shelved_left;
        t += next_piece(&r3, &m3);
        if (t >= end_ns) {
          level_ = 3;
          return;
        }
      }
    }
    // Only rounding can get here; the photon time was past end_ns.
    level_ = 1;
  }

  // Jump-by-jump simulation up to end_ns. A dwell overrunning end_ns is cut
  // there (memoryless). With `until_ground`, stop as soon as |1> is reached.
  void run_transitions(const SegmentRates& r, double end_ns, Detector& det,
                       bool until_ground) {
    const double k2 = r.k21 + r.k23;
    while (true) {
      if (until_ground && level_ == 1) return;
      double rate = level_ == 1 ? r.k12 : (level_ == 2 ? k2 : r.k31);
      if (rate <= 0) {
        t_ = end_ns;
        return;
      }
      const double dwell = -std::log(open_uniform(rng_)) / rate;
      if (t_ + dwell >= end_ns) {
        t_ = end_ns;
        return;
      }
      t_ += dwell;
      ++transitions_;
      if (level_ == 1) {
        level_ = 2;
      } else if (level_ == 2) {
        if (open_uniform(rng_) * k2 < r.k21) {
          level_ = 1;
          if (r.eps > 0 && (r.eps >= 1 || open_uniform(rng_) < r.eps)) det.photon(t_, rng_);
        } else {
          level_ = 3;
        }
      } else {
        level_ = 1;
      }
    }
  }

  Engine rng_;
  boost::random::normal_distribution<double> normal_{0.0, 1.0};
  int level_ = 1;
  double t_ = 0;
  bool pending_ = false;
  Block block_;
  std::uint64_t transitions_ = 0;
};

void check_schedule(const ExcitationSchedule& schedule) {
  require(!schedule.segments.empty(), Errc::kInvalidArgument, "schedule has no segments");
  for (const auto& s : schedule.segments) {
    require(std::isfinite(s.duration_s) && s.duration_s > 0, Errc::kInvalidArgument,
            "segment durations must be > 0");
    validate(s.exc);
  }
}

}  // namespace

void simulate_schedule(int n_emitters, const TransitionRatesd& rates,
                       const DetectionConfig& detection,
                       const ExcitationSchedule& schedule, std::uint64_t seed,
                       const RecordSink& sink, const SimulationOptions& options) {
  require(n_emitters >= 1, Errc::kInvalidArgument, "n_emitters must be >= 1");
  require(std::isfinite(options.chunk_s) && options.chunk_s > 0, Errc::kInvalidArgument,
          "chunk_s must be > 0");
  validate(rates);
  validate(detection);
  check_schedule(schedule);

  const double eps = detection.efficiency;
  std::vector<SegmentRates> seg_rates;
  for (const auto& s : schedule.segments) seg_rates.push_back(segment_rates(rates, s.exc, eps));

  // With zero efficiency emitters never produce records; skip them entirely.
  std::vector<EmitterProcess> emitters;
  if (eps > 0) {
    emitters.reserve(static_cast<std::size_t>(n_emitters));
    for (int i = 0; i < n_emitters; ++i)
      emitters.emplace_back(derive_seed(seed, kSeedEmitter, static_cast<std::uint64_t>(i)),
                            seg_rates.front());
  }
  Engine bg_rng[2] = {Engine(derive_seed(seed, kSeedBackground, 0)),
                      Engine(derive_seed(seed, kSeedBackground, 1))};
  const double bg_per_ps = detection.background_rate * 1e-12;

  std::vector<RawRecord> buffer;
  std::vector<PhotonRecord> out;
  Detector det(detection, buffer);

  const auto chunk_ps = std::max<std::int64_t>(1, std::llround(options.chunk_s * 1e12));
  const auto margin_ps = static_cast<std::int64_t>(std::ceil(8 * detection.jitter_sigma_ps)) + 1;
  const std::int64_t dead_ps = static_cast<std::int64_t>(std::ceil(detection.dead_time_ps));
  std::int64_t last_accepted[2] = {std::numeric_limits<std::int64_t>::min(),
                                   std::numeric_limits<std::int64_t>::min()};

  std::int64_t total_end = std::llround(schedule.total_duration_s() * 1e12);
  auto flush = [&](std::int64_t final_before, bool all) {
    std::sort(buffer.begin(), buffer.end());
    std::size_t n_final = buffer.size();
    if (!all) {
      n_final = static_cast<std::size_t>(
          std::lower_bound(buffer.begin(), buffer.end(), RawRecord{final_before, 0}) -
          buffer.begin());
    }
    out.clear();
    for (std::size_t i = 0; i < n_final; ++i) {
      const RawRecord& r = buffer[i];
      if (r.t_ps < 0 || r.t_ps >= total_end) continue;
      if (dead_ps > 0 && last_accepted[r.channel] != std::numeric_limits<std::int64_t>::min() &&
          r.t_ps - last_accepted[r.channel] < dead_ps)
        continue;
      last_accepted[r.channel] = r.t_ps;
      out.push_back({static_cast<std::uint64_t>(r.t_ps), static_cast<DetectorChannel>(r.channel)});
    }
    buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(n_final));
    if (!out.empty()) sink(std::span<const PhotonRecord>(out));
  };

  std::int64_t pos = 0;
  double cum_s = 0;
  for (std::size_t si = 0; si < schedule.segments.size(); ++si) {
    cum_s += schedule.segments[si].duration_s;
    const std::int64_t seg_end =
        si + 1 == schedule.segments.size() ? total_end : std::llround(cum_s * 1e12);
    const SegmentRates& sr = seg_rates[si];
    const bool last_segment = si + 1 == schedule.segments.size();
    while (pos < seg_end) {
      const std::int64_t end = std::min(pos + chunk_ps, seg_end);
      const double len_ns = static_cast<double>(end - pos) * 1e-3;
      const bool rates_change = end == seg_end && !last_segment;
      det.set_origin(pos);
      for (auto& e : emitters) e.run(sr, len_ns, rates_change, options.method, det);
      if (bg_per_ps > 0) {
        const double mean = bg_per_ps * static_cast<double>(end - pos);
        for (std::uint8_t ch = 0; ch < 2; ++ch) {
          const auto n = std::poisson_distribution<std::int64_t>(mean)(bg_rng[ch]);
          for (std::int64_t i = 0; i < n; ++i) {
            const auto off = static_cast<std::int64_t>(open_uniform(bg_rng[ch]) *
                                                       static_cast<double>(end - pos));
            buffer.push_back({pos + off, ch});
          }
        }
      }
      flush(end - margin_ps, false);
      for (auto& e : emitters) e.shift(len_ns);
      pos = end;
    }
  }
  flush(0, true);
}

double expected_record_count(int n_emitters, const TransitionRatesd& rates,
                             const DetectionConfig& detection,
                             const ExcitationSchedule& schedule) {
  double total = 0;
  for (const auto& s : schedule.segments) {
    const double signal = n_emitters * detection.efficiency * emission_rate(rates, s.exc) * 1e9;
    total += (signal + 2 * detection.background_rate) * s.duration_s;
  }
  return total;
}

PhotonStream simulate_stream(const EmitterEnsemble& ensemble,
                             const DetectionConfig& detection, double duration_s,
                             std::uint64_t seed, const SimulationOptions& options) {
  require(std::isfinite(duration_s) && duration_s > 0, Errc::kInvalidArgument,
          "duration must be > 0");
  validate(detection);
  ExcitationSchedule schedule{{{duration_s, ensemble.exc}}};
  const double expected =
      expected_record_count(ensemble.n_emitters, ensemble.rates, detection, schedule);
  require(expected <= static_cast<double>(detection.max_records), Errc::kCapacityExceeded,
          "expected " + std::to_string(static_cast<long long>(expected)) +
              " records exceeds the in-memory budget of " +
              std::to_string(detection.max_records));
  PhotonStream stream;
  stream.duration_ps = static_cast<std::uint64_t>(std::llround(duration_s * 1e12));
  stream.records.reserve(static_cast<std::size_t>(expected * 1.01 + 16));
  simulate_schedule(
      ensemble.n_emitters, ensemble.rates, detection, schedule, seed,
      [&](std::span<const PhotonRecord> chunk) {
        stream.records.insert(stream.records.end(), chunk.begin(), chunk.end());
      },
      options);
  return stream;
}

TimeTrace simulate_time_trace(const EmitterEnsemble& ensemble,
                              const DetectionConfig& detection,
                              const ExcitationSchedule& schedule, double bin_width_ms,
                              std::uint64_t seed, const SimulationOptions& options) {
  require(std::isfinite(bin_width_ms) && bin_width_ms > 0, Errc::kInvalidArgument,
          "bin_width_ms must be > 0");
  check_schedule(schedule);
  const auto bin_ps = std::llround(bin_width_ms * 1e9);
  require(bin_ps > 0, Errc::kInvalidArgument, "bin width below 1 ps");
  TimeTrace trace;
  trace.bin_width_ms = bin_width_ms;
  for (std::size_t si = 0; si < schedule.segments.size(); ++si) {
    const double bins = schedule.segments[si].duration_s * 1e3 / bin_width_ms;
    const double whole = std::round(bins);
    require(whole >= 1 && std::abs(bins - whole) <= 1e-9 * std::max(1.0, whole),
            Errc::kInvalidArgument,
            "segment " + std::to_string(si) + " is not a whole number of bins");
    trace.segment.insert(trace.segment.end(), static_cast<std::size_t>(whole), si);
  }
  trace.counts.assign(trace.segment.size(), 0);
  simulate_schedule(
      ensemble.n_emitters, ensemble.rates, detection, schedule, seed,
      [&](std::span<const PhotonRecord> chunk) {
        for (const auto& r : chunk) {
          const auto b = static_cast<std::size_t>(static_cast<std::int64_t>(r.t_ps) / bin_ps);
          if (b < trace.counts.size()) ++trace.counts[b];
        }
      },
      options);
  return trace;
}

OccupancyStats simulate_occupancy(const TransitionRatesd& rates, const Excitationd& exc,
                                  double duration_ns, std::uint64_t seed) {
  validate(rates);
  validate(exc);
  require(std::isfinite(duration_ns) && duration_ns > 0, Errc::kInvalidArgument,
          "duration must be > 0");
  const SegmentRates r = segment_rates(rates, exc, 0.0);
  Engine rng(derive_seed(seed, kSeedEmitter, 0));
  const auto pop = steady_state(rates, exc);
  const double u0 = open_uniform(rng);
  int level = u0 < pop.n1 ? 1 : (u0 < pop.n1 + pop.n2 ? 2 : 3);
  OccupancyStats stats;
  const double k2 = r.k21 + r.k23;
  double t = 0;
  while (t < duration_ns) {
    const double rate = level == 1 ? r.k12 : (level == 2 ? k2 : r.k31);
    double dwell = rate > 0 ? -std::log(open_uniform(rng)) / rate
                            : std::numeric_limits<double>::infinity();
    if (t + dwell >= duration_ns) {
      stats.time_ns[level - 1] += duration_ns - t;
      break;
    }
    stats.time_ns[level - 1] += dwell;
    t += dwell;
    ++stats.transitions;
    if (level == 1) {
      level = 2;
    } else if (level == 2) {
      if (open_uniform(rng) * k2 < r.k21) {
        level = 1;
        ++stats.emissions;
      } else {
        level = 3;
      }
    } else {
      level = 1;
    }
  }
  return stats;
}

DecayHistogram simulate_decay_histogram(double tau_obs_ns, const PulseConfig& pulse,
                                        std::uint64_t n_photons, double background_fraction,
                                        std::uint64_t seed, double bin_width_ps) {
  validate(pulse);
  require(std::isfinite(tau_obs_ns) && tau_obs_ns > 0, Errc::kInvalidArgument,
          "tau_obs must be > 0");
  require(n_photons >= 1, Errc::kInvalidArgument, "n_photons must be >= 1");
  require(background_fraction >= 0 && background_fraction < 1, Errc::kInvalidArgument,
          "background_fraction must be in [0, 1)");
  require(std::isfinite(bin_width_ps) && bin_width_ps > 0, Errc::kInvalidArgument,
          "bin_width_ps must be > 0");
  DecayHistogram h;
  h.bin_width_ps = bin_width_ps;
  h.irf_sigma_ps = pulse.irf_sigma_ps;
  h.pulse_offset_ns = pulse.pulse_offset_ns;
  const double window_ps = pulse.window_ns * 1e3;
  const auto n_bins = static_cast<std::size_t>(std::floor(window_ps / bin_width_ps + 1e-9));
  require(n_bins >= 1, Errc::kInvalidArgument, "decay window shorter than one bin");
  h.counts.assign(n_bins, 0);
  const double period_ps = pulse.period_ns() * 1e3;
  const double span_ps = static_cast<double>(n_bins) * bin_width_ps;

  Engine rng(derive_seed(seed, kSeedDecay, 0));
  std::exponential_distribution<double> delay(1.0 / (tau_obs_ns * 1e3));
  std::normal_distribution<double> irf(0.0, 1.0);
  std::uint64_t placed = 0;
  while (placed < n_photons) {
    double t;
    if (background_fraction > 0 && open_uniform(rng) < background_fraction) {
      t = open_uniform(rng) * period_ps;
    } else {
      t = pulse.pulse_offset_ns * 1e3 + delay(rng);
      if (pulse.irf_sigma_ps > 0) t += pulse.irf_sigma_ps * irf(rng);
      t = std::fmod(t, period_ps);
      if (t < 0) t += period_ps;
    }
    if (t >= span_ps) continue;  // outside the recorded window
    ++h.counts[static_cast<std::size_t>(t / bin_width_ps)];
    ++placed;
  }
  h.acquisition_time_s =
      static_cast<double>(n_photons) / (pulse.rep_rate_mhz * 1e6 * pulse.pulse_energy_scale);
  return h;
}

}  // namespace sivsim
