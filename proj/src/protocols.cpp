#include "sivsim/protocols.hpp"

#include <algorithm>
#include <cmath>

#include "sivsim/random.hpp"

namespace sivsim {

TransitionRatesd apply_capture_factor(TransitionRatesd rates, double factor) {
  require(std::isfinite(factor) && factor > 0, Errc::kInvalidArgument,
          "capture factor must be > 0");
  rates.k23_0 *= factor;
  return rates;
}

namespace {

std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    g[static_cast<std::size_t>(i)] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  return g;
}

void check_grid(const std::vector<double>& grid, const char* what) {
  require(!grid.empty(), Errc::kInvalidArgument, std::string(what) + " grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(std::isfinite(grid[i]) && grid[i] >= 0, Errc::kInvalidArgument,
            std::string(what) + " grid values must be >= 0");
    if (i > 0)
      require(grid[i] >= grid[i - 1], Errc::kInvalidArgument,
              std::string(what) + " grid must be nondecreasing");
  }
}

struct CountRate {
  double kcps;
  double sigma;
};

// Monte carlo count rate at constant excitation, background subtracted.
CountRate measure_rate(const TransitionRatesd& rates, int n_emitters, const Excitationd& exc,
                       const DetectionConfig& detection, double duration_s, std::uint64_t seed) {
  std::uint64_t n = 0;
  simulate_schedule(n_emitters, rates, detection, ExcitationSchedule{{{duration_s, exc}}}, seed,
                    [&](std::span<const PhotonRecord> chunk) { n += chunk.size(); });
  const double counts = static_cast<double>(n);
  return {(counts / duration_s - 2 * detection.background_rate) * 1e-3,
          std::sqrt(std::max(counts, 1.0)) / duration_s * 1e-3};
}

}  // namespace

void validate(const SweepSpec& s) {
  check_grid(s.grid, "sweep");
  require(std::isfinite(s.fixed_power) && s.fixed_power >= 0, Errc::kInvalidArgument,
          "fixed_power must be >= 0");
  require(s.n_emitters >= 1, Errc::kInvalidArgument, "n_emitters must be >= 1");
  if (s.mode == SweepMode::kMonteCarlo)
    require(std::isfinite(s.time_per_point_s) && s.time_per_point_s > 0,
            Errc::kInvalidArgument, "time_per_point_s must be > 0");
}

DataSeries run_saturation_sweep(const TransitionRatesd& rates, const SweepSpec& spec,
                                const DetectionConfig& detection, std::uint64_t seed) {
  validate(rates);
  validate(spec);
  validate(detection);
  DataSeries out;
  for (std::size_t i = 0; i < spec.grid.size(); ++i) {
    const double p = spec.grid[i];
    const Excitationd exc = channel_excitation(spec.channel, p, spec.fixed_power);
    out.x.push_back(p);
    if (spec.mode == SweepMode::kAnalytic) {
      out.y.push_back(detected_kcps(emission_rate(rates, exc), spec.n_emitters,
                                    detection.efficiency));
    } else {
      const auto m = measure_rate(rates, spec.n_emitters, exc, detection, spec.time_per_point_s,
                                  derive_seed(seed, kSeedGridPoint, i));
      out.y.push_back(m.kcps);
      out.sigma.push_back(m.sigma);
    }
  }
  return out;
}

CrgeTraceResult run_crge_trace(const TransitionRatesd& rates, const CrgeTraceSpec& spec,
                               const DetectionConfig& detection, std::uint64_t seed) {
  require(spec.n_cycles >= 1, Errc::kInvalidArgument, "n_cycles must be >= 1");
  require(std::isfinite(spec.segment_s) && spec.segment_s > 0, Errc::kInvalidArgument,
          "segment_s must be > 0");
  require(spec.p_re > 0, Errc::kZeroPump, "trace needs a nonzero red power");
  ExcitationSchedule schedule;
  for (int c = 0; c < spec.n_cycles; ++c) {
    schedule.segments.push_back({spec.segment_s, {spec.p_re, 0.0}});
    schedule.segments.push_back({spec.segment_s, {spec.p_re, spec.p_ge}});
  }
  EmitterEnsemble ens{spec.n_emitters, rates, {spec.p_re, 0.0}};
  SimulationOptions opt;
  opt.method = spec.method;
  CrgeTraceResult res;
  res.trace = simulate_time_trace(ens, detection, schedule, spec.bin_width_ms, seed, opt);

  // Per segment parity, sum the counts of the bins after the transient.
  double sum[2] = {0, 0}, bins[2] = {0, 0};
  const auto& seg = res.trace.segment;
  std::size_t start = 0;
  while (start < seg.size()) {
    std::size_t end = start;
    while (end < seg.size() && seg[end] == seg[start]) ++end;
    const std::size_t skip = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(end - start)));
    const int kind = static_cast<int>(seg[start] % 2);
    for (std::size_t b = start + skip; b < end; ++b) {
      sum[kind] += static_cast<double>(res.trace.counts[b]);
      bins[kind] += 1;
    }
    start = end;
  }
  require(bins[0] > 0 && bins[1] > 0, Errc::kInvalidArgument,
          "segments too short to leave bins after the transient");
  const double bin_s = spec.bin_width_ms * 1e-3;
  const double bg = 2 * detection.background_rate;
  auto rate = [&](int k) { return (sum[k] / (bins[k] * bin_s) - bg) * 1e-3; };
  res.i_re = rate(0);
  res.i_crge = rate(1);
  res.delta_i = res.i_crge - res.i_re;
  res.eta = res.delta_i / res.i_re;
  // Poisson errors on both means, propagated through (I_c - I_r)/I_r.
  const double s_re = std::sqrt(std::max(sum[0], 1.0)) / (bins[0] * bin_s) * 1e-3;
  const double s_cr = std::sqrt(std::max(sum[1], 1.0)) / (bins[1] * bin_s) * 1e-3;
  res.eta_stderr = std::hypot(s_cr / res.i_re, res.i_crge * s_re / (res.i_re * res.i_re));
  res.eta_analytic = enhancement_factor(rates, spec.p_re, spec.p_ge);
  return res;
}

std::vector<GeLevelResult> run_ge_power_sweep(const TransitionRatesd& rates,
                                              const GeSweepSpec& spec,
                                              const DetectionConfig& detection,
                                              std::uint64_t seed) {
  validate(rates);
  validate(detection);
  require(!spec.p_re_levels.empty(), Errc::kInvalidArgument, "no RE levels given");
  check_grid(spec.p_ge_grid, "GE");
  std::vector<GeLevelResult> out;
  for (std::size_t li = 0; li < spec.p_re_levels.size(); ++li) {
    const double p_re = spec.p_re_levels[li];
    require(std::isfinite(p_re) && p_re > 0, Errc::kZeroPump, "RE levels must be > 0");
    GeLevelResult lvl;
    lvl.p_re = p_re;
    const std::uint64_t level_seed = derive_seed(seed, kSeedGridPoint, 1000 + li);
    auto measure = [&](double p_ge, std::size_t idx) -> CountRate {
      const Excitationd exc{p_re, p_ge};
      if (spec.mode == SweepMode::kAnalytic)
        return {detected_kcps(emission_rate(rates, exc), spec.n_emitters, detection.efficiency),
                0.0};
      return measure_rate(rates, spec.n_emitters, exc, detection, spec.time_per_point_s,
                          derive_seed(level_seed, kSeedGridPoint, idx));
    };
    const CountRate base = measure(0.0, spec.p_ge_grid.size());
    lvl.i_re = base.kcps;
    DataSeries crge;
    for (std::size_t i = 0; i < spec.p_ge_grid.size(); ++i) {
      const double p_ge = spec.p_ge_grid[i];
      const CountRate m = p_ge == 0 ? base : measure(p_ge, i);
      crge.x.push_back(p_ge);
      crge.y.push_back(m.kcps);
      lvl.delta_i.x.push_back(p_ge);
      lvl.delta_i.y.push_back(m.kcps - base.kcps);
      lvl.eta.push_back(base.kcps != 0 ? (m.kcps - base.kcps) / base.kcps : 0.0);
      if (spec.mode == SweepMode::kMonteCarlo) {
        const double s = p_ge == 0 ? 0.0 : std::hypot(m.sigma, base.sigma);
        crge.sigma.push_back(std::max(s, base.sigma));
        lvl.delta_i.sigma.push_back(crge.sigma.back());
      }
    }
    lvl.fit = fit_shifted_saturation(crge, base.kcps);
    out.push_back(std::move(lvl));
  }
  return out;
}

double eta_plateau_onset(const TransitionRatesd& rates, double p_re) {
  require(p_re > 0, Errc::kZeroPump, "plateau onset needs p_re > 0");
  DataSeries d;
  const double base = emission_rate(rates, Excitationd{p_re, 0.0});
  for (double p : log_grid(0.002, 2.0, 60)) {
    d.x.push_back(p);
    d.y.push_back(emission_rate(rates, Excitationd{p_re, p}) - base);
  }
  return 9 * fit_saturation(d).params.p_sat;
}

// Concentration ------------------------------------------------------------

ConcentrationTable run_concentration_sweep(const TransitionRatesd& base,
                                           const std::vector<double>& c_grid,
                                           const Excitationd& exc,
                                           const ConcentrationScaling<double>& scaling,
                                           const std::vector<double>& sat_grid) {
  require(!c_grid.empty(), Errc::kInvalidArgument, "concentration grid is empty");
  require(scaling.kappa > 0 && scaling.p0 > 0, Errc::kInvalidArgument,
          "concentration scaling constants must be > 0");
  validate(exc);
  ConcentrationTable t;
  t.exc = exc;
  t.sat_grid = sat_grid;
  for (double c : c_grid) {
    const TransitionRatesd r = rates_at_concentration(base, c, scaling);
    t.rows.push_back({c, r.k23_0, r.p_ns0, enhancement_factor(r, exc.p_re, exc.p_ge),
                      emission_rate(r, Excitationd{exc.p_re, 0.0}), emission_rate(r, exc)});
    std::vector<double> curve;
    for (double p : sat_grid) curve.push_back(emission_rate(r, Excitationd{p, exc.p_ge}));
    t.sat_curves.push_back(std::move(curve));
  }
  return t;
}

EtaPeak eta_concentration_peak(const TransitionRatesd& base, const Excitationd& exc,
                               const ConcentrationScaling<double>& scaling, double c_lo,
                               double c_hi) {
  require(c_lo > 0 && c_hi > c_lo, Errc::kInvalidArgument, "bad concentration bracket");
  auto eta = [&](double lc) {
    return eta_vs_concentration(base, std::exp(lc), exc, scaling);
  };
  // Coarse scan picks the bracket, golden section refines it.
  const auto grid = log_grid(c_lo, c_hi, 81);
  std::size_t best = 0;
  double best_eta = -1;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double e = eta(std::log(grid[i]));
    if (e > best_eta) {
      best_eta = e;
      best = i;
    }
  }
  double a = std::log(grid[best == 0 ? 0 : best - 1]);
  double b = std::log(grid[std::min(best + 1, grid.size() - 1)]);
  const double phi = (std::sqrt(5.0) - 1) / 2;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = eta(x1), f2 = eta(x2);
  for (int i = 0; i < 100 && b - a > 1e-10; ++i) {
    if (f1 > f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = eta(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = eta(x2);
    }
  }
  const double lc = 0.5 * (a + b);
  return {std::exp(lc), eta(lc)};
}

ScalingCalibration calibrate_concentration_scaling(const TransitionRatesd& base,
                                                   const Excitationd& exc, double peak_ppm,
                                                   double low_ppm, double low_eta,
                                                   ConcentrationScaling<double> init) {
  require(peak_ppm > 0 && low_ppm > 0 && low_eta > 0, Errc::kInvalidArgument,
          "scaling targets must be > 0");
  auto residual = [&](const Eigen::VectorXd& q, double x) {
    const ConcentrationScaling<double> s{q[0], q[1]};
    if (x < 0.5)
      return 3 * std::log(eta_concentration_peak(base, exc, s).ppm / peak_ppm);
    return std::log(eta_vs_concentration(base, low_ppm, exc, s) / low_eta);
  };
  DataSeries d{{0.0, 1.0}, {0.0, 0.0}, {}};
  LmOptions opt;
  opt.positive = {true, true};
  opt.chi2_floor = 1e-16;
  ScalingCalibration out;
  out.fit = levenberg_marquardt(residual, d, Eigen::Vector2d(init.kappa, init.p0), opt);
  out.scaling = {out.fit.params[0], out.fit.params[1]};
  out.peak = eta_concentration_peak(base, exc, out.scaling);
  return out;
}

// Lifetime ----------------------------------------------------------------

void validate(const LifetimeSweepSpec& s) {
  require(!s.wavelengths_nm.empty(), Errc::kInvalidArgument, "no wavelengths given");
  for (double w : s.wavelengths_nm)
    require(std::isfinite(w) && w >= 500 && w <= 700, Errc::kInvalidArgument,
            "wavelengths must lie in 500-700 nm");
  require(s.e_th_ev > 0, Errc::kInvalidArgument, "E_th must be > 0");
  require(s.width_ev > 0, Errc::kInvalidArgument, "width must be > 0");
  require(s.knr_max >= 0 && s.k_r > 0, Errc::kInvalidArgument, "rates must be positive");
}

double nonradiative_rate(const LifetimeSweepSpec& spec, double energy_ev) {
  return spec.knr_max / (1 + std::exp(-(energy_ev - spec.e_th_ev) / spec.width_ev));
}

double lifetime_ns(const LifetimeSweepSpec& spec, double wavelength_nm) {
  return 1 / (spec.k_r + nonradiative_rate(spec, kPhotonEnergyNm / wavelength_nm));
}

double knr_max_for_ratio(const LifetimeSweepSpec& spec, double short_nm, double long_nm,
                         double ratio) {
  require(ratio > 0 && ratio < 1, Errc::kInvalidArgument, "ratio must be in (0, 1)");
  LifetimeSweepSpec s = spec;
  auto f = [&](double k) {
    s.knr_max = k;
    return lifetime_ns(s, short_nm) / lifetime_ns(s, long_nm) - ratio;
  };
  double lo = 0, hi = spec.k_r;
  while (f(hi) > 0) hi *= 2;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<LifetimeRow> run_lifetime_sweep(const LifetimeSweepSpec& spec_in,
                                            const PulseConfig& pulse, std::uint64_t n_photons,
                                            std::uint64_t seed, double background_fraction) {
  LifetimeSweepSpec spec = spec_in;
  validate(spec);
  if (spec.knr_max == 0) spec.knr_max = knr_max_for_ratio(spec, 550, 640, 0.91);
  std::vector<LifetimeRow> rows;
  for (std::size_t i = 0; i < spec.wavelengths_nm.size(); ++i) {
    const double lam = spec.wavelengths_nm[i];
    const double tau = lifetime_ns(spec, lam);
    const DecayHistogram h = simulate_decay_histogram(tau, pulse, n_photons, background_fraction,
                                                      derive_seed(seed, kSeedGridPoint, i));
    const DecayFit f = fit_decay(h);
    rows.push_back({lam, kPhotonEnergyNm / lam, tau, f.tau_ns, f.fit.stderr_[0]});
  }
  return rows;
}

// Calibration ---------------------------------------------------------------

void validate(const CalibrationTargets& t) {
  for (double v : {t.psat_re, t.psat_ge, t.crge_gain, t.ge_halfway_power, t.gain_p_ge,
                   t.halfway_p_re})
    require(std::isfinite(v) && v > 0, Errc::kInvalidArgument,
            "calibration targets must be > 0");
  if (t.ge_re_ratio)
    require(*t.ge_re_ratio > 0, Errc::kInvalidArgument, "ge_re_ratio must be > 0");
  for (double w : {t.w_psat_re, t.w_psat_ge, t.w_gain, t.w_halfway, t.w_ratio})
    require(std::isfinite(w) && w >= 0, Errc::kInvalidArgument, "weights must be >= 0");
}

CalibrationObservables forward_observables(const TransitionRatesd& r,
                                           const CalibrationTargets& t) {
  const auto re = saturation_params(r, Channel::kRed);
  const auto ge = saturation_params(r, Channel::kGreen);
  return {re.p_sat, ge.p_sat, saturation_gain(r, t.gain_p_ge),
          enhancement_halfway_power(r, t.halfway_p_re), ge.i_inf / re.i_inf};
}

namespace {

double* field(TransitionRatesd& r, unsigned bit) {
  switch (bit) {
    case kFieldK21: return &r.k21;
    case kFieldK23_0: return &r.k23_0;
    case kFieldK31: return &r.k31;
    case kFieldSigmaRe: return &r.sigma_re;
    case kFieldSigmaGe: return &r.sigma_ge;
    case kFieldPNs0: return &r.p_ns0;
    case kFieldPReStar: return &r.p_re_star;
  }
  return nullptr;
}

}  // namespace

CalibrationResult calibrate(const CalibrationTargets& targets, unsigned free,
                            const TransitionRatesd& start) {
  validate(targets);
  validate(start);
  std::vector<unsigned> bits;
  for (unsigned b = 1; b <= kFieldPReStar; b <<= 1)
    if (free & b) bits.push_back(b);
  require(!bits.empty(), Errc::kInvalidArgument, "no free calibration parameters");

  // Residual i: w_i log(observable_i / target_i) for each active target.
  struct Term {
    int which;
    double target;
    double weight;
  };
  std::vector<Term> terms;
  auto add = [&](int which, double target, double w) {
    if (w > 0) terms.push_back({which, target, w});
  };
  add(0, targets.psat_re, targets.w_psat_re);
  add(1, targets.psat_ge, targets.w_psat_ge);
  add(2, targets.crge_gain, targets.w_gain);
  add(3, targets.ge_halfway_power, targets.w_halfway);
  if (targets.ge_re_ratio) add(4, *targets.ge_re_ratio, targets.w_ratio);
  require(terms.size() >= bits.size(), Errc::kInvalidArgument,
          "fewer calibration targets than free parameters");

  auto build = [&](const Eigen::VectorXd& q) {
    TransitionRatesd r = start;
    for (std::size_t j = 0; j < bits.size(); ++j) *field(r, bits[j]) = q[static_cast<Eigen::Index>(j)];
    return r;
  };
  auto model = [&](const Eigen::VectorXd& q, double x) {
    const Term& term = terms[static_cast<std::size_t>(x)];
    const auto obs = forward_observables(build(q), targets);
    const double v[5] = {obs.psat_re, obs.psat_ge, obs.crge_gain, obs.ge_halfway_power,
                         obs.ge_re_ratio};
    return term.weight * std::log(v[term.which] / term.target);
  };
  DataSeries d;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    d.x.push_back(static_cast<double>(i));
    d.y.push_back(0.0);
  }
  Eigen::VectorXd q0(static_cast<Eigen::Index>(bits.size()));
  TransitionRatesd s = start;
  for (std::size_t j = 0; j < bits.size(); ++j) q0[static_cast<Eigen::Index>(j)] = *field(s, bits[j]);
  LmOptions opt;
  opt.positive.assign(bits.size(), true);
  opt.chi2_floor = 1e-20;
  CalibrationResult res;
  res.fit = levenberg_marquardt(model, d, q0, opt);
  res.rates = build(res.fit.params);
  res.observables = forward_observables(res.rates, targets);
  res.non_identifiable = res.fit.rank_deficient;
  return res;
}

}  // namespace sivsim
