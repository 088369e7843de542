#include "sivsim/correlation.hpp"

#include <algorithm>

namespace sivsim {

G2Accumulator::G2Accumulator(double bin_width_ns, double max_tau_ns) {
  require(std::isfinite(bin_width_ns) && bin_width_ns > 0, Errc::kInvalidArgument,
          "bin_width must be > 0");
  require(std::isfinite(max_tau_ns) && max_tau_ns >= bin_width_ns, Errc::kInvalidArgument,
          "max_tau must be >= bin_width");
  bin_ps_ = bin_width_ns * 1e3;
  half_bins_ = static_cast<std::int64_t>(std::llround(max_tau_ns / bin_width_ns));
  reach_ps_ = static_cast<std::int64_t>(std::ceil((static_cast<double>(half_bins_) + 0.5) * bin_ps_));
  counts_.assign(static_cast<std::size_t>(2 * half_bins_ + 1), 0);
}

void G2Accumulator::add(std::span<const PhotonRecord> records) {
  for (const auto& r : records) add(r);
}

void G2Accumulator::add(const PhotonRecord& r) {
  const auto t = static_cast<std::int64_t>(r.t_ps);
  if (!any_) {
    first_ = r.t_ps;
    any_ = true;
  }
  last_ = r.t_ps;
  const int self = static_cast<int>(r.channel);
  const int other = 1 - self;
  auto& partners = recent_[other];
  while (!partners.empty() && t - partners.front() > reach_ps_) partners.pop_front();
  // tau = t_B - t_A: positive when B arrives later.
  const double sign = self == 1 ? 1.0 : -1.0;
  for (const std::int64_t tp : partners) {
    const double tau = sign * static_cast<double>(t - tp);
    const auto k = static_cast<std::int64_t>(std::floor(tau / bin_ps_ + 0.5));
    if (k >= -half_bins_ && k <= half_bins_) ++counts_[static_cast<std::size_t>(k + half_bins_)];
  }
  auto& mine = recent_[self];
  while (!mine.empty() && t - mine.front() > reach_ps_) mine.pop_front();
  mine.push_back(t);
  ++n_[self];
}

G2Histogram G2Accumulator::finish(double duration_s) const {
  require(n_[0] > 0, Errc::kEmptyChannel, "channel A has no events");
  require(n_[1] > 0, Errc::kEmptyChannel, "channel B has no events");
  if (duration_s <= 0) duration_s = static_cast<double>(last_ - first_) * 1e-12;
  require(duration_s > 0, Errc::kInvalidArgument, "acquisition time must be > 0");
  G2Histogram h;
  h.bin_width_ns = bin_ps_ * 1e-3;
  h.acquisition_time_s = duration_s;
  h.rate_a = static_cast<double>(n_[0]) / duration_s;
  h.rate_b = static_cast<double>(n_[1]) / duration_s;
  h.raw_coincidences = counts_;
  const double w = bin_ps_ * 1e-12;
  for (std::int64_t k = -half_bins_; k <= half_bins_; ++k) {
    const double tau_s = static_cast<double>(k) * w;
    const double overlap = std::max(duration_s - std::abs(tau_s), 0.0);
    const double expected = h.rate_a * h.rate_b * w * overlap;
    const double c = static_cast<double>(counts_[static_cast<std::size_t>(k + half_bins_)]);
    h.taus_ns.push_back(static_cast<double>(k) * h.bin_width_ns);
    h.values.push_back(expected > 0 ? c / expected : 0.0);
    h.errors.push_back(expected > 0 ? std::sqrt(std::max(c, 1.0)) / expected : 0.0);
  }
  return h;
}

G2Histogram estimate_g2(const PhotonStream& stream, double bin_width_ns, double max_tau_ns) {
  G2Accumulator acc(bin_width_ns, max_tau_ns);
  acc.add(std::span<const PhotonRecord>(stream.records));
  return acc.finish(static_cast<double>(stream.duration_ps) * 1e-12);
}

}  // namespace sivsim
