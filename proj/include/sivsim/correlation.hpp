#pragma once

// Second-order intensity correlation: a streaming start-stop estimator for
// two-detector timestamp data and the analytic three-level model.

#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "sivsim/mc.hpp"
#include "sivsim/rates.hpp"

namespace sivsim {

struct G2Histogram {
  double bin_width_ns = 0;
  std::vector<double> taus_ns;           // bin centers, symmetric around 0
  std::vector<double> values;            // normalized g2
  std::vector<double> errors;            // Poisson standard error of values
  std::vector<std::uint64_t> raw_coincidences;
  double acquisition_time_s = 0;
  double rate_a = 0;  // counts/s
  double rate_b = 0;
};

/// g2(tau) = 1 - (1 + a) exp(-|tau|/tau1) + a exp(-|tau|/tau2).
template <typename Scalar = double>
struct G2ModelParams {
  Scalar a;
  Scalar tau1;  // ns
  Scalar tau2;  // ns
};

using G2ModelParamsd = G2ModelParams<double>;

template <typename Scalar>
Scalar g2_model(const G2ModelParams<Scalar>& p, Scalar tau) {
  using std::abs;
  using std::exp;
  const Scalar t = abs(tau);
  return Scalar(1) - (Scalar(1) + p.a) * exp(-t / p.tau1) + p.a * exp(-t / p.tau2);
}

/// Long-delay form 1 + a exp(-|tau|/tau2).
template <typename Scalar>
Scalar g2_bunching_model(const G2ModelParams<Scalar>& p, Scalar tau) {
  using std::abs;
  using std::exp;
  return Scalar(1) + p.a * exp(-abs(tau) / p.tau2);
}

/// a = k12 k23 / (k31 (k12 + k21)), tau2 = 1 / (k31 + k12 k23 / (k12 + k21)),
/// tau1 = 1 / (k12 + k21). The tau1 expression is the two-level pumping
/// result and is only accurate while k23 << k21.
template <typename Scalar>
G2ModelParams<Scalar> g2_from_rates(const TransitionRates<Scalar>& r,
                                    const Excitation<Scalar>& e) {
  const Scalar k12 = pump_rate(r, e);
  require(k12 > Scalar(0), Errc::kZeroPump, "g2 model needs nonzero excitation");
  const Scalar k23 = effective_capture_rate(r, e);
  const Scalar s = k12 + r.k21;
  G2ModelParams<Scalar> p;
  p.a = k12 * k23 / (r.k31 * s);
  p.tau1 = Scalar(1) / s;
  p.tau2 = Scalar(1) / (r.k31 + k12 * k23 / s);
  return p;
}

/// g2 of n identical independent emitters with signal fraction rho = S/(S+B):
/// 1 + rho^2 (g2_1 - 1) / n.
template <typename Scalar>
Scalar scale_for_n_emitters(Scalar g2_single, int n, Scalar rho = Scalar(1)) {
  require(n >= 1, Errc::kInvalidArgument, "n must be >= 1");
  return Scalar(1) + rho * rho * (g2_single - Scalar(1)) / Scalar(n);
}

template <typename Scalar>
Scalar g2_model_n(const G2ModelParams<Scalar>& p, Scalar tau, int n,
                  Scalar rho = Scalar(1)) {
  return scale_for_n_emitters(g2_model(p, tau), n, rho);
}

/// Signal fraction for one detector pair given per-channel signal and
/// background rates (same units).
inline double signal_fraction(double signal_rate, double background_rate) {
  require(signal_rate >= 0 && background_rate >= 0 && signal_rate + background_rate > 0,
          Errc::kInvalidArgument, "rates must be >= 0 and not both zero");
  return signal_rate / (signal_rate + background_rate);
}

/// Streaming coincidence counter. Records must arrive in global time order;
/// each A/B pair within +-max_tau is counted once, when its later member
/// arrives, as tau = t_B - t_A.
class G2Accumulator {
 public:
  G2Accumulator(double bin_width_ns, double max_tau_ns);

  void add(std::span<const PhotonRecord> records);
  void add(const PhotonRecord& r);

  /// Normalize against counts accumulated so far over `duration_s`. If
  /// duration_s is 0, the span between first and last record is used.
  G2Histogram finish(double duration_s = 0) const;

  std::uint64_t count_a() const { return n_[0]; }
  std::uint64_t count_b() const { return n_[1]; }

 private:
  double bin_ps_;
  std::int64_t half_bins_;
  std::int64_t reach_ps_;  // largest |tau| that lands in a bin
  std::deque<std::int64_t> recent_[2];
  std::vector<std::uint64_t> counts_;
  std::uint64_t n_[2] = {0, 0};
  std::uint64_t first_ = 0, last_ = 0;
  bool any_ = false;
};

/// Bins of width bin_width_ns centered on k * bin_width_ns for |k| up to
/// round(max_tau / bin_width). Throws EmptyChannel if a channel is empty.
G2Histogram estimate_g2(const PhotonStream& stream, double bin_width_ns, double max_tau_ns);

}  // namespace sivsim
