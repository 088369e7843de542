#pragma once

// Closed-form three-level model of an SiV- emitter with a nitrogen-mediated
// shelving level:
//
//   |1> --k12--> |2> --k21--> |1>   (radiative, photon per transition)
//                |2> --k23--> |3> --k31--> |1>
//
// k12 = sigma_re * P_re + sigma_ge * P_ge is the optical pump.
// k23 = k23_0 * f_ge(P_ge) * f_re(P_re) is the capture rate into the dark
// state, with f_ge = 1 / (1 + P_ge / P_ns0) and f_re = 1 + P_re / P_re_star.
//
// Rates are in 1/ns, powers in mW. Everything here is a pure function of its
// arguments and is templated on the scalar type.

#include <cmath>
#include <string>

#include "sivsim/error.hpp"

namespace sivsim {

template <typename Scalar = double>
struct TransitionRates {
  Scalar k21;        // radiative decay |2> -> |1>
  Scalar k23_0;      // capture rate into |3> without illumination
  Scalar k31;        // de-shelving |3> -> |1>
  Scalar sigma_re;   // red pump constant, 1/(ns mW)
  Scalar sigma_ge;   // green pump constant, 1/(ns mW)
  Scalar p_ns0;      // GE power ionizing half the donors, mW
  Scalar p_re_star;  // RE power scale of capture enhancement, mW
};

template <typename Scalar = double>
struct Excitation {
  Scalar p_re{0};
  Scalar p_ge{0};
};

template <typename Scalar = double>
struct Populations {
  Scalar n1;
  Scalar n2;
  Scalar n3;
};

template <typename Scalar = double>
struct SaturationParams {
  Scalar i_inf;
  Scalar p_sat;
  Scalar k_bg;
};

/// Which optical power is swept in a saturation measurement. kCombined sweeps
/// the red power on top of a fixed green admixture.
enum class Channel { kRed, kGreen, kCombined };

using TransitionRatesd = TransitionRates<double>;
using Excitationd = Excitation<double>;

template <typename Scalar>
void validate(const TransitionRates<Scalar>& r) {
  auto check = [](Scalar v, const char* name) {
    using std::isfinite;
    require(isfinite(v) && v > Scalar(0), Errc::kInvalidArgument,
            std::string("transition rate field '") + name +
                "' must be positive and finite");
  };
  check(r.k21, "k21");
  check(r.k23_0, "k23_0");
  check(r.k31, "k31");
  check(r.sigma_re, "sigma_re");
  check(r.sigma_ge, "sigma_ge");
  check(r.p_ns0, "p_ns0");
  check(r.p_re_star, "p_re_star");
}

template <typename Scalar>
void validate(const Excitation<Scalar>& e) {
  using std::isfinite;
  require(isfinite(e.p_re) && e.p_re >= Scalar(0) && isfinite(e.p_ge) &&
              e.p_ge >= Scalar(0),
          Errc::kInvalidArgument, "excitation powers must be finite and >= 0");
}

template <typename Scalar>
Scalar effective_capture_rate(const TransitionRates<Scalar>& r,
                              const Excitation<Scalar>& e) {
  const Scalar f_ge = Scalar(1) / (Scalar(1) + e.p_ge / r.p_ns0);
  const Scalar f_re = Scalar(1) + e.p_re / r.p_re_star;
  return r.k23_0 * f_ge * f_re;
}

template <typename Scalar>
Scalar pump_rate(const TransitionRates<Scalar>& r, const Excitation<Scalar>& e) {
  return r.sigma_re * e.p_re + r.sigma_ge * e.p_ge;
}

/// Stationary level populations. Uses the common-denominator form of the
/// balance solution so the three entries sum to one to rounding.
template <typename Scalar>
Populations<Scalar> steady_state(const TransitionRates<Scalar>& r,
                                 const Excitation<Scalar>& e) {
  const Scalar k12 = pump_rate(r, e);
  if (k12 <= Scalar(0)) return {Scalar(1), Scalar(0), Scalar(0)};
  const Scalar k23 = effective_capture_rate(r, e);
  const Scalar w1 = r.k31 * (r.k21 + k23);
  const Scalar w2 = k12 * r.k31;
  const Scalar w3 = k12 * k23;
  const Scalar total = w1 + w2 + w3;
  return {w1 / total, w2 / total, w3 / total};
}

template <typename Scalar>
struct EmissionRate {
  Scalar value;    // photons/ns per emitter
  bool zero_pump;  // both powers zero: emitter dark, value is 0
};

/// Dual-color intensity law I = k21 / (1 + (k21 + k23)/k12 + k23/k31).
template <typename Scalar>
EmissionRate<Scalar> emission(const TransitionRates<Scalar>& r,
                              const Excitation<Scalar>& e) {
  const Scalar k12 = pump_rate(r, e);
  if (k12 <= Scalar(0)) return {Scalar(0), true};
  const Scalar k23 = effective_capture_rate(r, e);
  return {r.k21 / (Scalar(1) + (r.k21 + k23) / k12 + k23 / r.k31), false};
}

template <typename Scalar>
Scalar emission_rate(const TransitionRates<Scalar>& r,
                     const Excitation<Scalar>& e) {
  return emission(r, e).value;
}

/// Excitation at power `p` on `channel`; `fixed_ge` is the green admixture for
/// kCombined and ignored otherwise.
template <typename Scalar>
Excitation<Scalar> channel_excitation(Channel channel, Scalar p,
                                      Scalar fixed_ge = Scalar(0)) {
  switch (channel) {
    case Channel::kRed:
      return {p, Scalar(0)};
    case Channel::kGreen:
      return {Scalar(0), p};
    case Channel::kCombined:
      return {p, fixed_ge};
  }
  return {};
}

/// I_inf = k21 / (1 + k23/k31), P_sat = ((k21 + k23)/sigma) / (1 + k23/k31),
/// with k23 frozen at `eval_power` on the chosen channel. For kCombined the
/// swept power is red, so sigma = sigma_re.
template <typename Scalar>
SaturationParams<Scalar> saturation_params(const TransitionRates<Scalar>& r,
                                           Channel channel, Scalar eval_power,
                                           Scalar fixed_ge = Scalar(0)) {
  require(eval_power >= Scalar(0), Errc::kInvalidArgument,
          "eval_power must be >= 0");
  const Scalar k23 =
      effective_capture_rate(r, channel_excitation(channel, eval_power, fixed_ge));
  const Scalar sigma = channel == Channel::kGreen ? r.sigma_ge : r.sigma_re;
  const Scalar shelve = Scalar(1) + k23 / r.k31;
  return {r.k21 / shelve, ((r.k21 + k23) / sigma) / shelve, Scalar(0)};
}

/// Default freezing point: the zero-power P_sat estimate, iterated once.
template <typename Scalar>
SaturationParams<Scalar> saturation_params(const TransitionRates<Scalar>& r,
                                           Channel channel) {
  const Scalar first = saturation_params(r, channel, Scalar(0)).p_sat;
  return saturation_params(r, channel, first);
}

template <typename Scalar>
Scalar saturation_curve(const SaturationParams<Scalar>& s, Scalar p) {
  return p * s.i_inf / (p + s.p_sat) + s.k_bg * p;
}

/// Relative count-rate gain under combined excitation, (I_crge - I_re)/I_re.
template <typename Scalar>
Scalar enhancement_factor(const TransitionRates<Scalar>& r, Scalar p_re,
                          Scalar p_ge) {
  require(p_re > Scalar(0), Errc::kZeroPump,
          "enhancement factor needs a nonzero red power");
  const Scalar base = emission_rate(r, Excitation<Scalar>{p_re, Scalar(0)});
  const Scalar combined = emission_rate(r, Excitation<Scalar>{p_re, p_ge});
  return (combined - base) / base;
}

/// Ratio of saturation intensities with and without a green admixture, k23
/// frozen at the same red power for both.
template <typename Scalar>
Scalar saturation_gain(const TransitionRates<Scalar>& r, Scalar p_ge,
                       Scalar eval_power) {
  const auto crge = saturation_params(r, Channel::kCombined, eval_power, p_ge);
  const auto re = saturation_params(r, Channel::kRed, eval_power);
  return crge.i_inf / re.i_inf;
}

template <typename Scalar>
Scalar saturation_gain(const TransitionRates<Scalar>& r, Scalar p_ge) {
  return saturation_gain(r, p_ge, saturation_params(r, Channel::kRed).p_sat);
}

/// GE power at which the capture-suppression part of the enhancement is half
/// complete at red power p_re. Writing I = k21 / (B + X f_ge) with
/// B = 1 + k21/k12 and X = k23(0, p_re) (1/k12 + 1/k31), the suppression gain
/// rises as P_ge / (P_ge + P_ns0 (1 + X/B)). The green pump term is left out.
template <typename Scalar>
Scalar enhancement_halfway_power(const TransitionRates<Scalar>& r, Scalar p_re) {
  require(p_re > Scalar(0), Errc::kZeroPump, "halfway power needs p_re > 0");
  const Scalar k12 = r.sigma_re * p_re;
  const Scalar k23 = effective_capture_rate(r, Excitation<Scalar>{p_re, Scalar(0)});
  const Scalar b = Scalar(1) + r.k21 / k12;
  const Scalar x = k23 * (Scalar(1) / k12 + Scalar(1) / r.k31);
  return r.p_ns0 * (Scalar(1) + x / b);
}

/// Linear nitrogen-concentration scaling of the donor-dependent constants:
/// k23_0(c) = kappa * c and P_ns0(c) = p0 * c.
template <typename Scalar = double>
struct ConcentrationScaling {
  Scalar kappa;  // 1/(ns ppm)
  Scalar p0;     // mW/ppm
};

template <typename Scalar>
TransitionRates<Scalar> rates_at_concentration(TransitionRates<Scalar> base,
                                               Scalar ppm,
                                               const ConcentrationScaling<Scalar>& s) {
  require(ppm > Scalar(0), Errc::kInvalidArgument, "concentration must be > 0");
  base.k23_0 = s.kappa * ppm;
  base.p_ns0 = s.p0 * ppm;
  return base;
}

template <typename Scalar>
Scalar eta_vs_concentration(const TransitionRates<Scalar>& base, Scalar ppm,
                            const Excitation<Scalar>& exc,
                            const ConcentrationScaling<Scalar>& s) {
  return enhancement_factor(rates_at_concentration(base, ppm, s), exc.p_re,
                            exc.p_ge);
}

}  // namespace sivsim
