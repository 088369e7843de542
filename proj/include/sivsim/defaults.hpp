#pragma once

// Calibrated default configuration. The constants are the output of
// `sivsim calibrate` with default targets; tests/test_protocols.cpp checks
// that recalibrating reproduces them.

#include "sivsim/mc.hpp"
#include "sivsim/protocols.hpp"
#include "sivsim/rates.hpp"

namespace sivsim {

/// k21, k31 and P_RE* are fixed by choice (1.7 ns radiative lifetime, a 50 ns
/// dark state, weak RE-assisted capture); the other four are fitted against
/// P_sat(RE) = 8.9 mW, P_sat(GE) = 20.5 mW, a CRGE/RE saturation gain of 6
/// at 0.4 mW GE and a 0.5 mW onset of the GE plateau at 10 mW RE.
inline TransitionRatesd default_rates() {
  TransitionRatesd r;
  r.k21 = 0.6;
  r.k23_0 = 0.15090069518650912;
  r.k31 = 0.02;
  r.sigma_re = 0.0098138465843311696;
  r.sigma_ge = 0.02773392294068713;
  r.p_ns0 = 0.024265018888418206;
  r.p_re_star = 1000;
  return r;
}

/// Seed values used as the starting point of the default calibration.
inline TransitionRatesd calibration_start() {
  TransitionRatesd r = default_rates();
  r.k23_0 = 0.15;
  r.sigma_re = 0.01;
  r.sigma_ge = 0.03;
  r.p_ns0 = 0.025;
  return r;
}

inline constexpr unsigned kDefaultCalibrationFree =
    kFieldK23_0 | kFieldSigmaRe | kFieldSigmaGe | kFieldPNs0;

/// Excitation of the concentration scan.
inline Excitationd default_concentration_excitation() { return {5.0, 0.02}; }

/// kappa and p0 placing the eta(c) maximum at 4 ppm with eta(0.15 ppm) = 0.1
/// under default_concentration_excitation().
inline ConcentrationScaling<double> default_concentration_scaling() {
  return {0.1123709061397013, 0.0020508520813490041};
}

/// Detection efficiency at which `n_emitters` under RE give a detected
/// saturation intensity of `i_inf_kcps` (421 kcounts/s for the reference
/// ensemble of 12).
inline double efficiency_for_saturation(double i_inf_kcps = 421, int n_emitters = 12) {
  const double i_inf = saturation_params(default_rates(), Channel::kRed).i_inf;
  return i_inf_kcps / detected_kcps(i_inf, n_emitters, 1.0);
}

}  // namespace sivsim
