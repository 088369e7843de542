#pragma once

// Synthetic versions of the CRGE experiments: power sweeps, toggled
// excitation traces, concentration scans, lifetime-vs-wavelength scans and
// calibration of the rate constants against headline observables.

#include <cstdint>
#include <optional>
#include <vector>

#include "sivsim/fit.hpp"
#include "sivsim/mc.hpp"
#include "sivsim/rates.hpp"

namespace sivsim {

/// Multiplies k23_0 by `factor`. A crude stand-in for cooling; there is no
/// temperature model behind it.
TransitionRatesd apply_capture_factor(TransitionRatesd rates, double factor);

/// Detected signal in kcounts/s for n emitters at per-emitter rate I (1/ns).
inline double detected_kcps(double emission_per_ns, int n_emitters, double efficiency) {
  return emission_per_ns * 1e6 * n_emitters * efficiency;
}

// Saturation sweeps -----------------------------------------------------------

enum class SweepMode { kAnalytic, kMonteCarlo };

struct SweepSpec {
  Channel channel = Channel::kRed;
  double fixed_power = 0;  // green admixture for kCombined, ignored otherwise
  std::vector<double> grid;  // swept power, mW
  SweepMode mode = SweepMode::kAnalytic;
  double time_per_point_s = 10;  // monte carlo only
  int n_emitters = 1;
};

void validate(const SweepSpec& s);

/// Background-subtracted detected rate in kcounts/s per grid point. Monte
/// carlo points carry Poisson sigma; analytic points carry none.
DataSeries run_saturation_sweep(const TransitionRatesd& rates, const SweepSpec& spec,
                                const DetectionConfig& detection = {},
                                std::uint64_t seed = 0);

// Toggled excitation trace ----------------------------------------------------

struct CrgeTraceSpec {
  double p_re = 9.1;
  double p_ge = 0.06;
  double segment_s = 10;
  int n_cycles = 3;
  double bin_width_ms = 100;
  int n_emitters = 1;
  SimulationMethod method = SimulationMethod::kPhotonLumped;
};

struct CrgeTraceResult {
  TimeTrace trace;
  double i_re = 0;    // kcounts/s, background subtracted
  double i_crge = 0;
  double delta_i = 0;
  double eta = 0;
  double eta_stderr = 0;
  double eta_analytic = 0;
};

/// Schedule RE, CRGE, RE, CRGE, ... of n_cycles pairs. Segment means skip the
/// first 10% of each segment's bins.
CrgeTraceResult run_crge_trace(const TransitionRatesd& rates, const CrgeTraceSpec& spec,
                               const DetectionConfig& detection, std::uint64_t seed);

// GE power sweep at fixed RE levels ------------------------------------------

struct GeSweepSpec {
  std::vector<double> p_re_levels{0.2, 5.1, 10.0};
  std::vector<double> p_ge_grid;
  SweepMode mode = SweepMode::kAnalytic;
  double time_per_point_s = 10;
  int n_emitters = 1;
};

struct GeLevelResult {
  double p_re = 0;
  double i_re = 0;       // kcounts/s at p_ge = 0
  DataSeries delta_i;    // x = p_ge, y = I_crge - I_re
  std::vector<double> eta;
  ShiftedSaturationFit fit;
};

std::vector<GeLevelResult> run_ge_power_sweep(const TransitionRatesd& rates,
                                              const GeSweepSpec& spec,
                                              const DetectionConfig& detection = {},
                                              std::uint64_t seed = 0);

/// GE power at which eta(P_ge) reaches 90% of its fitted saturation:
/// 9 P_sat of a saturation-law fit (with linear term) to the analytic dI on
/// a log grid from 0.002 to 2 mW.
double eta_plateau_onset(const TransitionRatesd& rates, double p_re);

// Concentration dependence ------------------------------------------------

struct ConcentrationRow {
  double ppm;
  double k23_0;
  double p_ns0;
  double eta;
  double i_re;    // per-emitter 1/ns
  double i_crge;
};

struct ConcentrationTable {
  Excitationd exc;
  std::vector<ConcentrationRow> rows;
  std::vector<double> sat_grid;                   // RE power, mW
  std::vector<std::vector<double>> sat_curves;    // per row, CRGE emission (1/ns) on sat_grid
};

ConcentrationTable run_concentration_sweep(const TransitionRatesd& base,
                                           const std::vector<double>& c_grid,
                                           const Excitationd& exc,
                                           const ConcentrationScaling<double>& scaling,
                                           const std::vector<double>& sat_grid = {});

/// Location and height of the eta(c) maximum, by golden-section search in
/// log c over [c_lo, c_hi].
struct EtaPeak {
  double ppm;
  double eta;
};

EtaPeak eta_concentration_peak(const TransitionRatesd& base, const Excitationd& exc,
                               const ConcentrationScaling<double>& scaling, double c_lo = 0.1,
                               double c_hi = 500);

struct ScalingCalibration {
  ConcentrationScaling<double> scaling;
  EtaPeak peak;
  FitResult fit;
};

/// Solve kappa and p0 so the eta(c) maximum sits at peak_ppm and eta at
/// low_ppm equals low_eta.
ScalingCalibration calibrate_concentration_scaling(const TransitionRatesd& base,
                                                   const Excitationd& exc, double peak_ppm = 4,
                                                   double low_ppm = 0.15, double low_eta = 0.10,
                                                   ConcentrationScaling<double> init = {0.1, 0.002});

// Lifetime vs excitation wavelength -----------------------------------------

inline constexpr double kPhotonEnergyNm = 1239.842;  // eV nm

struct LifetimeSweepSpec {
  std::vector<double> wavelengths_nm;
  double e_th_ev = 2.07;
  double width_ev = 0.03;
  double knr_max = 0;  // 1/ns; 0 selects a value giving a 9% drop from 640 to 550 nm
  double k_r = 1 / 1.7;
};

void validate(const LifetimeSweepSpec& s);

/// k_nr(E) = knr_max / (1 + exp(-(E - E_th)/width)).
double nonradiative_rate(const LifetimeSweepSpec& spec, double energy_ev);
double lifetime_ns(const LifetimeSweepSpec& spec, double wavelength_nm);

/// knr_max for which tau(short)/tau(long) equals `ratio`.
double knr_max_for_ratio(const LifetimeSweepSpec& spec, double short_nm, double long_nm,
                         double ratio);

struct LifetimeRow {
  double wavelength_nm;
  double energy_ev;
  double tau_true_ns;
  double tau_fit_ns;
  double tau_stderr_ns;
};

std::vector<LifetimeRow> run_lifetime_sweep(const LifetimeSweepSpec& spec,
                                            const PulseConfig& pulse, std::uint64_t n_photons,
                                            std::uint64_t seed, double background_fraction = 0);

// Rate calibration -----------------------------------------------------------

enum RateField : unsigned {
  kFieldK21 = 1u << 0,
  kFieldK23_0 = 1u << 1,
  kFieldK31 = 1u << 2,
  kFieldSigmaRe = 1u << 3,
  kFieldSigmaGe = 1u << 4,
  kFieldPNs0 = 1u << 5,
  kFieldPReStar = 1u << 6,
};

struct CalibrationTargets {
  double psat_re = 8.9;             // mW
  double psat_ge = 20.5;            // mW
  double crge_gain = 6;             // I_inf(CRGE)/I_inf(RE)
  double ge_halfway_power = 0.5 / 9;  // mW; 90% of the GE effect at 0.5 mW
  std::optional<double> ge_re_ratio;  // off by default, see README
  double gain_p_ge = 0.4;           // GE admixture for crge_gain
  double halfway_p_re = 10;         // RE power for ge_halfway_power
  double w_psat_re = 1, w_psat_ge = 1, w_gain = 1, w_halfway = 1, w_ratio = 1;
};

void validate(const CalibrationTargets& t);

struct CalibrationObservables {
  double psat_re, psat_ge, crge_gain, ge_halfway_power, ge_re_ratio;
};

CalibrationObservables forward_observables(const TransitionRatesd& r,
                                           const CalibrationTargets& t);

struct CalibrationResult {
  TransitionRatesd rates;
  CalibrationObservables observables;
  FitResult fit;
  bool non_identifiable = false;
};

/// Weighted least squares on log(observable / target) over the `free` fields,
/// starting at `start`. Fields not in `free` keep their start values.
CalibrationResult calibrate(const CalibrationTargets& targets, unsigned free,
                            const TransitionRatesd& start);

}  // namespace sivsim
