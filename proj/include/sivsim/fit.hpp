#pragma once

// Damped Gauss-Newton (Levenberg-Marquardt) least squares and the curve
// adapters built on it.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sivsim/correlation.hpp"
#include "sivsim/mc.hpp"
#include "sivsim/rates.hpp"

namespace sivsim {

/// sigma empty means unit weights.
struct DataSeries {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> sigma;

  std::size_t size() const { return x.size(); }
};

void validate(const DataSeries& d, std::size_t n_params);

/// y = model(params, x) for one abscissa value.
using ModelFn = std::function<double(const Eigen::VectorXd& params, double x)>;

struct LmOptions {
  int max_iter = 200;
  double ftol = 1e-10;  // relative chi2 change
  double gtol = 1e-10;  // max-norm of the gradient in internal coordinates
  /// chi2 at or below this counts as an exact solve. Useful when the model is
  /// itself the output of a numerical search with a noise floor.
  double chi2_floor = 0;
  /// Parameters flagged here are fitted as log(p) and stay strictly positive.
  /// Empty means all parameters are free.
  std::vector<bool> positive;
};

enum class FitStatus {
  kRelativeCost,  // chi2 stopped changing
  kGradient,      // gradient vanished
  kSmallStep,     // damping exhausted but no further decrease was predicted
  kMaxIter,
  kSingular,  // normal matrix singular even at the largest damping; best-so-far returned
};

const char* to_string(FitStatus s) noexcept;

struct FitResult {
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd stderr_;
  double chi2 = 0;
  int dof = 0;
  int n_iter = 0;
  bool converged = false;
  FitStatus status = FitStatus::kMaxIter;
  bool rank_deficient = false;  // normal matrix numerically singular at the solution
  std::vector<double> chi2_history;  // chi2 after every accepted step, starting at init
};

/// Residuals are (y - model)/sigma. Throws NonFiniteModel if the model is not
/// finite at `init`; a non-finite trial point is treated as a rejected step.
/// The covariance is scaled by chi2/dof when the data carry no sigma.
FitResult levenberg_marquardt(const ModelFn& model, const DataSeries& data,
                              const Eigen::VectorXd& init, const LmOptions& options = {});

/// Central differences, step max(1e-6 |p|, 1e-12) per parameter.
Eigen::MatrixXd numeric_jacobian(const ModelFn& model, const Eigen::VectorXd& params,
                                 const std::vector<double>& x);

// Saturation --------------------------------------------------------------

struct SaturationFit {
  SaturationParams<double> params;
  FitResult fit;
  bool poor_conditioning = false;  // data stay below 40% of the fitted I_inf
};

/// I(P) = P I_inf / (P + P_sat) + k P. Auto-initialized from the data unless
/// `init` is given. Parameter order in fit.params: I_inf, P_sat, k.
SaturationFit fit_saturation(const DataSeries& data,
                             std::optional<SaturationParams<double>> init = std::nullopt,
                             int max_iter = LmOptions{}.max_iter);

struct ShiftedSaturationFit {
  double delta_i_inf = 0;
  double p_sat = 0;
  FitResult fit;
  bool poor_conditioning = false;
};

/// dI(P) = dI_inf P / (P + P_sat) fitted to y - i_re.
ShiftedSaturationFit fit_shifted_saturation(const DataSeries& data, double i_re);

// g2 ------------------------------------------------------------------------

enum class G2Form { kFull, kBunchingOnly };

struct G2FitOptions {
  /// Fit g2 = 1 + c (g2_model - 1) with a free contrast c (full form only).
  /// c absorbs emitter number and background: c = rho^2 / n.
  bool contrast = false;
  /// Bins with |tau| below this are ignored. Negative selects 0 for the full
  /// form and 8 ns for the bunching-only form.
  double min_abs_tau_ns = -1;
  std::optional<G2ModelParamsd> init;
};

struct G2Fit {
  G2ModelParamsd params{};  // tau1 is 0 for the bunching-only form
  double contrast = 1;
  double g2_zero = 0;  // fitted model at tau = 0
  FitResult fit;
};

G2Fit fit_g2(const G2Histogram& hist, G2Form form, const G2FitOptions& options = {});

// Decay ---------------------------------------------------------------------

struct DecayWindow {
  double t_start_ns;
  double t_end_ns;
};

struct DecayFit {
  double tau_ns = 0;
  double amplitude = 0;  // counts per bin at t_start
  double floor = 0;      // counts per bin
  DecayWindow window{};
  FitResult fit;
};

/// Mono-exponential tail A exp(-(t - t_start)/tau) + floor with Poisson
/// weights. Throws WindowTooShort if fewer than 10 bins fall in the window.
DecayFit fit_decay(const DecayHistogram& hist, const DecayWindow& window);

/// Window from 3 IRF sigmas after the peak bin to the end of the histogram.
DecayFit fit_decay(const DecayHistogram& hist);

}  // namespace sivsim
