#include "sivsim/fit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sivsim {

const char* to_string(FitStatus s) noexcept {
  switch (s) {
    case FitStatus::kRelativeCost: return "relative_cost";
    case FitStatus::kGradient: return "gradient";
    case FitStatus::kSmallStep: return "small_step";
    case FitStatus::kMaxIter: return "max_iter";
    case FitStatus::kSingular: return "singular";
  }
  return "unknown";
}

void validate(const DataSeries& d, std::size_t n_params) {
  require(d.x.size() == d.y.size(), Errc::kInvalidArgument, "x and y lengths differ");
  require(d.sigma.empty() || d.sigma.size() == d.x.size(), Errc::kInvalidArgument,
          "sigma length differs from x");
  require(d.x.size() >= n_params, Errc::kInvalidArgument,
          "fewer data points than free parameters");
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    require(std::isfinite(d.x[i]) && std::isfinite(d.y[i]), Errc::kInvalidArgument,
            "data contain non-finite values");
    if (!d.sigma.empty())
      require(std::isfinite(d.sigma[i]) && d.sigma[i] > 0, Errc::kInvalidArgument,
              "sigma must be > 0");
  }
}

Eigen::MatrixXd numeric_jacobian(const ModelFn& model, const Eigen::VectorXd& params,
                                 const std::vector<double>& x) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd jac(n, params.size());
  Eigen::VectorXd p = params;
  for (Eigen::Index j = 0; j < params.size(); ++j) {
    const double h = std::max(1e-6 * std::abs(params[j]), 1e-12);
    p[j] = params[j] + h;
    Eigen::VectorXd up(n);
    for (Eigen::Index i = 0; i < n; ++i) up[i] = model(p, x[static_cast<std::size_t>(i)]);
    p[j] = params[j] - h;
    for (Eigen::Index i = 0; i < n; ++i)
      jac(i, j) = (up[i] - model(p, x[static_cast<std::size_t>(i)])) / (2 * h);
    p[j] = params[j];
  }
  return jac;
}

namespace {

class Problem {
 public:
  Problem(const ModelFn& model, const DataSeries& data, const std::vector<bool>& positive)
      : model_(model), data_(data), positive_(positive) {}

  Eigen::VectorXd to_external(const Eigen::VectorXd& u) const {
    Eigen::VectorXd p = u;
    for (Eigen::Index j = 0; j < u.size(); ++j)
      if (is_positive(j)) p[j] = std::exp(u[j]);
    return p;
  }

  Eigen::VectorXd to_internal(const Eigen::VectorXd& p) const {
    Eigen::VectorXd u = p;
    for (Eigen::Index j = 0; j < p.size(); ++j)
      if (is_positive(j)) u[j] = std::log(p[j]);
    return u;
  }

  double weight(std::size_t i) const { return data_.sigma.empty() ? 1.0 : 1.0 / data_.sigma[i]; }

  // Weighted residual vector; false if the model is not finite.
  bool residuals(const Eigen::VectorXd& p, Eigen::VectorXd* r) const {
    const std::size_t n = data_.size();
    r->resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double f = model_(p, data_.x[i]);
      if (!std::isfinite(f)) return false;
      (*r)[static_cast<Eigen::Index>(i)] = (data_.y[i] - f) * weight(i);
    }
    return true;
  }

  // Jacobian of the weighted model (not of the residual) in external space.
  Eigen::MatrixXd weighted_jacobian(const Eigen::VectorXd& p) const {
    Eigen::MatrixXd j = numeric_jacobian(model_, p, data_.x);
    for (Eigen::Index i = 0; i < j.rows(); ++i) j.row(i) *= weight(static_cast<std::size_t>(i));
    return j;
  }

  // Chain rule: dp/du = p for log-parameterized entries.
  Eigen::MatrixXd internal_jacobian(const Eigen::VectorXd& p) const {
    Eigen::MatrixXd j = weighted_jacobian(p);
    for (Eigen::Index k = 0; k < p.size(); ++k)
      if (is_positive(k)) j.col(k) *= p[k];
    return j;
  }

 private:
  bool is_positive(Eigen::Index j) const {
    return static_cast<std::size_t>(j) < positive_.size() && positive_[static_cast<std::size_t>(j)];
  }

  const ModelFn& model_;
  const DataSeries& data_;
  const std::vector<bool>& positive_;
};

}  // namespace

FitResult levenberg_marquardt(const ModelFn& model, const DataSeries& data,
                              const Eigen::VectorXd& init, const LmOptions& options) {
  const auto np = static_cast<std::size_t>(init.size());
  require(np >= 1, Errc::kInvalidArgument, "no parameters to fit");
  validate(data, np);
  require(options.positive.empty() || options.positive.size() == np, Errc::kInvalidArgument,
          "positivity mask length differs from parameter count");
  for (Eigen::Index j = 0; j < init.size(); ++j) {
    require(std::isfinite(init[j]), Errc::kInvalidArgument, "initial parameters must be finite");
    if (!options.positive.empty() && options.positive[static_cast<std::size_t>(j)])
      require(init[j] > 0, Errc::kInvalidArgument,
              "positive parameter " + std::to_string(j) + " needs a positive initial value");
  }

  Problem prob(model, data, options.positive);
  FitResult res;
  Eigen::VectorXd u = prob.to_internal(init);
  Eigen::VectorXd p = prob.to_external(u);
  Eigen::VectorXd r;
  require(prob.residuals(p, &r), Errc::kNonFiniteModel, "model is not finite at the initial point");
  double chi2 = r.squaredNorm();
  res.chi2_history.push_back(chi2);

  Eigen::MatrixXd jac = prob.internal_jacobian(p);
  Eigen::MatrixXd a = jac.transpose() * jac;
  Eigen::VectorXd g = -jac.transpose() * r;  // gradient of chi2/2
  double lambda = 1e-3 * a.diagonal().maxCoeff();
  if (!(lambda > 0)) lambda = 1e-3;
  const double lambda_cap = 1e16 * std::max(1.0, a.diagonal().maxCoeff());

  const auto n = static_cast<Eigen::Index>(np);
  bool done = false;
  int iter = 0;
  for (; iter < options.max_iter && !done; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < options.gtol || chi2 <= options.chi2_floor) {
      res.status = FitStatus::kGradient;
      res.converged = true;
      break;
    }
    bool accepted = false;
    Eigen::VectorXd delta;
    while (lambda <= lambda_cap) {
      Eigen::MatrixXd damped = a + lambda * Eigen::MatrixXd::Identity(n, n);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      delta = ldlt.solve(-g);
      if (ldlt.info() != Eigen::Success || !delta.allFinite()) {
        lambda *= 10;
        continue;
      }
      const Eigen::VectorXd u_new = u + delta;
      const Eigen::VectorXd p_new = prob.to_external(u_new);
      Eigen::VectorXd r_new;
      if (!p_new.allFinite() || !prob.residuals(p_new, &r_new)) {
        lambda *= 10;
        continue;
      }
      const double chi2_new = r_new.squaredNorm();
      if (chi2_new < chi2) {
        const double drop = chi2 - chi2_new;
        u = u_new;
        p = p_new;
        r = r_new;
        chi2 = chi2_new;
        res.chi2_history.push_back(chi2);
        lambda = std::max(lambda / 10, 1e-300);
        accepted = true;
        if (drop <= options.ftol * (chi2 + drop)) {
          res.status = FitStatus::kRelativeCost;
          res.converged = true;
          done = true;
        }
        break;
      }
      lambda *= 10;
    }
    if (!accepted) {
      // Damping exhausted. Accept convergence only if the linearized model
      // predicts no meaningful decrease from here.
      Eigen::VectorXd gn = a.completeOrthogonalDecomposition().solve(-g);
      const double predicted = -(2 * g.dot(gn) + gn.dot(a * gn));
      if (!(predicted > options.ftol * chi2) || chi2 <= options.chi2_floor) {
        res.status = FitStatus::kSmallStep;
        res.converged = true;
      } else {
        res.status = FitStatus::kSingular;
        res.converged = false;
      }
      ++iter;
      break;
    }
    if (done) {
      ++iter;
      break;
    }
    jac = prob.internal_jacobian(p);
    a = jac.transpose() * jac;
    g = -jac.transpose() * r;
  }
  res.n_iter = iter;

  res.params = p;
  res.chi2 = chi2;
  res.dof = static_cast<int>(data.size()) - static_cast<int>(np);

  // Covariance in external coordinates from the SVD pseudo-inverse.
  const Eigen::MatrixXd jp = prob.weighted_jacobian(p);
  const Eigen::MatrixXd normal = jp.transpose() * jp;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(normal, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double cutoff = sv.size() > 0 ? sv[0] * 1e-12 * static_cast<double>(np) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    if (sv[k] > cutoff && sv[k] > 0) {
      inv[k] = 1.0 / sv[k];
    } else {
      res.rank_deficient = true;
    }
  }
  Eigen::MatrixXd cov = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  cov = 0.5 * (cov + cov.transpose());
  if (data.sigma.empty() && res.dof > 0) cov *= chi2 / res.dof;
  res.covariance = cov;
  res.stderr_ = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return res;
}

// Saturation --------------------------------------------------------------

namespace {

double saturation_model(const Eigen::VectorXd& q, double x) {
  return x * q[0] / (x + q[1]) + q[2] * x;
}

// Power whose y is closest to target.
double x_nearest(const DataSeries& d, double target) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.size(); ++i)
    if (std::abs(d.y[i] - target) < std::abs(d.y[best] - target)) best = i;
  return d.x[best];
}

std::vector<std::size_t> order_by_x(const DataSeries& d) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return d.x[a] < d.x[b]; });
  return idx;
}

}  // namespace

SaturationFit fit_saturation(const DataSeries& data, std::optional<SaturationParams<double>> init,
                             int max_iter) {
  require(max_iter >= 1, Errc::kInvalidArgument, "max_iter must be >= 1");
  validate(data, 4);
  for (double x : data.x)
    require(x >= 0, Errc::kInvalidArgument, "saturation powers must be >= 0");
  const double y_max = *std::max_element(data.y.begin(), data.y.end());
  require(y_max > 0, Errc::kInvalidArgument, "saturation data have no positive counts");

  Eigen::Vector3d q0;
  if (init) {
    q0 << init->i_inf, init->p_sat, init->k_bg;
  } else {
    // Tail slope over the last quarter of the power range.
    const auto idx = order_by_x(data);
    const std::size_t n_tail = std::max<std::size_t>(2, idx.size() / 4);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t m = idx.size() - n_tail; m < idx.size(); ++m) {
      const double x = data.x[idx[m]], y = data.y[idx[m]];
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double nt = static_cast<double>(n_tail);
    const double den = nt * sxx - sx * sx;
    const double slope = den > 0 ? (nt * sxy - sx * sy) / den : 0.0;
    double p_half = x_nearest(data, y_max / 2);
    if (!(p_half > 0)) p_half = data.x[idx.back()] / 4 + 1e-9;
    q0 << 1.2 * y_max, p_half, std::max(slope, 0.0);
  }
  LmOptions opt;
  opt.max_iter = max_iter;
  opt.positive = {true, true, false};
  SaturationFit out;
  out.fit = levenberg_marquardt(saturation_model, data, q0, opt);
  out.params = {out.fit.params[0], out.fit.params[1], out.fit.params[2]};
  double y_sig = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    y_sig = std::max(y_sig, data.y[i] - out.params.k_bg * data.x[i]);
  out.poor_conditioning = y_sig < 0.4 * out.params.i_inf || out.fit.rank_deficient;
  return out;
}

ShiftedSaturationFit fit_shifted_saturation(const DataSeries& data, double i_re) {
  require(std::isfinite(i_re), Errc::kInvalidArgument, "i_re must be finite");
  validate(data, 2);
  DataSeries d = data;
  for (double& y : d.y) y -= i_re;
  ShiftedSaturationFit out;
  double scale = 0;
  for (double y : d.y) scale = std::max(scale, std::abs(y));
  const double x_max = *std::max_element(d.x.begin(), d.x.end());
  if (scale <= 1e-12 * std::max(1.0, std::abs(i_re)) || x_max <= 0) {
    // No response to fit: report dI_inf = 0 and the largest power as P_sat.
    out.delta_i_inf = 0;
    out.p_sat = std::max(x_max, 0.0);
    out.fit.params = Eigen::Vector2d(0.0, out.p_sat);
    out.fit.covariance = Eigen::Matrix2d::Zero();
    out.fit.stderr_ = Eigen::Vector2d::Zero();
    out.fit.dof = static_cast<int>(d.size()) - 2;
    out.fit.converged = false;
    out.fit.status = FitStatus::kSingular;
    out.fit.rank_deficient = true;
    out.poor_conditioning = true;
    return out;
  }
  const double y_max = *std::max_element(d.y.begin(), d.y.end());
  double p_half = x_nearest(d, y_max / 2);
  if (!(p_half > 0)) p_half = x_max / 4;
  Eigen::Vector2d q0(1.2 * (y_max > 0 ? y_max : scale), p_half);
  LmOptions opt;
  opt.positive = {false, true};
  out.fit = levenberg_marquardt(
      [](const Eigen::VectorXd& q, double x) { return q[0] * x / (x + q[1]); }, d, q0, opt);
  out.delta_i_inf = out.fit.params[0];
  out.p_sat = out.fit.params[1];
  out.poor_conditioning =
      out.fit.rank_deficient || y_max < 0.4 * out.delta_i_inf || out.delta_i_inf <= 0;
  return out;
}

// g2 ------------------------------------------------------------------------

G2Fit fit_g2(const G2Histogram& hist, G2Form form, const G2FitOptions& options) {
  const std::size_t nb = hist.values.size();
  require(nb > 0 && hist.taus_ns.size() == nb, Errc::kInvalidArgument, "empty g2 histogram");
  const bool full = form == G2Form::kFull;
  const double min_tau = options.min_abs_tau_ns >= 0 ? options.min_abs_tau_ns : (full ? 0.0 : 8.0);

  DataSeries d;
  for (std::size_t i = 0; i < nb; ++i) {
    const double t = std::abs(hist.taus_ns[i]);
    if (t < min_tau) continue;
    d.x.push_back(t);
    d.y.push_back(hist.values[i]);
    double s = i < hist.errors.size() ? hist.errors[i] : 0.0;
    if (!(s > 0)) s = 1.0;
    d.sigma.push_back(s);
  }

  // Data-driven starting point.
  const double lo = hist.taus_ns.front(), hi = hist.taus_ns.back();
  const double span = std::max(std::abs(lo), std::abs(hi));
  double peak = 0, g_zero = 1;
  double best_zero = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.x[i] > 2.0) peak = std::max(peak, d.y[i] - 1);
    if (d.x[i] < best_zero) {
      best_zero = d.x[i];
      g_zero = d.y[i];
    }
  }
  // tau2 guess: first delay past the peak where the excess drops below 1/e.
  double tau2 = span / 5;
  if (peak > 0) {
    double t_peak = 2.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.x[i] > 2.0 && d.y[i] - 1 == peak) t_peak = d.x[i];
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.x[i] > t_peak && d.y[i] - 1 < peak / std::exp(1.0)) tau2 = std::min(tau2, d.x[i]);
    tau2 = std::max(tau2, 1.0);
  }
  const double contrast0 = full && options.contrast ? std::clamp(1.0 - g_zero, 0.01, 1.0) : 1.0;
  G2ModelParamsd p0{std::max(peak / contrast0, 0.05), 1.0, tau2};
  if (options.init) p0 = *options.init;

  G2Fit out;
  LmOptions opt;
  if (full) {
    const bool with_c = options.contrast;
    Eigen::VectorXd q0(with_c ? 4 : 3);
    q0.head<3>() << p0.a, p0.tau1, p0.tau2;
    if (with_c) q0[3] = contrast0;
    opt.positive.assign(static_cast<std::size_t>(q0.size()), true);
    ModelFn model = [with_c](const Eigen::VectorXd& q, double x) {
      const double g1 = g2_model(G2ModelParamsd{q[0], q[1], q[2]}, x);
      return with_c ? 1 + q[3] * (g1 - 1) : g1;
    };
    out.fit = levenberg_marquardt(model, d, q0, opt);
    out.params = {out.fit.params[0], out.fit.params[1], out.fit.params[2]};
    out.contrast = with_c ? out.fit.params[3] : 1.0;
    out.g2_zero = 1 + out.contrast * (g2_model(out.params, 0.0) - 1);
  } else {
    Eigen::Vector2d q0(p0.a, p0.tau2);
    opt.positive = {true, true};
    out.fit = levenberg_marquardt(
        [](const Eigen::VectorXd& q, double x) {
          return g2_bunching_model(G2ModelParamsd{q[0], 0.0, q[1]}, x);
        },
        d, q0, opt);
    out.params = {out.fit.params[0], 0.0, out.fit.params[1]};
    out.g2_zero = 1 + out.params.a;
  }
  return out;
}

// Decay ---------------------------------------------------------------------

DecayFit fit_decay(const DecayHistogram& hist, const DecayWindow& window) {
  require(window.t_end_ns > window.t_start_ns, Errc::kInvalidArgument,
          "fit window end must be after its start");
  DataSeries d;
  for (std::size_t i = 0; i < hist.counts.size(); ++i) {
    const double t = hist.bin_center_ns(i);
    if (t < window.t_start_ns || t > window.t_end_ns) continue;
    const double y = static_cast<double>(hist.counts[i]);
    d.x.push_back(t - window.t_start_ns);
    d.y.push_back(y);
    d.sigma.push_back(std::sqrt(std::max(y, 1.0)));
  }
  require(d.size() >= 10, Errc::kWindowTooShort,
          "decay fit window holds " + std::to_string(d.size()) + " bins, need at least 10");

  // Floor from the last tenth of the window, slope from the first half.
  const std::size_t n = d.size();
  const std::size_t n_tail = std::max<std::size_t>(1, n / 10);
  double floor0 = 0;
  for (std::size_t i = n - n_tail; i < n; ++i) floor0 += d.y[i];
  floor0 /= static_cast<double>(n_tail);
  const double amp0 = std::max(d.y.front() - floor0, 1.0);
  double tau0 = (d.x.back() - d.x.front()) / 4;
  for (std::size_t i = 0; i < n; ++i) {
    if (d.y[i] - floor0 < amp0 / std::exp(1.0)) {
      tau0 = std::max(d.x[i], hist.bin_width_ps * 1e-3);
      break;
    }
  }
  Eigen::Vector3d q0(tau0, amp0, floor0);
  LmOptions opt;
  opt.positive = {true, true, false};
  DecayFit out;
  out.window = window;
  out.fit = levenberg_marquardt(
      [](const Eigen::VectorXd& q, double x) { return q[1] * std::exp(-x / q[0]) + q[2]; }, d,
      q0, opt);
  out.tau_ns = out.fit.params[0];
  out.amplitude = out.fit.params[1];
  out.floor = out.fit.params[2];
  return out;
}

DecayFit fit_decay(const DecayHistogram& hist) {
  require(!hist.counts.empty(), Errc::kWindowTooShort, "empty decay histogram");
  const auto peak = static_cast<std::size_t>(
      std::max_element(hist.counts.begin(), hist.counts.end()) - hist.counts.begin());
  const double start = hist.bin_center_ns(peak) + 3 * hist.irf_sigma_ps * 1e-3;
  const double end = hist.bin_center_ns(hist.counts.size() - 1);
  return fit_decay(hist, {start, end});
}

}  // namespace sivsim
