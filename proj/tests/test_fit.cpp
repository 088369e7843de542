#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "sivsim/defaults.hpp"
#include "sivsim/fit.hpp"

using namespace sivsim;

namespace {

DataSeries saturation_data(double i_inf, double p_sat, double k, double noise, int n, double p_max,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, 1);
  DataSeries d;
  for (int i = 1; i <= n; ++i) {
    const double p = p_max * i / n;
    const double y = saturation_curve(SaturationParams<double>{i_inf, p_sat, k}, p);
    d.x.push_back(p);
    d.y.push_back(y * (1 + noise * z(rng)));
  }
  return d;
}

}  // namespace

TEST_CASE("zero-residual quadratic") {
  DataSeries d;
  for (int i = 0; i < 20; ++i) {
    const double x = -2 + 0.2 * i;
    d.x.push_back(x);
    d.y.push_back(1.5 - 0.7 * x + 0.3 * x * x);
  }
  const ModelFn quad = [](const Eigen::VectorXd& p, double x) { return p[0] + p[1] * x + p[2] * x * x; };
  const auto f = levenberg_marquardt(quad, d, Eigen::Vector3d(10, 10, -5));
  CHECK(f.converged);
  CHECK(f.n_iter <= 20);
  CHECK(f.params[0] == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(f.params[1] == doctest::Approx(-0.7).epsilon(1e-8));
  CHECK(f.params[2] == doctest::Approx(0.3).epsilon(1e-8));
  CHECK(f.dof == 17);
}

TEST_CASE("numeric Jacobian") {
  const ModelFn m = [](const Eigen::VectorXd& p, double x) { return p[0] * std::exp(-x / p[1]) + std::sin(p[2] * x); };
  const Eigen::Vector3d p(2.0, 1.5, 0.7);
  const std::vector<double> xs{0.1, 0.5, 1.0, 2.0, 4.0};
  const Eigen::MatrixXd j = numeric_jacobian(m, p, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x = xs[i];
    const auto r = static_cast<Eigen::Index>(i);
    CHECK(j(r, 0) == doctest::Approx(std::exp(-x / p[1])).epsilon(1e-6));
    CHECK(j(r, 1) == doctest::Approx(p[0] * std::exp(-x / p[1]) * x / (p[1] * p[1])).epsilon(1e-6));
    CHECK(j(r, 2) == doctest::Approx(x * std::cos(p[2] * x)).epsilon(1e-6));
  }
}

TEST_CASE("saturation law recovery") {
  SUBCASE("noiseless") {
    const auto d = saturation_data(421, 8.9, 0.5, 0, 30, 40, 1);
    const auto f = fit_saturation(d);
    CHECK(f.fit.converged);
    CHECK(f.params.i_inf == doctest::Approx(421).epsilon(1e-8));
    CHECK(f.params.p_sat == doctest::Approx(8.9).epsilon(1e-8));
    CHECK(f.params.k_bg == doctest::Approx(0.5).epsilon(1e-8));
  }
  SUBCASE("1% noise, k = 2") {
    const auto d = saturation_data(421, 8.9, 2, 0.01, 50, 40, 2);
    const auto f = fit_saturation(d);
    CHECK(f.fit.converged);
    CHECK(f.params.i_inf == doctest::Approx(421).epsilon(0.05));
    CHECK(f.params.p_sat == doctest::Approx(8.9).epsilon(0.05));
    CHECK(f.params.k_bg == doctest::Approx(2).epsilon(0.05));
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(f.fit.covariance(i, i) >= 0);
  }
  SUBCASE("green channel anchor") {
    const auto d = saturation_data(421, 20.5, 0, 0.01, 50, 80, 3);
    const auto f = fit_saturation(d);
    CHECK(f.params.p_sat == doctest::Approx(20.5).epsilon(0.05));
  }
  SUBCASE("low power only is flagged") {
    const auto d = saturation_data(421, 8.9, 0, 0.001, 10, 2, 4);
    const auto f = fit_saturation(d);
    CHECK(f.poor_conditioning);
  }
}

TEST_CASE("fit invariants") {
  const auto d = saturation_data(421, 8.9, 1, 0.02, 40, 40, 5);
  const auto f = fit_saturation(d);
  REQUIRE(f.fit.converged);
  for (std::size_t i = 1; i < f.fit.chi2_history.size(); ++i)
    CHECK(f.fit.chi2_history[i] <= f.fit.chi2_history[i - 1]);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(f.fit.covariance(i, i) >= 0);

  // Reordering the data does not move the estimate.
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(6);
  std::shuffle(idx.begin(), idx.end(), rng);
  DataSeries s;
  for (auto i : idx) {
    s.x.push_back(d.x[i]);
    s.y.push_back(d.y[i]);
  }
  const auto g = fit_saturation(s);
  for (Eigen::Index i = 0; i < 3; ++i)
    CHECK(g.fit.params[i] == doctest::Approx(f.fit.params[i]).epsilon(1e-6));

  // Log reparameterization keeps positive parameters positive even when the
  // data pull them toward zero.
  DataSeries flat;
  for (int i = 1; i <= 20; ++i) {
    flat.x.push_back(i);
    flat.y.push_back(5.0 + 0.01 * (i % 3));
  }
  const ModelFn decay = [](const Eigen::VectorXd& p, double x) { return p[0] * std::exp(-x / p[1]); };
  LmOptions opt;
  opt.positive = {true, true};
  const auto h = levenberg_marquardt(decay, flat, Eigen::Vector2d(1, 1), opt);
  CHECK(h.params[0] > 0);
  CHECK(h.params[1] > 0);
}

TEST_CASE("fit error paths") {
  const ModelFn bad = [](const Eigen::VectorXd& p, double x) { return std::log(p[0] - 2) * x; };
  DataSeries d{{1, 2, 3}, {1, 2, 3}, {}};
  CHECK_THROWS_AS(levenberg_marquardt(bad, d, Eigen::VectorXd::Constant(1, 1.0)), Error);
  CHECK_THROWS_AS(fit_saturation(DataSeries{{1, 2}, {1, 2}, {}}), Error);
  CHECK_THROWS_AS(fit_saturation(DataSeries{{1, 2, 3, 4}, {1, 2, 3}, {}}), Error);

  // Only the product of the two parameters is identified.
  DataSeries lin;
  for (int i = 0; i < 10; ++i) {
    lin.x.push_back(i);
    lin.y.push_back(2.0 * i);
  }
  const ModelFn product = [](const Eigen::VectorXd& p, double x) { return p[0] * p[1] * x; };
  const auto f = levenberg_marquardt(product, lin, Eigen::Vector2d(1, 1));
  CHECK(f.rank_deficient);
  CHECK(f.params[0] * f.params[1] == doctest::Approx(2).epsilon(1e-8));
}

TEST_CASE("shifted saturation") {
  const auto r = default_rates();
  const double p_re = 5.1;
  const double i_re = emission_rate(r, Excitationd{p_re, 0});
  DataSeries d;
  for (double p : {0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0, 1.5, 2.0}) {
    d.x.push_back(p);
    d.y.push_back(emission_rate(r, Excitationd{p_re, p}));
  }
  const auto f = fit_shifted_saturation(d, i_re);
  CHECK(f.fit.converged);
  CHECK_FALSE(f.poor_conditioning);
  // The model curve is only roughly hyperbolic: compare the fitted curve with
  // the forward model where the response is appreciable.
  const double top = d.y.back() - i_re;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double di = d.y[i] - i_re;
    if (di < 0.1 * top) continue;
    const double model = f.delta_i_inf * d.x[i] / (d.x[i] + f.p_sat);
    CHECK(model == doctest::Approx(di).epsilon(0.10));
  }

  DataSeries zero = d;
  for (auto& y : zero.y) y = i_re;
  const auto z = fit_shifted_saturation(zero, i_re);
  CHECK(std::abs(z.delta_i_inf) < 1e-12);
  CHECK(z.poor_conditioning);
}

TEST_CASE("g2 fits on noiseless curves") {
  G2Histogram h;
  const G2ModelParamsd truth{0.8, 1.2, 30};
  for (int i = -200; i <= 200; ++i) {
    const double t = 0.5 * i;
    h.taus_ns.push_back(t);
    h.values.push_back(g2_model(truth, t));
    h.errors.push_back(0.01);
    h.raw_coincidences.push_back(0);
  }
  h.bin_width_ns = 0.5;
  const auto f = fit_g2(h, G2Form::kFull);
  CHECK(f.fit.converged);
  CHECK(f.params.a == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(f.params.tau1 == doctest::Approx(1.2).epsilon(1e-6));
  CHECK(f.params.tau2 == doctest::Approx(30).epsilon(1e-6));
  CHECK(f.g2_zero == doctest::Approx(0).epsilon(1e-6));

  const auto b = fit_g2(h, G2Form::kBunchingOnly);
  CHECK(b.params.tau2 == doctest::Approx(30).epsilon(0.02));
  CHECK(b.params.a == doctest::Approx(0.8).epsilon(0.05));

  // Contrast form on a 12-emitter curve.
  G2Histogram h12 = h;
  for (std::size_t i = 0; i < h12.values.size(); ++i)
    h12.values[i] = g2_model_n(truth, h12.taus_ns[i], 12);
  G2FitOptions opt;
  opt.contrast = true;
  const auto c = fit_g2(h12, G2Form::kFull, opt);
  CHECK(c.contrast == doctest::Approx(1.0 / 12).epsilon(1e-6));
  CHECK(c.g2_zero == doctest::Approx(11.0 / 12).epsilon(1e-6));
  CHECK(c.params.a == doctest::Approx(0.8).epsilon(1e-5));
}

TEST_CASE("decay fits") {
  SUBCASE("1.7 ns at 1e6 photons") {
    const auto h = simulate_decay_histogram(1.7, PulseConfig{}, 1000000, 0.02, 1);
    const auto f = fit_decay(h);
    CHECK(f.fit.converged);
    CHECK(f.tau_ns == doctest::Approx(1.7).epsilon(0.02));
  }
  SUBCASE("pure exponential") {
    PulseConfig p;
    p.irf_sigma_ps = 0;
    const auto h = simulate_decay_histogram(2.0, p, 1000000, 0.0, 2);
    const auto f = fit_decay(h, {1.5, 10.0});
    CHECK(std::abs(f.tau_ns - 2.0) < 3 * f.fit.stderr_[0]);
  }
  SUBCASE("a 9% shorter lifetime") {
    const auto h1 = simulate_decay_histogram(1.7, PulseConfig{}, 1000000, 0.01, 3);
    const auto h2 = simulate_decay_histogram(1.7 * 0.91, PulseConfig{}, 1000000, 0.01, 4);
    const double ratio = fit_decay(h2).tau_ns / fit_decay(h1).tau_ns;
    CHECK(ratio >= 0.88);
    CHECK(ratio <= 0.94);
  }
  const auto h = simulate_decay_histogram(1.7, PulseConfig{}, 1000, 0.0, 5);
  CHECK_THROWS_AS(fit_decay(h, {5.0, 5.05}), Error);
}
