#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "sivsim/correlation.hpp"
#include "sivsim/defaults.hpp"
#include "sivsim/fit.hpp"

using namespace sivsim;

namespace {

PhotonStream poisson_pair(double rate_a, double rate_b, double duration_s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PhotonStream s;
  s.duration_ps = static_cast<std::uint64_t>(duration_s * 1e12);
  const double rates[2] = {rate_a, rate_b};
  for (int c = 0; c < 2; ++c) {
    std::exponential_distribution<double> gap(rates[c] * 1e-12);
    double t = gap(rng);
    while (t < static_cast<double>(s.duration_ps)) {
      s.records.push_back({static_cast<std::uint64_t>(t), static_cast<DetectorChannel>(c)});
      t += gap(rng);
    }
  }
  std::sort(s.records.begin(), s.records.end(), [](const PhotonRecord& x, const PhotonRecord& y) {
    return x.t_ps != y.t_ps ? x.t_ps < y.t_ps : x.channel < y.channel;
  });
  return s;
}

// Rates realizing k12 = 0.2, k21 = 1, k23 = 0.5, k31 = 0.1 at P_re = 10.
TransitionRatesd reference_rates() { return {1, 0.5, 0.1, 0.02, 0.02, 1, 1e30}; }

}  // namespace

TEST_CASE("g2 model values") {
  const G2ModelParamsd p{0.8333, 0.8333, 5.4545};
  CHECK(g2_model(p, 0.0) == doctest::Approx(0.0).epsilon(1e-15));
  const double direct = 1 - 1.8333 * std::exp(-5.4545 / 0.8333) + 0.8333 * std::exp(-1.0);
  CHECK(g2_model(p, 5.4545) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(g2_model(p, 5.4545) == doctest::Approx(1.3038).epsilon(1e-4));
  CHECK(g2_model(p, -5.4545) == g2_model(p, 5.4545));
  CHECK(g2_model(G2ModelParamsd{0, 1, 5}, 1e6) == 1.0);
  CHECK(g2_bunching_model(p, 0.0) == doctest::Approx(1.8333));
}

TEST_CASE("g2 parameters from rates") {
  const auto r = reference_rates();
  const auto p = g2_from_rates(r, Excitationd{10, 0});
  CHECK(p.a == doctest::Approx(0.1 / (0.1 * 1.2)).epsilon(1e-12));
  CHECK(p.tau2 == doctest::Approx(1 / (0.1 + 0.1 / 1.2)).epsilon(1e-12));
  CHECK(p.tau1 == doctest::Approx(1 / 1.2).epsilon(1e-12));
  CHECK(p.a == doctest::Approx(0.8333).epsilon(1e-4));
  CHECK(p.tau2 == doctest::Approx(5.4545).epsilon(1e-4));
  CHECK_THROWS_AS(g2_from_rates(r, Excitationd{0, 0}), Error);

  auto open = r;
  open.k23_0 = 1e-300;
  const auto q = g2_from_rates(open, Excitationd{10, 0});
  CHECK(q.a < 1e-290);
  CHECK(q.tau2 == doctest::Approx(1 / 0.1).epsilon(1e-12));
}

TEST_CASE("tau2 is the slow relaxation time of the generator") {
  // With the dark state much slower than the optical cycle the bunching
  // decay separates cleanly from the slow eigenvalue.
  std::mt19937_64 rng(21);
  for (int i = 0; i < 100; ++i) {
    const double k21 = oracle::log_uniform(rng, 0.3, 1);
    const double k12 = oracle::log_uniform(rng, 0.01, 1);
    const double k23 = oracle::log_uniform(rng, 1e-9, 1e-7);
    const double k31 = oracle::log_uniform(rng, 1e-9, 1e-7);
    const TransitionRatesd r{k21, k23, k31, k12, k12, 1, 1e30};
    const auto p = g2_from_rates(r, Excitationd{1, 0});
    const auto ev = oracle::relaxation_rates(oracle::generator(k12, k21, k23, k31));
    REQUIRE(p.tau2 == doctest::Approx(1 / ev[0]).epsilon(1e-6));
    // k23 and k31 are negligible next to the optical rates here.
    REQUIRE(p.tau1 == doctest::Approx(1 / ev[1]).epsilon(1e-6));
  }
}

TEST_CASE("tau2 deviates from the eigenvalue without timescale separation") {
  const auto r = default_rates();
  const Excitationd e{10, 0};
  const auto p = g2_from_rates(r, e);
  const auto ev = oracle::relaxation_rates(oracle::generator(r, e));
  const double err = std::abs(p.tau2 * ev[0] - 1);
  MESSAGE("default config: tau2 relative error against the slow eigenvalue " << err);
  CHECK(err > 1e-3);
}

TEST_CASE("n-emitter scaling") {
  CHECK(scale_for_n_emitters(0.3, 1) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(scale_for_n_emitters(0.0, 12) == doctest::Approx(11.0 / 12).epsilon(1e-15));
  CHECK(scale_for_n_emitters(0.0, 1000000) == doctest::Approx(1).epsilon(1e-5));
  CHECK(scale_for_n_emitters(0.0, 1, 0.5) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(scale_for_n_emitters(0.0, 0), Error);
  const G2ModelParamsd p{0, 1, 5};
  CHECK(g2_model_n(p, 0.0, 12) == doctest::Approx(0.9167).epsilon(1e-4));
  CHECK(signal_fraction(3, 1) == 0.75);
}

TEST_CASE("bunching amplitude falls with green power and levels off") {
  const auto r = default_rates();
  std::vector<double> a;
  std::vector<double> p_ge;
  for (double p = 0; p <= 20; p += 0.01) {
    p_ge.push_back(p);
    a.push_back(g2_from_rates(r, Excitationd{10, p}).a);
  }
  for (std::size_t i = 1; i < a.size(); ++i) REQUIRE(a[i] < a[i - 1]);
  // a falls like the donor-ionization factor times a slowly rising pump
  // share, so its asymptote is 0. The plateau is where 90% of the drop is done.
  CHECK(g2_from_rates(r, Excitationd{10, 1e9}).a < 1e-6 * a.front());
  double plateau = -1;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] <= 0.1 * a.front() && plateau < 0) plateau = p_ge[i];
  MESSAGE("90% of the drop in a is done at " << plateau << " mW");
  CHECK(plateau > 0);
}

TEST_CASE("independent Poisson streams give g2 = 1") {
  const auto s = poisson_pair(2e5, 3e5, 5.0, 1);
  const auto h = estimate_g2(s, 1.0, 50);
  REQUIRE(h.values.size() == 101);
  CHECK(h.taus_ns.front() == doctest::Approx(-50));
  CHECK(h.taus_ns[50] == 0.0);
  int outliers = 0;
  for (std::size_t i = 0; i < h.values.size(); ++i)
    if (std::abs(h.values[i] - 1) > 3 * h.errors[i]) ++outliers;
  CHECK(outliers <= 2);
  CHECK(h.rate_a == doctest::Approx(2e5).epsilon(0.01));
  CHECK(h.rate_b == doctest::Approx(3e5).epsilon(0.01));
}

TEST_CASE("streaming accumulation equals one-shot estimation") {
  const auto s = poisson_pair(1e5, 1e5, 0.5, 2);
  G2Accumulator acc(0.5, 20);
  const std::span<const PhotonRecord> all(s.records);
  for (std::size_t i = 0; i < all.size(); i += 977) acc.add(all.subspan(i, std::min<std::size_t>(977, all.size() - i)));
  const auto h1 = acc.finish(0.5);
  const auto h2 = estimate_g2(s, 0.5, 20);
  CHECK(h1.raw_coincidences == h2.raw_coincidences);
  CHECK(h1.values == h2.values);
}

TEST_CASE("coincidence sign convention") {
  // Single pair: B 7 ns after A lands in the +7 ns bin.
  PhotonStream s;
  s.records = {{1000, DetectorChannel::kA}, {8000, DetectorChannel::kB}};
  s.duration_ps = 1000000;
  const auto h = estimate_g2(s, 1, 10);
  for (std::size_t i = 0; i < h.taus_ns.size(); ++i)
    CHECK(h.raw_coincidences[i] == (h.taus_ns[i] == 7.0 ? 1u : 0u));
  PhotonStream empty;
  empty.records = {{1000, DetectorChannel::kA}};
  CHECK_THROWS_AS(estimate_g2(empty, 1, 10), Error);
}

TEST_CASE("single emitter shows antibunching") {
  DetectionConfig det;
  const auto s = simulate_stream({1, default_rates(), {10, 0}}, det, 5.0, 3);
  const auto h = estimate_g2(s, 0.1, 5);
  const double g0 = h.values[h.values.size() / 2];
  MESSAGE("g2(0) = " << g0 << " +- " << h.errors[h.values.size() / 2]);
  CHECK(g0 < 0.1);
}

TEST_CASE("simulated bunching matches the analytic amplitude") {
  const auto r = reference_rates();
  const Excitationd e{10, 0};
  const auto truth = g2_from_rates(r, e);
  DetectionConfig det;
  det.background_rate = 0;
  for (auto method : {SimulationMethod::kPhotonLumped, SimulationMethod::kPerTransition}) {
    const auto s = simulate_stream({1, r, e}, det, method == SimulationMethod::kPhotonLumped ? 2.0 : 0.5, 4, {method});
    const auto h = estimate_g2(s, 0.25, 40);
    const auto f = fit_g2(h, G2Form::kFull);
    MESSAGE("a = " << f.params.a << " (" << truth.a << "), tau2 = " << f.params.tau2 << " ("
                   << truth.tau2 << "), tau1 = " << f.params.tau1 << " (" << truth.tau1 << ")");
    CHECK(f.fit.converged);
    CHECK(f.params.a == doctest::Approx(truth.a).epsilon(0.15));
    CHECK(f.params.tau2 == doctest::Approx(truth.tau2).epsilon(0.15));
  }
}

TEST_CASE("simulated g2 matches the exact three-level correlation") {
  // After a photon the emitter sits in |1>; g2(tau) = P(|2> at tau | |1> at 0) / n2.
  const auto r = reference_rates();
  const Excitationd e{10, 0};
  const Eigen::Matrix3d q = oracle::generator(r, e);
  const double n2 = steady_state(r, e).n2;
  auto exact = [&](double tau) {
    return oracle::propagate(q, std::abs(tau))(1, 0) / n2;
  };
  DetectionConfig det;
  det.background_rate = 0;
  det.jitter_sigma_ps = 0;
  const auto s = simulate_stream({1, r, e}, det, 2.0, 5);
  const auto h = estimate_g2(s, 0.25, 30);
  double chi2 = 0;
  for (std::size_t i = 0; i < h.values.size(); ++i) {
    double m = 0;  // bin average
    for (int k = 0; k < 8; ++k) m += exact(h.taus_ns[i] + (k + 0.5) / 8 * 0.25 - 0.125) / 8;
    const double z = (h.values[i] - m) / h.errors[i];
    chi2 += z * z;
  }
  const double per_bin = chi2 / static_cast<double>(h.values.size());
  MESSAGE("chi2 per bin against the exact correlation: " << per_bin);
  CHECK(per_bin < 1.5);
}
