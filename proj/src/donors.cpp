#include "sivsim/donors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sivsim/error.hpp"
#include "sivsim/random.hpp"

namespace sivsim {

double ppm_to_density(double ppm) {
  require(std::isfinite(ppm) && ppm > 0, Errc::kInvalidArgument, "concentration must be > 0");
  return ppm * 1e-6 * kDiamondAtomicDensity;
}

double lanczos_gamma(double x) {
  static constexpr double kG = 7.0;
  static constexpr double kCoef[9] = {
      0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
      771.32342877765313,   -176.61502916214059,   12.507343278686905,
      -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
  require(std::isfinite(x), Errc::kInvalidArgument, "gamma argument must be finite");
  if (x < 0.5) {
    const double s = std::sin(std::numbers::pi * x);
    require(s != 0, Errc::kInvalidArgument, "gamma pole");
    return std::numbers::pi / (s * lanczos_gamma(1 - x));
  }
  x -= 1;
  double a = kCoef[0];
  const double t = x + kG + 0.5;
  for (int i = 1; i < 9; ++i) a += kCoef[i] / (x + i);
  return std::sqrt(2 * std::numbers::pi) * std::pow(t, x + 0.5) * std::exp(-t) * a;
}

namespace {

void check(int k, double density) {
  require(k >= 1, Errc::kInvalidArgument, "neighbor rank must be >= 1");
  require(std::isfinite(density) && density > 0, Errc::kInvalidArgument,
          "density must be > 0");
}

double ball_volume(double r) { return 4.0 / 3.0 * std::numbers::pi * r * r * r; }

}  // namespace

double nn_distance_cdf(int k, double density, double r_nm) {
  check(k, density);
  if (r_nm <= 0) return 0.0;
  const double m = density * ball_volume(r_nm);
  // Poisson upper tail P(N >= k).
  double term = std::exp(-m);
  double lower = 0;
  for (int j = 0; j < k; ++j) {
    lower += term;
    term *= m / (j + 1);
  }
  return std::clamp(1.0 - lower, 0.0, 1.0);
}

double nn_distance_quantile(int k, double density, double q) {
  check(k, density);
  require(q > 0 && q < 1, Errc::kInvalidArgument, "quantile must be in (0, 1)");
  const double scale = std::cbrt(3.0 / (4.0 * std::numbers::pi * density));
  double lo = 0, hi = scale;
  while (nn_distance_cdf(k, density, hi) < q) hi *= 2;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (nn_distance_cdf(k, density, mid) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double mean_nn_distance(int k, double density) {
  check(k, density);
  const double ratio = lanczos_gamma(k + 1.0 / 3.0) / lanczos_gamma(k);
  return ratio * std::cbrt(3.0 / (4.0 * std::numbers::pi * density));
}

double mean_distance_two_nearest(double density) {
  return 0.5 * (mean_nn_distance(1, density) + mean_nn_distance(2, density));
}

std::vector<double> sample_nn_distances(double density, int k, std::size_t n_samples,
                                        std::uint64_t seed) {
  check(k, density);
  require(n_samples >= 1, Errc::kInvalidArgument, "n_samples must be >= 1");
  const double radius = 1.1 * nn_distance_quantile(k, density, 1 - 1e-6);
  const double mean_count = density * ball_volume(radius);
  Engine rng(derive_seed(seed, kSeedDonors, 0));
  std::poisson_distribution<long long> count(mean_count);
  std::vector<double> out;
  out.reserve(n_samples);
  std::vector<double> r;
  for (std::size_t s = 0; s < n_samples; ++s) {
    r.clear();
    const long long n = count(rng);
    for (long long i = 0; i < n; ++i) r.push_back(radius * std::cbrt(open_uniform(rng)));
    // Rare miss: extend with the points of successive outer shells, which
    // are an independent Poisson process beyond the ball.
    double inner = radius;
    while (static_cast<int>(r.size()) < k) {
      const double outer = inner * 1.5;
      const double shell_vol = ball_volume(outer) - ball_volume(inner);
      const long long m = std::poisson_distribution<long long>(density * shell_vol)(rng);
      for (long long i = 0; i < m; ++i) {
        const double u = open_uniform(rng);
        r.push_back(std::cbrt(inner * inner * inner +
                              u * (outer * outer * outer - inner * inner * inner)));
      }
      inner = outer;
    }
    std::nth_element(r.begin(), r.begin() + (k - 1), r.end());
    out.push_back(r[static_cast<std::size_t>(k - 1)]);
  }
  return out;
}

}  // namespace sivsim
