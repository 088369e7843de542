#pragma once

// Nitrogen donor geometry for a spatially homogeneous Poisson distribution of
// substitutional nitrogen in diamond.

#include <cstdint>
#include <vector>

namespace sivsim {

/// Carbon atoms per nm^3: mass density 3.515 g/cm^3 over the molar mass
/// 12.011 g/mol, times Avogadro, times 1e-21 cm^3/nm^3. About 176.2.
inline constexpr double kDiamondAtomicDensity = 3.515 / 12.011 * 6.02214076e23 * 1e-21;

/// Number density in nm^-3 of donors at `ppm` of carbon sites.
double ppm_to_density(double ppm);

/// Gamma function by the Lanczos approximation (g = 7, 9 coefficients), with
/// reflection for x < 0.5.
double lanczos_gamma(double x);

/// CDF of the k-th nearest-neighbor distance: the probability that a ball of
/// radius r holds at least k points, 1 - exp(-m) sum_{j<k} m^j/j! with
/// m = (4 pi / 3) density r^3.
double nn_distance_cdf(int k, double density, double r_nm);

/// Inverse of nn_distance_cdf by bisection.
double nn_distance_quantile(int k, double density, double q);

/// E[r_k] = Gamma(k + 1/3) / Gamma(k) (4 pi density / 3)^(-1/3).
double mean_nn_distance(int k, double density);

/// (E[r_1] + E[r_2]) / 2.
double mean_distance_two_nearest(double density);

/// Brute-force oracle: per sample, scatter a Poisson number of points in a
/// ball whose radius holds the k-th neighbor with probability 1 - 1e-6
/// (padded 10%), and return the k-th smallest distance from the center.
std::vector<double> sample_nn_distances(double density, int k, std::size_t n_samples,
                                        std::uint64_t seed);

}  // namespace sivsim
