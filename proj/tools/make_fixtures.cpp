// Regenerates the bundled CSV fixtures in data/ from the default rates.
//   make_fixtures <out_dir>

#include <filesystem>
#include <iostream>
#include <random>

#include "sivsim/defaults.hpp"
#include "sivsim/io.hpp"
#include "sivsim/random.hpp"

using namespace sivsim;

namespace {

// Analytic 12-emitter sweep scaled to 421 kcps under RE, with 1% Gaussian
// multiplicative noise.
Table saturation_fixture(Channel ch, std::uint64_t seed) {
  SweepSpec spec;
  spec.channel = ch;
  spec.n_emitters = 12;
  for (int i = 1; i <= 40; ++i) spec.grid.push_back(static_cast<double>(i));
  DetectionConfig det;
  det.efficiency = efficiency_for_saturation();
  const DataSeries clean = run_saturation_sweep(default_rates(), spec, det);
  Engine rng(derive_seed(seed, kSeedNoise, 0));
  std::normal_distribution<double> noise(0.0, 0.01);
  Table t{{"power_mw", "counts_kcps"}, {}};
  for (std::size_t i = 0; i < clean.size(); ++i)
    t.rows.push_back({clean.x[i], clean.y[i] * (1 + noise(rng))});
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "data";
  std::filesystem::create_directories(dir);
  write_table_csv(saturation_fixture(Channel::kRed, 1), (dir / "saturation_re.csv").string());
  write_table_csv(saturation_fixture(Channel::kGreen, 2), (dir / "saturation_ge.csv").string());
  std::cout << "wrote fixtures to " << dir << "\n";
  return 0;
}
