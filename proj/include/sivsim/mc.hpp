#pragma once

// Exact stochastic simulation of emitter ensembles: photon timestamp streams
// for an HBT setup, binned count-rate traces and pulsed decay histograms.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sivsim/rates.hpp"

namespace sivsim {

struct DetectionConfig {
  double efficiency = 0.05;       // per emitted photon
  double background_rate = 300.0; // counts/s per channel
  double split_ratio = 0.5;       // probability a photon goes to channel A
  double jitter_sigma_ps = 35.0;  // Gaussian timing jitter, truncated at 8 sigma
  double dead_time_ps = 0.0;      // non-paralyzable, per channel
  std::size_t max_records = std::size_t{1} << 28;
};

void validate(const DetectionConfig& d);

enum class DetectorChannel : std::uint8_t { kA = 0, kB = 1 };

struct PhotonRecord {
  std::uint64_t t_ps;
  DetectorChannel channel;

  friend bool operator==(const PhotonRecord&, const PhotonRecord&) = default;
};

/// Records in nondecreasing time order. duration_ps is the acquisition window
/// when known (0 when read from a file that does not carry it).
struct PhotonStream {
  std::vector<PhotonRecord> records;
  std::uint64_t duration_ps = 0;

  std::size_t count(DetectorChannel ch) const;
};

struct EmitterEnsemble {
  int n_emitters = 1;
  TransitionRatesd rates{};
  Excitationd exc{};
};

struct ScheduleSegment {
  double duration_s;
  Excitationd exc;
};

struct ExcitationSchedule {
  std::vector<ScheduleSegment> segments;

  double total_duration_s() const;
};

/// kPhotonLumped samples the time to the next *detected* photon in one shot
/// (geometric cycle count, binomial shelving count, gamma dwell sums), which is
/// exact in distribution and costs O(1) per detected photon. kPerTransition
/// draws every jump of the chain.
enum class SimulationMethod { kPhotonLumped, kPerTransition };

struct SimulationOptions {
  SimulationMethod method = SimulationMethod::kPhotonLumped;
  double chunk_s = 0.01;  // streaming window
};

/// Receives finished, time-ordered records chunk by chunk.
using RecordSink = std::function<void(std::span<const PhotonRecord>)>;

/// Streaming core behind every simulation entry point. Emitters keep their
/// state across segment boundaries.
void simulate_schedule(int n_emitters, const TransitionRatesd& rates,
                       const DetectionConfig& detection,
                       const ExcitationSchedule& schedule, std::uint64_t seed,
                       const RecordSink& sink, const SimulationOptions& options = {});

/// Expected number of records for a schedule (signal plus background).
double expected_record_count(int n_emitters, const TransitionRatesd& rates,
                             const DetectionConfig& detection,
                             const ExcitationSchedule& schedule);

/// Collects a constant-excitation run into memory. Throws CapacityExceeded
/// when the expected record count is above detection.max_records.
PhotonStream simulate_stream(const EmitterEnsemble& ensemble,
                             const DetectionConfig& detection, double duration_s,
                             std::uint64_t seed, const SimulationOptions& options = {});

struct TimeTrace {
  double bin_width_ms = 0;
  std::vector<std::uint64_t> counts;   // both channels summed
  std::vector<std::size_t> segment;    // schedule segment of each bin
};

/// Segment durations must be whole multiples of bin_width_ms.
TimeTrace simulate_time_trace(const EmitterEnsemble& ensemble,
                              const DetectionConfig& detection,
                              const ExcitationSchedule& schedule,
                              double bin_width_ms, std::uint64_t seed,
                              const SimulationOptions& options = {});

/// Per-transition trajectory of one emitter with no detection: occupation
/// time of each level and the number of jumps made.
struct OccupancyStats {
  double time_ns[3] = {0, 0, 0};
  std::uint64_t transitions = 0;
  std::uint64_t emissions = 0;
};

OccupancyStats simulate_occupancy(const TransitionRatesd& rates,
                                  const Excitationd& exc, double duration_ns,
                                  std::uint64_t seed);

struct PulseConfig {
  double rep_rate_mhz = 80.0;
  double pulse_energy_scale = 0.1;  // mean excitations per pulse
  double irf_sigma_ps = 50.0;
  double window_ns = 12.5;
  double pulse_offset_ns = 1.0;     // pulse arrival inside the window

  double period_ns() const { return 1e3 / rep_rate_mhz; }
};

void validate(const PulseConfig& p);

struct DecayHistogram {
  double bin_width_ps = 0;
  double irf_sigma_ps = 0;
  double pulse_offset_ns = 0;
  std::vector<std::uint64_t> counts;
  double acquisition_time_s = 0;  // pulses needed at the given excitation scale

  double bin_center_ns(std::size_t i) const {
    return (static_cast<double>(i) + 0.5) * bin_width_ps * 1e-3;
  }
};

/// Exponential delays (tau_obs) convolved with a Gaussian IRF, wrapped modulo
/// the pulse period, with a uniform background fraction mixed in.
DecayHistogram simulate_decay_histogram(double tau_obs_ns, const PulseConfig& pulse,
                                        std::uint64_t n_photons,
                                        double background_fraction,
                                        std::uint64_t seed,
                                        double bin_width_ps = 10.0);

}  // namespace sivsim
