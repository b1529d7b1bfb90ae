#ifndef SSP_SYNTH_HPP
#define SSP_SYNTH_HPP

#include <cstdint>
#include <json.hpp>
#include <utility>
#include <vector>

#include "ssp/geo.hpp"

namespace ssp {

/// Canonical deep-ocean profile with a sound-channel minimum at z_axis.
struct MunkParams {
  double c1 = 1500.0;      // m/s at the channel axis
  double eps = 0.00737;
  double z_axis = 1300.0;  // m
  double scale = 1300.0;   // m
};

/// Deterministic synthetic ocean: a Munk background, a surface-temperature
/// coupling that decays over the mixed layer, and smooth band-limited noise.
/// The seed fixes every emitted value.
struct SynthConfig {
  GridGeometry geom{5.5, 150.5, 1.0, 1.0, 12, 12};
  DepthGrid grid{5.0, 68.0, 1.0};
  std::vector<TimeKey> months;
  std::uint64_t seed = 1;
  MunkParams munk;
  double coupling_gain = 3.0;     // m/s per degC of surface anomaly
  double mixed_layer = 80.0;      // m, decay scale of the coupling
  double sst_base = 18.0;         // degC
  double sst_ref = 18.0;          // anomaly reference for the coupling
  double sst_lat_gradient = -0.35;  // degC per degree latitude from the region centre
  double sst_seasonal_amp = 4.0;  // degC
  double sst_noise_amp = 0.5;     // degC, bound on the smooth field
  double profile_noise_amp = 0.1;  // m/s, bound on the smooth field
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

double munk_speed(double z, const MunkParams& p);

/// Monthly SST and profile stacks in the standard raster layout.
std::pair<RasterStack, RasterStack> synth_fields(const SynthConfig& config);

}  // namespace ssp

#endif  // SSP_SYNTH_HPP
