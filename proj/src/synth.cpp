#include "ssp/synth.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "ssp/json_io.hpp"
#include "ssp/util.hpp"

namespace ssp {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Low-order 2D cosine series with seeded coefficients; |field| <= amp
/// everywhere, smooth over the grid so spatial interpolation stays a
/// meaningful comparator.
class SmoothField {
 public:
  SmoothField(Rng& rng, double amp) : amp_(amp) {
    double total = 0.0;
    for (Mode& m : modes_) {
      m.coeff = rng.uniform(-1.0, 1.0);
      m.phase_i = rng.uniform(0.0, 2.0 * kPi);
      m.phase_j = rng.uniform(0.0, 2.0 * kPi);
      total += std::abs(m.coeff);
    }
    if (total > 0.0) {
      for (Mode& m : modes_) m.coeff *= amp_ / total;
    }
  }

  double operator()(int i, int j, int n_lat, int n_lon) const {
    double v = 0.0;
    int k = 0;
    for (int p = 0; p <= 2; ++p) {
      for (int q = 0; q <= 2; ++q) {
        if (p == 0 && q == 0) continue;
        const Mode& m = modes_[static_cast<std::size_t>(k++)];
        v += m.coeff * std::cos(kPi * p * (i + 0.5) / n_lat + m.phase_i) *
             std::cos(kPi * q * (j + 0.5) / n_lon + m.phase_j);
      }
    }
    return v;
  }

 private:
  struct Mode {
    double coeff = 0.0, phase_i = 0.0, phase_j = 0.0;
  };
  std::array<Mode, 8> modes_;
  double amp_;
};

}  // namespace

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"geometry", c.geom},
       {"grid", c.grid},
       {"months", c.months},
       {"seed", c.seed},
       {"munk", {{"c1", c.munk.c1}, {"eps", c.munk.eps}, {"z_axis", c.munk.z_axis},
                 {"scale", c.munk.scale}}},
       {"coupling_gain", c.coupling_gain},
       {"mixed_layer", c.mixed_layer},
       {"sst_base", c.sst_base},
       {"sst_ref", c.sst_ref},
       {"sst_lat_gradient", c.sst_lat_gradient},
       {"sst_seasonal_amp", c.sst_seasonal_amp},
       {"sst_noise_amp", c.sst_noise_amp},
       {"profile_noise_amp", c.profile_noise_amp}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  if (j.contains("geometry")) j.at("geometry").get_to(c.geom);
  if (j.contains("grid")) j.at("grid").get_to(c.grid);
  if (j.contains("months")) j.at("months").get_to(c.months);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("munk")) {
    const auto& m = j.at("munk");
    if (m.contains("c1")) m.at("c1").get_to(c.munk.c1);
    if (m.contains("eps")) m.at("eps").get_to(c.munk.eps);
    if (m.contains("z_axis")) m.at("z_axis").get_to(c.munk.z_axis);
    if (m.contains("scale")) m.at("scale").get_to(c.munk.scale);
  }
  if (j.contains("coupling_gain")) j.at("coupling_gain").get_to(c.coupling_gain);
  if (j.contains("mixed_layer")) j.at("mixed_layer").get_to(c.mixed_layer);
  if (j.contains("sst_base")) j.at("sst_base").get_to(c.sst_base);
  if (j.contains("sst_ref")) j.at("sst_ref").get_to(c.sst_ref);
  if (j.contains("sst_lat_gradient")) j.at("sst_lat_gradient").get_to(c.sst_lat_gradient);
  if (j.contains("sst_seasonal_amp")) j.at("sst_seasonal_amp").get_to(c.sst_seasonal_amp);
  if (j.contains("sst_noise_amp")) j.at("sst_noise_amp").get_to(c.sst_noise_amp);
  if (j.contains("profile_noise_amp")) {
    j.at("profile_noise_amp").get_to(c.profile_noise_amp);
  }
}

double munk_speed(double z, const MunkParams& p) {
  const double zt = 2.0 * (z - p.z_axis) / p.scale;
  return p.c1 * (1.0 + p.eps * (zt - 1.0 + std::exp(-zt)));
}

std::pair<RasterStack, RasterStack> synth_fields(const SynthConfig& config) {
  if (config.geom.n_lat < 3 || config.geom.n_lon < 3) {
    throw std::invalid_argument("synth_fields: region smaller than 3x3");
  }
  if (config.months.empty()) {
    throw std::invalid_argument("synth_fields: no months requested");
  }
  if (!(config.mixed_layer > 0.0)) {
    throw std::invalid_argument("synth_fields: mixed_layer must be positive");
  }

  RasterStack sst;
  sst.geom = config.geom;
  sst.variable = "sst";
  sst.units = "degC";

  RasterStack profiles;
  profiles.geom = config.geom;
  profiles.variable = "sound_speed";
  profiles.units = "m/s";
  profiles.depth_grid = config.grid;

  for (const TimeKey& m : config.months) {
    sst.times.push_back(m.monthly());
    profiles.times.push_back(m.monthly());
  }
  const int H = config.grid.layers();
  sst.values.assign(static_cast<std::size_t>(sst.times.size()) * config.geom.cells(), 0.0);
  profiles.values.assign(
      static_cast<std::size_t>(profiles.times.size()) * config.geom.cells() * H, 0.0);

  const double lat_mid =
      config.geom.lat0 + 0.5 * config.geom.dlat * (config.geom.n_lat - 1);

  Eigen::VectorXd munk_curve(H), decay(H);
  for (int h = 0; h < H; ++h) {
    const double z = config.grid.depth(h);
    munk_curve[h] = munk_speed(z, config.munk);
    decay[h] = std::exp(-z / config.mixed_layer);
  }

  Rng rng(config.seed);
  for (std::size_t t = 0; t < sst.times.size(); ++t) {
    // one smooth anomaly field per month and variable, in a fixed draw order
    const SmoothField sst_noise(rng, config.sst_noise_amp);
    const SmoothField speed_noise(rng, config.profile_noise_amp);
    const double season =
        config.sst_seasonal_amp * std::sin(2.0 * kPi * (sst.times[t].month - 1) / 12.0);
    for (int i = 0; i < config.geom.n_lat; ++i) {
      const double lat_term =
          config.sst_lat_gradient * (config.geom.lat_of(i) - lat_mid);
      for (int j = 0; j < config.geom.n_lon; ++j) {
        const double temp = config.sst_base + lat_term + season +
                            sst_noise(i, j, config.geom.n_lat, config.geom.n_lon);
        sst.at(static_cast<int>(t), i, j) = temp;
        const double anomaly = config.coupling_gain * (temp - config.sst_ref);
        const double bias = speed_noise(i, j, config.geom.n_lat, config.geom.n_lon);
        for (int h = 0; h < H; ++h) {
          profiles.at(static_cast<int>(t), i, j, h) =
              munk_curve[h] + anomaly * decay[h] + bias;
        }
      }
    }
  }
  return {std::move(sst), std::move(profiles)};
}

}  // namespace ssp
