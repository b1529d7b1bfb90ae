#ifndef SSP_EVALKIT_HPP
#define SSP_EVALKIT_HPP

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ssp/fusion.hpp"
#include "ssp/geo.hpp"
#include "ssp/trainer.hpp"

namespace ssp {

inline constexpr double kEarthRadiusKm = 6371.0;

double great_circle_km(const GeoCoord& a, const GeoCoord& b);

/// Climatological baseline: per-depth mean of the cell's training-month
/// profiles. Throws when the cell has no history.
Profile climatology_mean(const RasterStack& profiles, int i, int j,
                         const std::vector<TimeKey>& months);

/// Spatial-interpolation baseline: per-depth inverse-distance weighting
/// (power 2, great-circle distances) over the available neighbour profiles.
Profile idw_profile(const std::vector<Profile>& neighbors,
                    const std::vector<GeoCoord>& coords, const GeoCoord& target,
                    double power = 2.0);

/// RMSE over the layers whose depth lies in [z_lo, z_hi].
double rmse_profile(const Profile& pred, const Profile& truth, double z_lo,
                    double z_hi);
double rmse_profile(const Profile& pred, const Profile& truth);

inline constexpr std::array<const char*, 4> kMethodNames = {"sa_mdf_cnn", "cnn",
                                                            "sitp", "mean"};

struct EvalReport {
  struct Row {
    GeoCoord location;
    TimeKey time;
    std::array<double, 4> rmse{};  // kMethodNames order
  };
  struct BandSection {
    double depth = 0.0;            // band is [surface, depth]
    std::vector<Row> rows;
    std::array<double, 4> average{};
  };

  std::vector<Row> rows;               // full-depth RMSE per test sample
  std::array<double, 4> average{};
  std::vector<BandSection> bands;
  Eigen::MatrixXd depth_mae;           // layers x 4, mean absolute error
  DepthGrid grid;
  std::uint64_t test_hash = 0;         // fingerprint of the shared test inputs
  int test_samples = 0;
};

/// Runs all four methods over the test split on byte-identical inputs.
/// `band_depths` lists the shallow bands ([surface, d]) to break out; depths
/// beyond the grid are skipped.
EvalReport compare_methods(const Dataset& dataset, const Checkpoint& attention,
                           const Checkpoint& cnn_only, const RasterStack& profiles,
                           const std::vector<TimeKey>& train_months,
                           const std::vector<double>& band_depths = {200.0, 300.0,
                                                                     500.0});

void write_method_table_csv(std::ostream& os, const EvalReport& report,
                            const std::string& provenance);
void write_band_table_csv(std::ostream& os, const EvalReport& report,
                          const std::string& provenance);
void write_depth_mae_csv(std::ostream& os, const EvalReport& report,
                         const std::string& provenance);

/// Minimal multi-series line chart; one polyline per column of `series`.
void write_svg_lines(std::ostream& os, const Eigen::VectorXd& x,
                     const Eigen::MatrixXd& series,
                     const std::vector<std::string>& labels,
                     const std::string& x_label, const std::string& y_label);

}  // namespace ssp

#endif  // SSP_EVALKIT_HPP
