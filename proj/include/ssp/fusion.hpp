#ifndef SSP_FUSION_HPP
#define SSP_FUSION_HPP

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ssp/eof.hpp"
#include "ssp/geo.hpp"

namespace ssp {

// Fused-sample layout: per depth layer, 6 channels (sst, lat, lon, and the
// first three eigenvector channels) for each of the 8 ring neighbours.
inline constexpr int kChannels = 6;
inline constexpr int kNeighbors = 8;
inline constexpr int kTokenFeatures = kChannels * kNeighbors;
inline constexpr std::array<const char*, kChannels> kChannelNames = {
    "sst", "lat", "lon", "eof1", "eof2", "eof3"};

/// Flat offset of (layer, channel, neighbour) in a sample tensor.
inline Eigen::Index sample_index(int h, int c, int nb) {
  return (static_cast<Eigen::Index>(h) * kChannels + c) * kNeighbors + nb;
}

/// One supervised pair: ring features in, centre profile out.
struct FusionSample {
  Eigen::VectorXd x;  // flat [H,6,8]
  Eigen::VectorXd y;  // centre profile, m/s, length H
  int cell_i = 0, cell_j = 0;
  GeoCoord center;
  TimeKey time;
};

/// The 8 cells ringing an interior cell, fixed order: the row above left to
/// right, then the two side cells, then the row below. Throws on boundary
/// cells.
std::array<std::pair<int, int>, kNeighbors> neighbor_cells(int i, int j, int n_lat,
                                                           int n_lon);

/// H x 6 block for one neighbour: constant sst/lat/lon columns plus the
/// cell's first three eigenvectors (raw values; normalization happens at
/// serialization). Throws when the basis has fewer than 3 vectors.
Eigen::MatrixXd feature_block(const GeoCoord& coord, double sst, const EofBasis& basis);

struct SampleInputs {
  const RasterStack& sst;       // monthly, same cell layout as profiles
  const RasterStack& profiles;  // monthly profile stack
  const BasisSet& bases;
};

/// Builds the sample for an interior cell and month, or reports why it cannot
/// be built ("missing-sst", "missing-basis", "missing-profile"). Nothing is
/// ever imputed.
std::optional<FusionSample> build_sample(const SampleInputs& in, const TimeKey& month,
                                         int i, int j, std::string* skip_reason);

/// Per-channel z-score statistics from the training split.
struct ChannelStats {
  std::array<double, kChannels> mean{};
  std::array<double, kChannels> stddev{};
  std::array<bool, kChannels> degenerate{};  // stddev clamped to 1
};

ChannelStats compute_stats(const std::vector<const FusionSample*>& train);
void normalize_sample(Eigen::VectorXd& x, const ChannelStats& stats);
void denormalize_sample(Eigen::VectorXd& x, const ChannelStats& stats);

struct DatasetManifest {
  DepthGrid grid;
  ChannelStats stats;
  struct Entry {
    int i = 0, j = 0;
    GeoCoord coord;
    TimeKey time;
    std::string split;      // "train" or "test"
    std::uint64_t offset = 0;  // bytes into the blob
  };
  std::vector<Entry> samples;
  std::string provenance;

  Eigen::Index x_floats() const {
    return static_cast<Eigen::Index>(grid.layers()) * kTokenFeatures;
  }
  Eigen::Index sample_floats() const { return x_floats() + grid.layers(); }
};

/// In-memory dataset: manifest plus the f32 blob (normalized x, raw y).
struct Dataset {
  DatasetManifest manifest;
  std::vector<float> blob;

  int size() const { return static_cast<int>(manifest.samples.size()); }
  std::vector<int> split_indices(const std::string& split) const;
  /// Normalized input and raw label, widened to f64.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> sample(int idx) const;
};

struct SkipRecord {
  int i = 0, j = 0;
  TimeKey time;
  std::string reason;
};

struct BuildReport {
  std::vector<SkipRecord> skipped;
  int candidates = 0;
};

/// Slides the 3x3 window over every interior cell for every listed month.
/// Normalization statistics come from the training samples only.
Dataset build_dataset(const SampleInputs& in, const std::vector<TimeKey>& train_months,
                      const std::vector<TimeKey>& test_months,
                      BuildReport* report = nullptr);

void write_dataset(std::ostream& os, const Dataset& ds);
Dataset read_dataset(std::istream& is);

/// FNV-1a over the blob bytes of one split, in manifest order.
std::uint64_t dataset_split_hash(const Dataset& ds, const std::string& split);

}  // namespace ssp

#endif  // SSP_FUSION_HPP
