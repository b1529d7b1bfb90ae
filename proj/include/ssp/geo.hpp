#ifndef SSP_GEO_HPP
#define SSP_GEO_HPP

#include <Eigen/Core>
#include <compare>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace ssp {

/// Reserved value marking absent cells. It is recorded in every raster file
/// header; readers must honour the header value, not this constant.
inline constexpr double kDefaultMissing = -1.0e30;

struct GeoCoord {
  double lat = 0.0;  // decimal degrees north
  double lon = 0.0;  // decimal degrees east
};

/// Throws std::invalid_argument when outside [-90,90] x (-180,180].
void validate_coord(const GeoCoord& c);

/// Calendar key. day == 0 denotes a monthly value; day in [1,31] a daily one.
struct TimeKey {
  int year = 0;
  int month = 1;
  int day = 0;

  auto operator<=>(const TimeKey&) const = default;
  TimeKey monthly() const { return {year, month, 0}; }
};

std::string to_string(const TimeKey& t);           // "2015-07" or "2015-07-03"
TimeKey parse_time(const std::string& text);       // accepts both forms
std::vector<TimeKey> expand_months(const std::string& spec);  // "A,B,C" with "A..B" ranges

/// Uniform vertical grid. Layer h sits at z_min + h * step.
class DepthGrid {
 public:
  DepthGrid() = default;
  DepthGrid(double z_min, double z_max, double step);

  double z_min() const { return z_min_; }
  double z_max() const { return z_max_; }
  double step() const { return step_; }
  int layers() const { return layers_; }
  double depth(int h) const { return z_min_ + step_ * h; }

  bool operator==(const DepthGrid&) const = default;

 private:
  double z_min_ = 5.0;
  double z_max_ = 1980.0;
  double step_ = 1.0;
  int layers_ = 1976;
};

struct Profile {
  DepthGrid grid;
  Eigen::VectorXd speeds;  // m/s, one per layer
};

/// Regular lat/lon cell-centre layout shared by rasters and basis sets.
struct GridGeometry {
  double lat0 = 0.0;  // centre of cell (0, *)
  double lon0 = 0.0;  // centre of cell (*, 0)
  double dlat = 1.0;
  double dlon = 1.0;
  int n_lat = 0;
  int n_lon = 0;

  double lat_of(int i) const { return lat0 + dlat * i; }
  double lon_of(int j) const { return lon0 + dlon * j; }
  GeoCoord coord(int i, int j) const { return {lat_of(i), lon_of(j)}; }
  int cells() const { return n_lat * n_lon; }
  bool operator==(const GridGeometry&) const = default;
};

/// Time-indexed grids of one variable. Scalar stacks have depth_grid unset
/// and one value per cell; profile stacks carry a full column per cell.
/// Value layout: time-major, then lat, then lon, then depth.
struct RasterStack {
  GridGeometry geom;
  std::string variable;  // "sst", "sound_speed", ...
  std::string units;
  double missing_value = kDefaultMissing;
  std::optional<DepthGrid> depth_grid;
  std::vector<TimeKey> times;
  std::vector<double> values;
  std::string provenance;  // opaque config echo, preserved by the file format

  int depth_count() const { return depth_grid ? depth_grid->layers() : 1; }
  std::size_t index(int t, int i, int j, int h = 0) const {
    return ((static_cast<std::size_t>(t) * geom.n_lat + i) * geom.n_lon + j) *
               depth_count() +
           h;
  }
  double at(int t, int i, int j, int h = 0) const {
    return values[index(t, i, j, h)];
  }
  double& at(int t, int i, int j, int h = 0) { return values[index(t, i, j, h)]; }
  bool is_missing(double v) const { return v == missing_value; }

  /// Index of a time key, or -1.
  int find_time(const TimeKey& t) const;

  /// Grid-cell indices for a coordinate, or nullopt when off-grid.
  std::optional<std::pair<int, int>> cell_of(const GeoCoord& c) const;

  /// Full column at a cell; nullopt if any layer is missing.
  std::optional<Profile> profile_at(int t, int i, int j) const;

  void validate() const;  // dimension bookkeeping; throws on mismatch
};

// --- ingestion -------------------------------------------------------------

/// CSV `date,lat,lon,sst`, one row per day and cell, any row order.
/// Empty sst field marks a missing cell. Throws with the offending line
/// number on malformed rows, duplicate keys, or out-of-range coordinates.
RasterStack parse_sst_table(std::istream& in);

/// CSV `date,lat,lon,depth_m,speed_mps`, one row per depth sample. Depths of
/// one profile must appear strictly increasing and span the target grid; each
/// profile is resampled onto `grid`.
RasterStack parse_profile_table(std::istream& in, const DepthGrid& grid);

// --- regridding ------------------------------------------------------------

/// Collapses daily rasters to monthly ones by per-cell arithmetic mean over
/// the days present; cells missing on every day stay missing.
RasterStack monthly_mean(const RasterStack& daily);

/// Averages integer blocks of source cells onto the destination layout (for
/// example 4x4 blocks of a 0.25 degree grid onto 1 degree cells). Missing
/// source cells are excluded; an all-missing block stays missing.
RasterStack regrid_block_mean(const RasterStack& src, const GridGeometry& dst);

// --- vertical resampling ---------------------------------------------------

/// Piecewise-linear value at depth z; knots must be strictly increasing and
/// bracket z (no extrapolation).
double interp_linear(std::span<const double> depths,
                     std::span<const double> speeds, double z);

/// Samples the piecewise-linear curve through the knots at every grid layer.
Profile resample_linear(std::span<const double> depths,
                        std::span<const double> speeds, const DepthGrid& grid);

// --- file formats ----------------------------------------------------------

/// One-line JSON header followed by raw little-endian f64 values.
void write_raster(std::ostream& os, const RasterStack& stack);
RasterStack read_raster(std::istream& is);

/// Emit stacks back into the CSV schemas accepted by the parsers above.
void write_sst_csv(std::ostream& os, const RasterStack& stack);
void write_profile_csv(std::ostream& os, const RasterStack& stack);

}  // namespace ssp

#endif  // SSP_GEO_HPP
