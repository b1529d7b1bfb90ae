#include "ssp/geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ssp/json_io.hpp"
#include "ssp/util.hpp"

namespace ssp {

namespace {

constexpr double kGridTol = 1e-6;  // lattice alignment tolerance, degrees

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void row_error(std::size_t line_no, const std::string& what) {
  throw std::runtime_error("line " + std::to_string(line_no) + ": " + what);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (start <= line.size()) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') {
    fields.back().pop_back();
  }
  return fields;
}

double parse_number(const std::string& token, std::size_t line_no,
                    const char* what) {
  try {
    std::size_t consumed = 0;
    const double v = std::stod(token, &consumed);
    if (consumed != token.size() || !std::isfinite(v)) {
      row_error(line_no, std::string("non-numeric ") + what + ": '" + token + "'");
    }
    return v;
  } catch (const std::invalid_argument&) {
    row_error(line_no, std::string("non-numeric ") + what + ": '" + token + "'");
  } catch (const std::out_of_range&) {
    row_error(line_no, std::string("out-of-range ") + what + ": '" + token + "'");
  }
}

/// Infers cell-centre positions and spacing from the coordinate values seen
/// in a file. Values must lie on a uniform lattice; interior positions may be
/// entirely absent (they become missing cells).
struct Axis {
  double origin = 0.0;
  double step = 1.0;
  int count = 0;

  int index_of(double v) const {
    const double r = (v - origin) / step;
    const int i = static_cast<int>(std::lround(r));
    if (std::abs(v - (origin + step * i)) > kGridTol || i < 0 || i >= count) {
      throw std::runtime_error("coordinate off the inferred grid: " +
                               fmt_double(v));
    }
    return i;
  }
};

Axis infer_axis(const std::set<double>& values, double fallback_step) {
  if (values.empty()) throw std::runtime_error("no data rows");
  Axis ax;
  ax.origin = *values.begin();
  if (values.size() == 1) {
    ax.step = fallback_step;
    ax.count = 1;
    return ax;
  }
  double step = std::numeric_limits<double>::infinity();
  double prev = ax.origin;
  for (auto it = std::next(values.begin()); it != values.end(); ++it) {
    step = std::min(step, *it - prev);
    prev = *it;
  }
  for (double v : values) {
    const double r = (v - ax.origin) / step;
    if (std::abs(r - std::lround(r)) > kGridTol) {
      throw std::runtime_error("coordinates are not on a uniform grid");
    }
  }
  ax.step = step;
  ax.count = static_cast<int>(std::lround((*values.rbegin() - ax.origin) / step)) + 1;
  return ax;
}

/// Mean in deviation form: exact for identical inputs and exactly shift
/// equivariant, which the aggregation contracts require.
double stable_mean(const std::vector<double>& vals) {
  const double ref = vals.front();
  double acc = 0.0;
  for (double v : vals) acc += v - ref;
  return ref + acc / static_cast<double>(vals.size());
}

}  // namespace

void validate_coord(const GeoCoord& c) {
  if (!(c.lat >= -90.0 && c.lat <= 90.0)) {
    throw std::invalid_argument("latitude out of range: " + fmt_double(c.lat));
  }
  if (!(c.lon > -180.0 && c.lon <= 180.0)) {
    throw std::invalid_argument("longitude out of range: " + fmt_double(c.lon));
  }
}

std::string to_string(const TimeKey& t) {
  char buf[16];
  if (t.day == 0) {
    std::snprintf(buf, sizeof(buf), "%04d-%02d", t.year, t.month);
  } else {
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", t.year, t.month, t.day);
  }
  return buf;
}

TimeKey parse_time(const std::string& text) {
  TimeKey t;
  int n = 0;
  if (text.size() == 10 &&
      std::sscanf(text.c_str(), "%d-%d-%d%n", &t.year, &t.month, &t.day, &n) == 3 &&
      n == 10) {
    // full date
  } else if (text.size() == 7 &&
             std::sscanf(text.c_str(), "%d-%d%n", &t.year, &t.month, &n) == 2 &&
             n == 7) {
    t.day = 0;
  } else {
    throw std::invalid_argument("bad date '" + text + "', want YYYY-MM or YYYY-MM-DD");
  }
  if (t.month < 1 || t.month > 12) {
    throw std::invalid_argument("month out of range in '" + text + "'");
  }
  if (t.day < 0 || t.day > 31) {
    throw std::invalid_argument("day out of range in '" + text + "'");
  }
  return t;
}

std::vector<TimeKey> expand_months(const std::string& spec) {
  std::vector<TimeKey> out;
  std::stringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    const std::size_t dots = token.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_time(token).monthly());
      continue;
    }
    TimeKey a = parse_time(token.substr(0, dots)).monthly();
    const TimeKey b = parse_time(token.substr(dots + 2)).monthly();
    if (b < a) throw std::invalid_argument("descending month range: " + token);
    while (a <= b) {
      out.push_back(a);
      a.month += 1;
      if (a.month > 12) {
        a.month = 1;
        a.year += 1;
      }
    }
  }
  return out;
}

DepthGrid::DepthGrid(double z_min, double z_max, double step)
    : z_min_(z_min), z_max_(z_max), step_(step) {
  if (!(step > 0.0)) throw std::invalid_argument("depth step must be positive");
  if (!(z_max >= z_min)) throw std::invalid_argument("z_max below z_min");
  const double ratio = (z_max - z_min) / step;
  const long long n = std::llround(ratio);
  if (std::abs(ratio - static_cast<double>(n)) > 1e-9) {
    throw std::invalid_argument("depth span is not a whole number of steps");
  }
  layers_ = static_cast<int>(n) + 1;
}

int RasterStack::find_time(const TimeKey& t) const {
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] == t) return static_cast<int>(k);
  }
  return -1;
}

std::optional<std::pair<int, int>> RasterStack::cell_of(const GeoCoord& c) const {
  const double ri = (c.lat - geom.lat0) / geom.dlat;
  const double rj = (c.lon - geom.lon0) / geom.dlon;
  const int i = static_cast<int>(std::lround(ri));
  const int j = static_cast<int>(std::lround(rj));
  if (i < 0 || i >= geom.n_lat || j < 0 || j >= geom.n_lon) return std::nullopt;
  if (std::abs(c.lat - geom.lat_of(i)) > kGridTol ||
      std::abs(c.lon - geom.lon_of(j)) > kGridTol) {
    return std::nullopt;
  }
  return std::make_pair(i, j);
}

std::optional<Profile> RasterStack::profile_at(int t, int i, int j) const {
  if (!depth_grid) return std::nullopt;
  Profile p{*depth_grid, Eigen::VectorXd(depth_grid->layers())};
  for (int h = 0; h < depth_grid->layers(); ++h) {
    const double v = at(t, i, j, h);
    if (is_missing(v)) return std::nullopt;
    p.speeds[h] = v;
  }
  return p;
}

void RasterStack::validate() const {
  if (geom.n_lat <= 0 || geom.n_lon <= 0 || geom.dlat <= 0 || geom.dlon <= 0) {
    throw std::runtime_error("raster geometry has non-positive dimensions");
  }
  const std::size_t want = static_cast<std::size_t>(times.size()) * geom.n_lat *
                           geom.n_lon * depth_count();
  if (values.size() != want) {
    throw std::runtime_error("raster value count " + std::to_string(values.size()) +
                             " does not match geometry (" + std::to_string(want) + ")");
  }
}

RasterStack parse_sst_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty SST file");
  {
    auto hdr = split_csv(line);
    if (hdr != std::vector<std::string>{"date", "lat", "lon", "sst"}) {
      row_error(1, "expected header 'date,lat,lon,sst'");
    }
  }

  struct Cell {
    double value;
    bool missing;
  };
  std::map<std::tuple<TimeKey, double, double>, Cell> rows;
  std::set<double> lats, lons;
  std::set<TimeKey> times;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv(line);
    if (f.size() != 4) row_error(line_no, "expected 4 fields, got " + std::to_string(f.size()));
    TimeKey t;
    try {
      t = parse_time(f[0]);
    } catch (const std::exception& e) {
      row_error(line_no, e.what());
    }
    const GeoCoord c{parse_number(f[1], line_no, "lat"), parse_number(f[2], line_no, "lon")};
    try {
      validate_coord(c);
    } catch (const std::exception& e) {
      row_error(line_no, e.what());
    }
    Cell cell{0.0, f[3].empty()};
    if (!cell.missing) cell.value = parse_number(f[3], line_no, "sst");
    auto [it, inserted] = rows.emplace(std::make_tuple(t, c.lat, c.lon), cell);
    (void)it;
    if (!inserted) {
      row_error(line_no, "duplicate key " + to_string(t) + "," + fmt_double(c.lat) +
                             "," + fmt_double(c.lon));
    }
    lats.insert(c.lat);
    lons.insert(c.lon);
    times.insert(t);
  }
  if (rows.empty()) throw std::runtime_error("SST file has no data rows");

  const Axis lon_axis = infer_axis(lons, 1.0);
  const Axis lat_axis = infer_axis(lats, lon_axis.step);

  RasterStack out;
  out.geom = {lat_axis.origin, lon_axis.origin, lat_axis.step, lon_axis.step,
              lat_axis.count, lon_axis.count};
  out.variable = "sst";
  out.units = "degC";
  out.times.assign(times.begin(), times.end());
  out.values.assign(static_cast<std::size_t>(out.times.size()) * out.geom.cells(),
                    out.missing_value);
  for (const auto& [key, cell] : rows) {
    if (cell.missing) continue;
    const auto& [t, lat, lon] = key;
    const int ti = out.find_time(t);
    out.at(ti, lat_axis.index_of(lat), lon_axis.index_of(lon)) = cell.value;
  }
  out.validate();
  return out;
}

RasterStack parse_profile_table(std::istream& in, const DepthGrid& grid) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty profile file");
  {
    auto hdr = split_csv(line);
    if (hdr != std::vector<std::string>{"date", "lat", "lon", "depth_m", "speed_mps"}) {
      row_error(1, "expected header 'date,lat,lon,depth_m,speed_mps'");
    }
  }

  struct Samples {
    std::vector<double> depths, speeds;
  };
  std::map<std::tuple<TimeKey, double, double>, Samples> groups;
  std::set<double> lats, lons;
  std::set<TimeKey> times;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv(line);
    if (f.size() != 5) row_error(line_no, "expected 5 fields, got " + std::to_string(f.size()));
    TimeKey t;
    try {
      t = parse_time(f[0]).monthly();  // profile stacks are monthly
    } catch (const std::exception& e) {
      row_error(line_no, e.what());
    }
    const GeoCoord c{parse_number(f[1], line_no, "lat"), parse_number(f[2], line_no, "lon")};
    try {
      validate_coord(c);
    } catch (const std::exception& e) {
      row_error(line_no, e.what());
    }
    const double depth = parse_number(f[3], line_no, "depth_m");
    const double speed = parse_number(f[4], line_no, "speed_mps");
    auto& g = groups[std::make_tuple(t, c.lat, c.lon)];
    if (!g.depths.empty()) {
      if (depth == g.depths.back()) {
        row_error(line_no, "duplicate depth " + fmt_double(depth) + " for " +
                               to_string(t) + "," + fmt_double(c.lat) + "," +
                               fmt_double(c.lon));
      }
      if (depth < g.depths.back()) {
        row_error(line_no, "non-monotonic depths for " + to_string(t) + "," +
                               fmt_double(c.lat) + "," + fmt_double(c.lon));
      }
    }
    g.depths.push_back(depth);
    g.speeds.push_back(speed);
    lats.insert(c.lat);
    lons.insert(c.lon);
    times.insert(t);
  }
  if (groups.empty()) throw std::runtime_error("profile file has no data rows");

  const Axis lon_axis = infer_axis(lons, 1.0);
  const Axis lat_axis = infer_axis(lats, lon_axis.step);

  RasterStack out;
  out.geom = {lat_axis.origin, lon_axis.origin, lat_axis.step, lon_axis.step,
              lat_axis.count, lon_axis.count};
  out.variable = "sound_speed";
  out.units = "m/s";
  out.depth_grid = grid;
  out.times.assign(times.begin(), times.end());
  out.values.assign(static_cast<std::size_t>(out.times.size()) * out.geom.cells() *
                        grid.layers(),
                    out.missing_value);
  for (const auto& [key, samples] : groups) {
    const auto& [t, lat, lon] = key;
    if (samples.depths.size() < 2) {
      throw std::runtime_error("profile at " + to_string(t) + "," + fmt_double(lat) +
                               "," + fmt_double(lon) + " has fewer than 2 samples");
    }
    Profile p = resample_linear(samples.depths, samples.speeds, grid);
    const int ti = out.find_time(t);
    const int i = lat_axis.index_of(lat);
    const int j = lon_axis.index_of(lon);
    for (int h = 0; h < grid.layers(); ++h) out.at(ti, i, j, h) = p.speeds[h];
  }
  out.validate();
  return out;
}

RasterStack monthly_mean(const RasterStack& daily) {
  daily.validate();
  if (daily.times.empty()) throw std::runtime_error("monthly_mean: no rasters");

  std::map<TimeKey, std::vector<int>> months;  // monthly key -> time indices
  for (std::size_t t = 0; t < daily.times.size(); ++t) {
    months[daily.times[t].monthly()].push_back(static_cast<int>(t));
  }

  RasterStack out;
  out.geom = daily.geom;
  out.variable = daily.variable;
  out.units = daily.units;
  out.missing_value = daily.missing_value;
  out.depth_grid = daily.depth_grid;
  out.provenance = daily.provenance;
  for (const auto& [key, idx] : months) {
    (void)idx;
    out.times.push_back(key);
  }
  const int depth = daily.depth_count();
  out.values.assign(static_cast<std::size_t>(out.times.size()) * out.geom.cells() * depth,
                    out.missing_value);

  int mo = 0;
  std::vector<double> present;
  for (const auto& [key, idx] : months) {
    (void)key;
    for (int i = 0; i < out.geom.n_lat; ++i) {
      for (int j = 0; j < out.geom.n_lon; ++j) {
        for (int h = 0; h < depth; ++h) {
          present.clear();
          for (int t : idx) {
            const double v = daily.at(t, i, j, h);
            if (!daily.is_missing(v)) present.push_back(v);
          }
          if (!present.empty()) out.at(mo, i, j, h) = stable_mean(present);
        }
      }
    }
    ++mo;
  }
  return out;
}

RasterStack regrid_block_mean(const RasterStack& src, const GridGeometry& dst) {
  src.validate();
  const double rlat = dst.dlat / src.geom.dlat;
  const double rlon = dst.dlon / src.geom.dlon;
  const int blat = static_cast<int>(std::lround(rlat));
  const int blon = static_cast<int>(std::lround(rlon));
  if (blat < 1 || blon < 1 || std::abs(rlat - blat) > kGridTol ||
      std::abs(rlon - blon) > kGridTol) {
    throw std::runtime_error("geometry mismatch: non-integer block ratio");
  }
  if (src.geom.n_lat != dst.n_lat * blat || src.geom.n_lon != dst.n_lon * blon) {
    throw std::runtime_error("geometry mismatch: cell counts are not block multiples");
  }
  // Destination centres must sit at the centre of their source block.
  if (std::abs(dst.lat0 - (src.geom.lat0 + 0.5 * (blat - 1) * src.geom.dlat)) > kGridTol ||
      std::abs(dst.lon0 - (src.geom.lon0 + 0.5 * (blon - 1) * src.geom.dlon)) > kGridTol) {
    throw std::runtime_error("geometry mismatch: block centres are misaligned");
  }

  RasterStack out;
  out.geom = dst;
  out.variable = src.variable;
  out.units = src.units;
  out.missing_value = src.missing_value;
  out.depth_grid = src.depth_grid;
  out.times = src.times;
  out.provenance = src.provenance;
  const int depth = src.depth_count();
  out.values.assign(static_cast<std::size_t>(out.times.size()) * dst.cells() * depth,
                    out.missing_value);

  std::vector<double> present;
  for (std::size_t t = 0; t < out.times.size(); ++t) {
    for (int i = 0; i < dst.n_lat; ++i) {
      for (int j = 0; j < dst.n_lon; ++j) {
        for (int h = 0; h < depth; ++h) {
          present.clear();
          for (int bi = 0; bi < blat; ++bi) {
            for (int bj = 0; bj < blon; ++bj) {
              const double v =
                  src.at(static_cast<int>(t), i * blat + bi, j * blon + bj, h);
              if (!src.is_missing(v)) present.push_back(v);
            }
          }
          if (!present.empty()) {
            out.at(static_cast<int>(t), i, j, h) = stable_mean(present);
          }
        }
      }
    }
  }
  return out;
}

double interp_linear(std::span<const double> depths, std::span<const double> speeds,
                     double z) {
  if (depths.empty() || depths.size() != speeds.size()) {
    throw std::invalid_argument("interp_linear: bad knot arrays");
  }
  for (std::size_t k = 1; k < depths.size(); ++k) {
    if (!(depths[k] > depths[k - 1])) {
      throw std::invalid_argument("interp_linear: depths must be strictly increasing");
    }
  }
  if (z < depths.front() || z > depths.back()) {
    throw std::invalid_argument("interp_linear: extrapolation request at z=" +
                                fmt_double(z));
  }
  const auto it = std::lower_bound(depths.begin(), depths.end(), z);
  if (it != depths.end() && *it == z) {
    return speeds[static_cast<std::size_t>(it - depths.begin())];
  }
  const std::size_t k = static_cast<std::size_t>(it - depths.begin());
  const double d0 = depths[k - 1], d1 = depths[k];
  const double s0 = speeds[k - 1], s1 = speeds[k];
  return s0 + (s1 - s0) * ((z - d0) / (d1 - d0));
}

Profile resample_linear(std::span<const double> depths, std::span<const double> speeds,
                        const DepthGrid& grid) {
  Profile p{grid, Eigen::VectorXd(grid.layers())};
  for (int h = 0; h < grid.layers(); ++h) {
    p.speeds[h] = interp_linear(depths, speeds, grid.depth(h));
  }
  return p;
}

void write_raster(std::ostream& os, const RasterStack& stack) {
  stack.validate();
  nlohmann::json j;
  j["format"] = "ssp.raster.v1";
  j["variable"] = stack.variable;
  j["units"] = stack.units;
  j["missing"] = stack.missing_value;
  j["geometry"] = stack.geom;
  j["depth_grid"] = stack.depth_grid ? nlohmann::json(*stack.depth_grid)
                                     : nlohmann::json(nullptr);
  j["times"] = stack.times;
  j["provenance"] = stack.provenance;
  os << j.dump() << '\n';
  write_f64(os, stack.values.data(), stack.values.size());
  if (!os) throw std::runtime_error("raster write failed");
}

RasterStack read_raster(std::istream& is) {
  const nlohmann::json j = read_header_line(is, "ssp.raster.v1");
  RasterStack stack;
  stack.variable = j.at("variable").get<std::string>();
  stack.units = j.at("units").get<std::string>();
  stack.missing_value = j.at("missing").get<double>();
  stack.geom = j.at("geometry").get<GridGeometry>();
  if (!j.at("depth_grid").is_null()) {
    stack.depth_grid = j.at("depth_grid").get<DepthGrid>();
  }
  stack.times = j.at("times").get<std::vector<TimeKey>>();
  stack.provenance = j.value("provenance", "");
  const std::size_t count = static_cast<std::size_t>(stack.times.size()) *
                            stack.geom.cells() * stack.depth_count();
  stack.values.resize(count);
  read_f64(is, stack.values.data(), count);
  stack.validate();
  return stack;
}

namespace {
/// CSV emission uses a mid-month placeholder day for monthly keys so the
/// output satisfies the daily date schema; monthly_mean folds it back.
TimeKey csv_day(const TimeKey& t) { return t.day == 0 ? TimeKey{t.year, t.month, 15} : t; }
}  // namespace

void write_sst_csv(std::ostream& os, const RasterStack& stack) {
  stack.validate();
  if (stack.depth_grid) {
    throw std::invalid_argument("write_sst_csv: scalar stacks only");
  }
  os << "date,lat,lon,sst\n";
  for (std::size_t t = 0; t < stack.times.size(); ++t) {
    const std::string date = to_string(csv_day(stack.times[t]));
    for (int i = 0; i < stack.geom.n_lat; ++i) {
      for (int j = 0; j < stack.geom.n_lon; ++j) {
        const double v = stack.at(static_cast<int>(t), i, j);
        os << date << ',' << fmt_double(stack.geom.lat_of(i)) << ','
           << fmt_double(stack.geom.lon_of(j)) << ',';
        if (!stack.is_missing(v)) os << fmt_double(v);
        os << '\n';
      }
    }
  }
}

void write_profile_csv(std::ostream& os, const RasterStack& stack) {
  stack.validate();
  if (!stack.depth_grid) {
    throw std::invalid_argument("write_profile_csv: profile stacks only");
  }
  os << "date,lat,lon,depth_m,speed_mps\n";
  for (std::size_t t = 0; t < stack.times.size(); ++t) {
    const std::string date = to_string(csv_day(stack.times[t]));
    for (int i = 0; i < stack.geom.n_lat; ++i) {
      for (int j = 0; j < stack.geom.n_lon; ++j) {
        const auto p = stack.profile_at(static_cast<int>(t), i, j);
        if (!p) continue;  // partially or fully missing columns are skipped
        for (int h = 0; h < stack.depth_grid->layers(); ++h) {
          os << date << ',' << fmt_double(stack.geom.lat_of(i)) << ','
             << fmt_double(stack.geom.lon_of(j)) << ','
             << fmt_double(stack.depth_grid->depth(h)) << ','
             << fmt_double(p->speeds[h]) << '\n';
        }
      }
    }
  }
}

}  // namespace ssp
