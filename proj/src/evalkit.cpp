#include "ssp/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "ssp/eof.hpp"

namespace ssp {

namespace {

std::string fmt(double v, const char* spec = "%.9g") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string location_label(const GeoCoord& c) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g%c %g%c", std::abs(c.lat), c.lat < 0 ? 'S' : 'N',
                std::abs(c.lon), c.lon < 0 ? 'W' : 'E');
  return buf;
}

constexpr double kDeg = 3.14159265358979323846 / 180.0;

}  // namespace

double great_circle_km(const GeoCoord& a, const GeoCoord& b) {
  const double phi1 = a.lat * kDeg, phi2 = b.lat * kDeg;
  const double dphi = (b.lat - a.lat) * kDeg;
  const double dlam = (b.lon - a.lon) * kDeg;
  const double s = std::sin(dphi / 2.0), t = std::sin(dlam / 2.0);
  const double h = s * s + std::cos(phi1) * std::cos(phi2) * t * t;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

Profile climatology_mean(const RasterStack& profiles, int i, int j,
                         const std::vector<TimeKey>& months) {
  std::vector<Eigen::VectorXd> cols;
  for (const TimeKey& m : months) {
    const int t = profiles.find_time(m.monthly());
    if (t < 0) continue;
    if (auto p = profiles.profile_at(t, i, j)) cols.push_back(std::move(p->speeds));
  }
  if (cols.empty()) {
    throw std::runtime_error("climatology_mean: no history at cell (" +
                             std::to_string(i) + "," + std::to_string(j) + ")");
  }
  ProfileMatrix m{*profiles.depth_grid,
                  Eigen::MatrixXd(profiles.depth_grid->layers(),
                                  static_cast<Eigen::Index>(cols.size()))};
  for (std::size_t c = 0; c < cols.size(); ++c) m.columns.col(c) = cols[c];
  return mean_profile(m);
}

Profile idw_profile(const std::vector<Profile>& neighbors,
                    const std::vector<GeoCoord>& coords, const GeoCoord& target,
                    double power) {
  if (neighbors.empty() || neighbors.size() != coords.size()) {
    throw std::invalid_argument("idw_profile: need matching neighbour profiles and coords");
  }
  std::vector<double> w(neighbors.size());
  double total = 0.0;
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    const double d = great_circle_km(coords[k], target);
    if (d == 0.0) {
      throw std::invalid_argument("idw_profile: target coincides with a neighbour");
    }
    w[k] = 1.0 / std::pow(d, power);
    total += w[k];
  }
  // Deviation form keeps the convex combination exact for identical inputs.
  Profile out = neighbors.front();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(out.speeds.size());
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    if (neighbors[k].speeds.size() != out.speeds.size()) {
      throw std::invalid_argument("idw_profile: profile length mismatch");
    }
    acc += (w[k] / total) * (neighbors[k].speeds - out.speeds);
  }
  out.speeds += acc;
  return out;
}

double rmse_profile(const Profile& pred, const Profile& truth, double z_lo, double z_hi) {
  if (pred.speeds.size() != truth.speeds.size()) {
    throw std::invalid_argument("rmse_profile: length mismatch");
  }
  double acc = 0.0;
  int n = 0;
  for (int h = 0; h < pred.speeds.size(); ++h) {
    const double z = pred.grid.depth(h);
    if (z < z_lo || z > z_hi) continue;
    const double d = pred.speeds[h] - truth.speeds[h];
    acc += d * d;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("rmse_profile: empty depth range");
  return std::sqrt(acc / static_cast<double>(n));
}

double rmse_profile(const Profile& pred, const Profile& truth) {
  return rmse_profile(pred, truth, -std::numeric_limits<double>::infinity(),
                      std::numeric_limits<double>::infinity());
}

EvalReport compare_methods(const Dataset& dataset, const Checkpoint& attention,
                           const Checkpoint& cnn_only, const RasterStack& profiles,
                           const std::vector<TimeKey>& train_months,
                           const std::vector<double>& band_depths) {
  if (attention.model.variant != Variant::kAttention ||
      cnn_only.model.variant != Variant::kCnnOnly) {
    throw std::invalid_argument("compare_methods: checkpoints for the wrong variants");
  }
  if (!profiles.depth_grid) {
    throw std::invalid_argument("compare_methods: profile stack has no depth grid");
  }
  const std::vector<int> test_idx = dataset.split_indices("test");
  if (test_idx.empty()) throw std::runtime_error("compare_methods: no test samples");

  EvalReport report;
  report.grid = dataset.manifest.grid;
  report.test_hash = dataset_split_hash(dataset, "test");
  report.test_samples = static_cast<int>(test_idx.size());
  const int H = report.grid.layers();
  report.depth_mae = Eigen::MatrixXd::Zero(H, 4);

  std::vector<double> usable_bands;
  for (double d : band_depths) {
    if (d >= report.grid.z_min() && d <= report.grid.z_max()) usable_bands.push_back(d);
  }
  for (double d : usable_bands) {
    EvalReport::BandSection section;
    section.depth = d;
    report.bands.push_back(section);
  }

  for (int idx : test_idx) {
    const auto& entry = dataset.manifest.samples[static_cast<std::size_t>(idx)];
    auto [x, y] = dataset.sample(idx);

    const int t = profiles.find_time(entry.time);
    if (t < 0) {
      throw std::runtime_error("compare_methods: profile stack lacks month " +
                               to_string(entry.time));
    }
    // Truth comes from the raster, not the dataset's f32 label copy, so all
    // methods score against full-precision profiles.
    const auto truth_column = profiles.profile_at(t, entry.i, entry.j);
    if (!truth_column) {
      throw std::runtime_error("compare_methods: missing truth profile at cell (" +
                               std::to_string(entry.i) + "," + std::to_string(entry.j) +
                               ") " + to_string(entry.time));
    }
    const Profile& truth = *truth_column;
    std::array<Profile, 4> preds;
    preds[0] = Profile{report.grid, predict(attention.params, x)};
    preds[1] = Profile{report.grid, predict(cnn_only.params, x)};
    {
      std::vector<Profile> nb;
      std::vector<GeoCoord> nb_coords;
      for (const auto& [ni, nj] :
           neighbor_cells(entry.i, entry.j, profiles.geom.n_lat, profiles.geom.n_lon)) {
        if (auto p = profiles.profile_at(t, ni, nj)) {
          nb.push_back(std::move(*p));
          nb_coords.push_back(profiles.geom.coord(ni, nj));
        }
      }
      preds[2] = idw_profile(nb, nb_coords, entry.coord);
    }
    preds[3] = climatology_mean(profiles, entry.i, entry.j, train_months);

    EvalReport::Row row;
    row.location = entry.coord;
    row.time = entry.time;
    for (int m = 0; m < 4; ++m) {
      row.rmse[static_cast<std::size_t>(m)] = rmse_profile(preds[m], truth);
      report.depth_mae.col(m) +=
          (preds[m].speeds - truth.speeds).cwiseAbs();
    }
    report.rows.push_back(row);

    for (std::size_t b = 0; b < usable_bands.size(); ++b) {
      EvalReport::Row band_row = row;
      for (int m = 0; m < 4; ++m) {
        band_row.rmse[static_cast<std::size_t>(m)] =
            rmse_profile(preds[m], truth, 0.0, usable_bands[b]);
      }
      report.bands[b].rows.push_back(band_row);
    }
  }

  report.depth_mae /= static_cast<double>(test_idx.size());
  auto averages = [](const std::vector<EvalReport::Row>& rows) {
    std::array<double, 4> avg{};
    for (const auto& r : rows) {
      for (std::size_t m = 0; m < 4; ++m) avg[m] += r.rmse[m];
    }
    for (auto& v : avg) v /= static_cast<double>(rows.size());
    return avg;
  };
  report.average = averages(report.rows);
  for (auto& band : report.bands) band.average = averages(band.rows);
  return report;
}

namespace {

void write_comment_header(std::ostream& os, const EvalReport& report,
                          const std::string& provenance) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(report.test_hash));
  os << "# test_inputs_fnv1a: " << buf << '\n';
  os << "# test_samples: " << report.test_samples << '\n';
  if (!provenance.empty()) os << "# config: " << provenance << '\n';
}

void write_row(std::ostream& os, const std::string& head, const TimeKey* time,
               const std::array<double, 4>& rmse) {
  os << head << ',' << (time ? to_string(*time) : std::string());
  for (double v : rmse) os << ',' << fmt(v);
  os << '\n';
}

}  // namespace

void write_method_table_csv(std::ostream& os, const EvalReport& report,
                            const std::string& provenance) {
  write_comment_header(os, report, provenance);
  os << "location,time,sa_mdf_cnn,cnn,sitp,mean\n";
  for (const auto& r : report.rows) {
    write_row(os, location_label(r.location), &r.time, r.rmse);
  }
  write_row(os, "Average", nullptr, report.average);
}

void write_band_table_csv(std::ostream& os, const EvalReport& report,
                          const std::string& provenance) {
  write_comment_header(os, report, provenance);
  os << "# band definition: RMSE over layers from the surface down to the named depth\n";
  os << "band_m,location,time,sa_mdf_cnn,cnn,sitp,mean\n";
  for (const auto& band : report.bands) {
    for (const auto& r : band.rows) {
      write_row(os, fmt(band.depth) + "," + location_label(r.location), &r.time, r.rmse);
    }
    write_row(os, fmt(band.depth) + ",Average", nullptr, band.average);
  }
}

void write_depth_mae_csv(std::ostream& os, const EvalReport& report,
                         const std::string& provenance) {
  write_comment_header(os, report, provenance);
  os << "depth_m,mae_sa_mdf_cnn,mae_cnn,mae_sitp,mae_mean\n";
  for (int h = 0; h < report.grid.layers(); ++h) {
    os << fmt(report.grid.depth(h));
    for (int m = 0; m < 4; ++m) os << ',' << fmt(report.depth_mae(h, m));
    os << '\n';
  }
}

void write_svg_lines(std::ostream& os, const Eigen::VectorXd& x,
                     const Eigen::MatrixXd& series,
                     const std::vector<std::string>& labels,
                     const std::string& x_label, const std::string& y_label) {
  if (x.size() != series.rows() || labels.size() != static_cast<std::size_t>(series.cols())) {
    throw std::invalid_argument("write_svg_lines: shape mismatch");
  }
  const int width = 720, height = 480, margin = 56;
  const double x_min = x.minCoeff(), x_max = x.maxCoeff();
  double y_min = series.minCoeff(), y_max = series.maxCoeff();
  if (y_max == y_min) y_max = y_min + 1.0;
  const double xr = x_max > x_min ? x_max - x_min : 1.0;
  auto px = [&](double v) {
    return margin + (v - x_min) / xr * (width - 2 * margin);
  };
  auto py = [&](double v) {
    return height - margin - (v - y_min) / (y_max - y_min) * (height - 2 * margin);
  };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b"};
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
     << height << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<line x1='" << margin << "' y1='" << height - margin << "' x2='"
     << width - margin << "' y2='" << height - margin << "' stroke='black'/>\n";
  os << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
     << height - margin << "' stroke='black'/>\n";
  os << "<text x='" << width / 2 << "' y='" << height - 12
     << "' text-anchor='middle' font-size='14'>" << x_label << "</text>\n";
  os << "<text x='16' y='" << height / 2 << "' font-size='14' transform='rotate(-90 16 "
     << height / 2 << ")' text-anchor='middle'>" << y_label << "</text>\n";
  for (Eigen::Index c = 0; c < series.cols(); ++c) {
    os << "<polyline fill='none' stroke='" << palette[c % 6] << "' stroke-width='1.5' points='";
    for (Eigen::Index r = 0; r < x.size(); ++r) {
      os << fmt(px(x[r]), "%.2f") << ',' << fmt(py(series(r, c)), "%.2f") << ' ';
    }
    os << "'/>\n";
    os << "<text x='" << width - margin + 4 << "' y='"
       << fmt(py(series(series.rows() - 1, c)), "%.2f") << "' font-size='12' fill='"
       << palette[c % 6] << "'>" << labels[static_cast<std::size_t>(c)] << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace ssp
