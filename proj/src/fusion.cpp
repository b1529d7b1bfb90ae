#include "ssp/fusion.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "ssp/json_io.hpp"
#include "ssp/util.hpp"

namespace ssp {

std::array<std::pair<int, int>, kNeighbors> neighbor_cells(int i, int j, int n_lat,
                                                           int n_lon) {
  if (i < 1 || i > n_lat - 2 || j < 1 || j > n_lon - 2) {
    throw std::invalid_argument("boundary cell (" + std::to_string(i) + "," +
                                std::to_string(j) + ") has no full neighbour ring");
  }
  return {{{i - 1, j - 1},
           {i - 1, j},
           {i - 1, j + 1},
           {i, j - 1},
           {i, j + 1},
           {i + 1, j - 1},
           {i + 1, j},
           {i + 1, j + 1}}};
}

Eigen::MatrixXd feature_block(const GeoCoord& coord, double sst, const EofBasis& basis) {
  if (basis.k_max() < 3) {
    throw std::invalid_argument("feature_block: basis carries fewer than 3 vectors");
  }
  const int h = basis.grid.layers();
  Eigen::MatrixXd block(h, kChannels);
  block.col(0).setConstant(sst);
  block.col(1).setConstant(coord.lat);
  block.col(2).setConstant(coord.lon);
  block.col(3) = basis.eigvecs.col(0);
  block.col(4) = basis.eigvecs.col(1);
  block.col(5) = basis.eigvecs.col(2);
  return block;
}

std::optional<FusionSample> build_sample(const SampleInputs& in, const TimeKey& month,
                                         int i, int j, std::string* skip_reason) {
  auto skip = [&](const char* why) -> std::optional<FusionSample> {
    if (skip_reason) *skip_reason = why;
    return std::nullopt;
  };
  const auto ring = neighbor_cells(i, j, in.profiles.geom.n_lat, in.profiles.geom.n_lon);

  const int ts = in.sst.find_time(month.monthly());
  if (ts < 0) return skip("missing-sst");
  const int tp = in.profiles.find_time(month.monthly());
  if (tp < 0) return skip("missing-profile");

  const int H = in.bases.grid.layers();
  FusionSample sample;
  sample.cell_i = i;
  sample.cell_j = j;
  sample.center = in.profiles.geom.coord(i, j);
  sample.time = month.monthly();
  sample.x.resize(static_cast<Eigen::Index>(H) * kTokenFeatures);

  for (int nb = 0; nb < kNeighbors; ++nb) {
    const auto [ni, nj] = ring[static_cast<std::size_t>(nb)];
    const double sst = in.sst.at(ts, ni, nj);
    if (in.sst.is_missing(sst)) return skip("missing-sst");
    const EofBasis* basis = in.bases.basis_at(ni, nj);
    if (basis == nullptr || basis->k_max() < 3) return skip("missing-basis");
    const Eigen::MatrixXd block = feature_block(in.profiles.geom.coord(ni, nj), sst, *basis);
    for (int h = 0; h < H; ++h) {
      for (int c = 0; c < kChannels; ++c) {
        sample.x[sample_index(h, c, nb)] = block(h, c);
      }
    }
  }

  auto label = in.profiles.profile_at(tp, i, j);
  if (!label) return skip("missing-profile");
  sample.y = std::move(label->speeds);
  return sample;
}

ChannelStats compute_stats(const std::vector<const FusionSample*>& train) {
  ChannelStats stats;
  if (train.empty()) {
    stats.stddev.fill(1.0);
    stats.degenerate.fill(true);
    return stats;
  }
  std::array<double, kChannels> sum{}, sumsq{};
  std::size_t count = 0;
  for (const FusionSample* s : train) {
    const int H = static_cast<int>(s->x.size()) / kTokenFeatures;
    for (int h = 0; h < H; ++h) {
      for (int c = 0; c < kChannels; ++c) {
        for (int nb = 0; nb < kNeighbors; ++nb) {
          const double v = s->x[sample_index(h, c, nb)];
          sum[c] += v;
          sumsq[c] += v * v;
        }
      }
    }
    count += static_cast<std::size_t>(H) * kNeighbors;
  }
  for (int c = 0; c < kChannels; ++c) {
    const double n = static_cast<double>(count);
    stats.mean[c] = sum[c] / n;
    const double var = std::max(sumsq[c] / n - stats.mean[c] * stats.mean[c], 0.0);
    stats.stddev[c] = std::sqrt(var);
    if (stats.stddev[c] <= 1e-12) {
      stats.stddev[c] = 1.0;
      stats.degenerate[c] = true;
    }
  }
  return stats;
}

void normalize_sample(Eigen::VectorXd& x, const ChannelStats& stats) {
  const int H = static_cast<int>(x.size()) / kTokenFeatures;
  for (int h = 0; h < H; ++h) {
    for (int c = 0; c < kChannels; ++c) {
      for (int nb = 0; nb < kNeighbors; ++nb) {
        auto& v = x[sample_index(h, c, nb)];
        v = (v - stats.mean[c]) / stats.stddev[c];
      }
    }
  }
}

void denormalize_sample(Eigen::VectorXd& x, const ChannelStats& stats) {
  const int H = static_cast<int>(x.size()) / kTokenFeatures;
  for (int h = 0; h < H; ++h) {
    for (int c = 0; c < kChannels; ++c) {
      for (int nb = 0; nb < kNeighbors; ++nb) {
        auto& v = x[sample_index(h, c, nb)];
        v = v * stats.stddev[c] + stats.mean[c];
      }
    }
  }
}

std::vector<int> Dataset::split_indices(const std::string& split) const {
  std::vector<int> idx;
  for (int k = 0; k < size(); ++k) {
    if (manifest.samples[static_cast<std::size_t>(k)].split == split) idx.push_back(k);
  }
  return idx;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> Dataset::sample(int idx) const {
  const auto& entry = manifest.samples.at(static_cast<std::size_t>(idx));
  const float* base = blob.data() + entry.offset / sizeof(float);
  const Eigen::Index nx = manifest.x_floats();
  const Eigen::Index ny = manifest.grid.layers();
  Eigen::VectorXd x(nx), y(ny);
  for (Eigen::Index k = 0; k < nx; ++k) x[k] = base[k];
  for (Eigen::Index k = 0; k < ny; ++k) y[k] = base[nx + k];
  return {std::move(x), std::move(y)};
}

Dataset build_dataset(const SampleInputs& in, const std::vector<TimeKey>& train_months,
                      const std::vector<TimeKey>& test_months, BuildReport* report) {
  if (train_months.empty() && test_months.empty()) {
    throw std::invalid_argument("build_dataset: no months requested");
  }
  const GridGeometry& geom = in.profiles.geom;
  if (geom.n_lat < 3 || geom.n_lon < 3) {
    throw std::invalid_argument("build_dataset: region smaller than 3x3");
  }
  if (in.sst.geom != geom) {
    throw std::invalid_argument("build_dataset: sst and profile layouts differ");
  }
  if (!in.profiles.depth_grid || !(*in.profiles.depth_grid == in.bases.grid)) {
    throw std::invalid_argument("build_dataset: basis depth grid does not match profiles");
  }

  std::vector<FusionSample> samples;
  std::vector<std::string> splits;
  BuildReport local;
  auto sweep = [&](const std::vector<TimeKey>& months, const char* split) {
    for (const TimeKey& m : months) {
      for (int i = 1; i <= geom.n_lat - 2; ++i) {
        for (int j = 1; j <= geom.n_lon - 2; ++j) {
          ++local.candidates;
          std::string reason;
          if (auto s = build_sample(in, m, i, j, &reason)) {
            samples.push_back(std::move(*s));
            splits.emplace_back(split);
          } else {
            local.skipped.push_back({i, j, m.monthly(), reason});
          }
        }
      }
    }
  };
  sweep(train_months, "train");
  sweep(test_months, "test");

  std::vector<const FusionSample*> train_ptrs;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (splits[k] == "train") train_ptrs.push_back(&samples[k]);
  }

  Dataset ds;
  ds.manifest.grid = in.bases.grid;
  ds.manifest.stats = compute_stats(train_ptrs);
  const Eigen::Index per_sample = ds.manifest.sample_floats();
  ds.blob.resize(static_cast<std::size_t>(per_sample) * samples.size());

  for (std::size_t k = 0; k < samples.size(); ++k) {
    FusionSample& s = samples[k];
    DatasetManifest::Entry entry;
    entry.i = s.cell_i;
    entry.j = s.cell_j;
    entry.coord = s.center;
    entry.time = s.time;
    entry.split = splits[k];
    entry.offset = static_cast<std::uint64_t>(k) * per_sample * sizeof(float);
    ds.manifest.samples.push_back(entry);

    normalize_sample(s.x, ds.manifest.stats);
    float* dst = ds.blob.data() + k * static_cast<std::size_t>(per_sample);
    for (Eigen::Index v = 0; v < s.x.size(); ++v) dst[v] = static_cast<float>(s.x[v]);
    for (Eigen::Index v = 0; v < s.y.size(); ++v) {
      dst[s.x.size() + v] = static_cast<float>(s.y[v]);
    }
  }
  if (report) *report = std::move(local);
  return ds;
}

void write_dataset(std::ostream& os, const Dataset& ds) {
  nlohmann::json j;
  j["format"] = "ssp.dataset.v1";
  j["grid"] = ds.manifest.grid;
  j["channels"] = kChannelNames;
  j["stats"] = {{"mean", ds.manifest.stats.mean},
                {"std", ds.manifest.stats.stddev},
                {"degenerate", ds.manifest.stats.degenerate}};
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : ds.manifest.samples) {
    samples.push_back({{"i", e.i},
                       {"j", e.j},
                       {"lat", e.coord.lat},
                       {"lon", e.coord.lon},
                       {"time", to_string(e.time)},
                       {"split", e.split},
                       {"offset", e.offset}});
  }
  j["samples"] = samples;
  j["provenance"] = ds.manifest.provenance;
  os << j.dump() << '\n';
  write_f32(os, ds.blob.data(), ds.blob.size());
  if (!os) throw std::runtime_error("dataset write failed");
}

Dataset read_dataset(std::istream& is) {
  const nlohmann::json j = read_header_line(is, "ssp.dataset.v1");
  Dataset ds;
  ds.manifest.grid = j.at("grid").get<DepthGrid>();
  const auto& stats = j.at("stats");
  stats.at("mean").get_to(ds.manifest.stats.mean);
  stats.at("std").get_to(ds.manifest.stats.stddev);
  stats.at("degenerate").get_to(ds.manifest.stats.degenerate);
  for (const auto& e : j.at("samples")) {
    DatasetManifest::Entry entry;
    entry.i = e.at("i").get<int>();
    entry.j = e.at("j").get<int>();
    entry.coord = {e.at("lat").get<double>(), e.at("lon").get<double>()};
    entry.time = parse_time(e.at("time").get<std::string>());
    entry.split = e.at("split").get<std::string>();
    entry.offset = e.at("offset").get<std::uint64_t>();
    ds.manifest.samples.push_back(std::move(entry));
  }
  ds.manifest.provenance = j.value("provenance", "");
  ds.blob.resize(static_cast<std::size_t>(ds.manifest.sample_floats()) *
                 ds.manifest.samples.size());
  read_f32(is, ds.blob.data(), ds.blob.size());
  return ds;
}

std::uint64_t dataset_split_hash(const Dataset& ds, const std::string& split) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::size_t bytes =
      static_cast<std::size_t>(ds.manifest.sample_floats()) * sizeof(float);
  for (int idx : ds.split_indices(split)) {
    const auto& e = ds.manifest.samples[static_cast<std::size_t>(idx)];
    h = fnv1a(reinterpret_cast<const char*>(ds.blob.data()) + e.offset, bytes, h);
  }
  return h;
}

}  // namespace ssp
