#include "ssp/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ssp/evalkit.hpp"
#include "ssp/json_io.hpp"
#include "ssp/util.hpp"

namespace ssp {

namespace fs = std::filesystem;

namespace {

std::vector<TimeKey> months_from_json(const nlohmann::json& j) {
  if (j.is_string()) return expand_months(j.get<std::string>());
  std::vector<TimeKey> out;
  for (const auto& item : j) out.push_back(parse_time(item.get<std::string>()).monthly());
  return out;
}

std::ifstream open_artifact(const std::string& what, const std::string& path) {
  if (!fs::exists(path)) throw MissingArtifact(what, path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifact(what, path);
  return is;
}

template <typename F>
void write_file(const std::string& path, F&& writer) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  writer(os);
  os.flush();
  if (!os) throw std::runtime_error("write to " + path + " failed");
}

}  // namespace

nlohmann::json RunConfig::echo() const {
  nlohmann::json j;
  j["out_dir"] = out_dir;
  j["seed"] = seed;
  j["depth_grid"] = depth_grid;
  j["region"] = region;
  j["months"] = months;
  j["train_months"] = train_months;
  j["test_months"] = test_months;
  j["model"] = model;
  j["train"] = train;
  j["synth"] = synth;
  j["basis_scope"] = basis_scope;
  j["eval_depths"] = eval_depths;
  return j;
}

void RunConfig::finalize() {
  if (months.empty()) {
    months = train_months;
    months.insert(months.end(), test_months.begin(), test_months.end());
  }
  model.depth_layers = depth_grid.layers();
  synth.geom = region;
  synth.grid = depth_grid;
  synth.months = months;
  synth.seed = seed;
  train.seed = seed;
  if (basis_scope != "cell" && basis_scope != "region") {
    throw ConfigError("basis_scope must be 'cell' or 'region'");
  }
  try {
    model.validate();
    train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("out_dir")) j.at("out_dir").get_to(c.out_dir);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("depth_grid")) j.at("depth_grid").get_to(c.depth_grid);
    if (j.contains("region")) j.at("region").get_to(c.region);
    if (j.contains("months")) c.months = months_from_json(j.at("months"));
    if (j.contains("train_months")) c.train_months = months_from_json(j.at("train_months"));
    if (j.contains("test_months")) c.test_months = months_from_json(j.at("test_months"));
    if (j.contains("model")) {
      nlohmann::json m = j.at("model");
      if (!m.contains("depth_layers")) m["depth_layers"] = c.depth_grid.layers();
      if (!m.contains("variant")) m["variant"] = "attention";
      ModelConfig defaults;
      if (!m.contains("heads")) m["heads"] = defaults.heads;
      if (!m.contains("head_dim")) m["head_dim"] = defaults.head_dim;
      if (!m.contains("conv_filters")) m["conv_filters"] = defaults.conv_filters;
      if (!m.contains("pool_rows")) m["pool_rows"] = defaults.pool_rows;
      if (!m.contains("pool_cols")) m["pool_cols"] = defaults.pool_cols;
      m.get_to(c.model);
    }
    if (j.contains("train")) {
      nlohmann::json t = j.at("train");
      TrainConfig defaults;
      if (!t.contains("batch_size")) t["batch_size"] = defaults.batch_size;
      if (!t.contains("max_epochs")) t["max_epochs"] = defaults.max_epochs;
      if (!t.contains("learning_rate")) t["learning_rate"] = defaults.learning_rate;
      if (!t.contains("lr_drop_factor")) t["lr_drop_factor"] = defaults.lr_drop_factor;
      if (!t.contains("lr_drop_period")) t["lr_drop_period"] = defaults.lr_drop_period;
      t.get_to(c.train);
    }
    if (j.contains("synth")) j.at("synth").get_to(c.synth);
    if (j.contains("basis_scope")) j.at("basis_scope").get_to(c.basis_scope);
    if (j.contains("eval_depths")) j.at("eval_depths").get_to(c.eval_depths);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return c;
}

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string depth_grid_spec;
  std::string months_spec, train_months_spec, test_months_spec;
  std::string basis_scope;
  std::string variant;
  std::int64_t seed = -1;
  int epochs = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration");
  cmd->add_option("--out", f.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", f.seed, "seed override");
  cmd->add_option("--depth-grid", f.depth_grid_spec, "zmin:zmax:step override");
  cmd->add_option("--months", f.months_spec, "month list, e.g. 2015-01..2016-12");
  cmd->add_option("--train-months", f.train_months_spec, "training month list");
  cmd->add_option("--test-months", f.test_months_spec, "test month list");
  cmd->add_option("--basis-scope", f.basis_scope, "cell|region");
  cmd->add_option("--variant", f.variant, "attention|cnn");
  cmd->add_option("--epochs", f.epochs, "epoch count override");
}

RunConfig resolve_config(const CommonFlags& f) {
  nlohmann::json j = nlohmann::json::object();
  if (!f.config_path.empty()) {
    std::ifstream is = open_artifact("config", f.config_path);
    try {
      is >> j;
    } catch (const std::exception& e) {
      throw ConfigError("cannot parse " + f.config_path + ": " + e.what());
    }
  }
  RunConfig c = run_config_from_json(j);
  try {
    if (!f.out_dir.empty()) c.out_dir = f.out_dir;
    if (f.seed >= 0) c.seed = static_cast<std::uint64_t>(f.seed);
    if (!f.depth_grid_spec.empty()) {
      double zmin = 0, zmax = 0, step = 0;
      if (std::sscanf(f.depth_grid_spec.c_str(), "%lf:%lf:%lf", &zmin, &zmax, &step) != 3) {
        throw ConfigError("--depth-grid wants zmin:zmax:step");
      }
      c.depth_grid = DepthGrid(zmin, zmax, step);
    }
    if (!f.months_spec.empty()) c.months = expand_months(f.months_spec);
    if (!f.train_months_spec.empty()) c.train_months = expand_months(f.train_months_spec);
    if (!f.test_months_spec.empty()) c.test_months = expand_months(f.test_months_spec);
    if (!f.basis_scope.empty()) c.basis_scope = f.basis_scope;
    if (!f.variant.empty()) c.model.variant = variant_from_string(f.variant);
    if (f.epochs > 0) c.train.max_epochs = f.epochs;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  c.finalize();
  return c;
}

std::string default_path(const RunConfig& c, const std::string& name) {
  return (fs::path(c.out_dir) / name).string();
}

// --- commands --------------------------------------------------------------

int cmd_synth(const RunConfig& c, bool emit_csv) {
  auto [sst, profiles] = synth_fields(c.synth);
  const std::string prov = c.echo().dump();
  sst.provenance = prov;
  profiles.provenance = prov;
  write_file(default_path(c, "sst.raster"), [&](std::ostream& os) { write_raster(os, sst); });
  write_file(default_path(c, "profiles.raster"),
             [&](std::ostream& os) { write_raster(os, profiles); });
  if (emit_csv) {
    write_file(default_path(c, "sst.csv"), [&](std::ostream& os) { write_sst_csv(os, sst); });
    write_file(default_path(c, "profiles.csv"),
               [&](std::ostream& os) { write_profile_csv(os, profiles); });
  }
  std::cerr << "synth: wrote " << sst.times.size() << " months over "
            << c.region.n_lat << "x" << c.region.n_lon << " cells\n";
  return 0;
}

int cmd_eof(const RunConfig& c, const std::string& profiles_path) {
  std::ifstream is = open_artifact("profiles", profiles_path);
  const RasterStack profiles = read_raster(is);
  if (c.train_months.empty()) throw ConfigError("eof needs train_months");
  BasisSet set = build_basis_set(profiles, c.train_months, c.basis_scope);
  set.provenance = c.echo().dump();
  write_file(default_path(c, "bases.eofset"),
             [&](std::ostream& os) { write_basis_set(os, set); });
  int built = 0;
  for (const auto& cell : set.cells) built += cell ? 1 : 0;
  if (set.scope == "region") built = set.shared ? 1 : 0;
  std::cerr << "eof: built " << built << " bases (scope " << set.scope << ")\n";
  return 0;
}

int cmd_fuse(const RunConfig& c, const std::string& sst_path,
             const std::string& profiles_path, const std::string& bases_path) {
  std::ifstream sst_is = open_artifact("sst", sst_path);
  RasterStack sst = read_raster(sst_is);
  std::ifstream prof_is = open_artifact("profiles", profiles_path);
  const RasterStack profiles = read_raster(prof_is);
  std::ifstream bases_is = open_artifact("bases", bases_path);
  const BasisSet bases = read_basis_set(bases_is);
  if (c.train_months.empty() && c.test_months.empty()) {
    throw ConfigError("fuse needs train_months and/or test_months");
  }
  // daily SST collapses to the monthly product first
  bool daily = false;
  for (const TimeKey& t : sst.times) daily = daily || t.day != 0;
  if (daily) sst = monthly_mean(sst);

  BuildReport report;
  Dataset ds = build_dataset({sst, profiles, bases}, c.train_months, c.test_months, &report);
  ds.manifest.provenance = c.echo().dump();
  write_file(default_path(c, "dataset.sspds"),
             [&](std::ostream& os) { write_dataset(os, ds); });
  for (const auto& s : report.skipped) {
    std::cerr << "fuse: skip cell (" << s.i << "," << s.j << ") " << to_string(s.time)
              << ": " << s.reason << "\n";
  }
  std::cerr << "fuse: " << ds.size() << " samples from " << report.candidates
            << " candidates (" << report.skipped.size() << " skipped)\n";
  return 0;
}

int cmd_train(const RunConfig& c, const std::string& dataset_path) {
  std::ifstream is = open_artifact("dataset", dataset_path);
  const Dataset ds = read_dataset(is);
  const std::string prov = c.echo().dump();
  const TrainResult result = train(ds, c.model, c.train, c.out_dir, prov);
  const std::string tag = to_string(c.model.variant);
  if (result.aborted) {
    std::cerr << "train: aborted (" << result.abort_reason
              << "); last epoch checkpoint kept\n";
    return 1;
  }
  write_file(default_path(c, "loss_" + tag + ".csv"), [&](std::ostream& os) {
    os << "# config: " << prov << "\n";
    write_loss_log(os, result.checkpoint.history);
  });
  write_file(default_path(c, "train_stats_" + tag + ".csv"), [&](std::ostream& os) {
    os << "variant,parameter_count,seconds_per_epoch\n";
    os << tag << ',' << result.checkpoint.params.parameter_count() << ','
       << result.seconds_per_epoch << "\n";
  });
  std::cerr << "train[" << tag << "]: " << result.checkpoint.epoch << " epochs, "
            << result.checkpoint.params.parameter_count() << " parameters, "
            << result.seconds_per_epoch << " s/epoch, final train rmse "
            << result.checkpoint.history.back().train_rmse << "\n";
  return 0;
}

int cmd_eval(const RunConfig& c, const std::string& dataset_path,
             const std::string& profiles_path, const std::string& ckpt_attention,
             const std::string& ckpt_cnn) {
  std::ifstream ds_is = open_artifact("dataset", dataset_path);
  const Dataset ds = read_dataset(ds_is);
  std::ifstream prof_is = open_artifact("profiles", profiles_path);
  const RasterStack profiles = read_raster(prof_is);
  std::ifstream a_is = open_artifact("attention checkpoint", ckpt_attention);
  const Checkpoint attention = read_checkpoint(a_is);
  std::ifstream c_is = open_artifact("cnn checkpoint", ckpt_cnn);
  const Checkpoint cnn = read_checkpoint(c_is);

  const EvalReport report =
      compare_methods(ds, attention, cnn, profiles, c.train_months, c.eval_depths);
  const std::string prov = c.echo().dump();
  write_file(default_path(c, "eval_methods.csv"),
             [&](std::ostream& os) { write_method_table_csv(os, report, prov); });
  write_file(default_path(c, "eval_bands.csv"),
             [&](std::ostream& os) { write_band_table_csv(os, report, prov); });
  write_file(default_path(c, "eval_depth_mae.csv"),
             [&](std::ostream& os) { write_depth_mae_csv(os, report, prov); });
  write_file(default_path(c, "eval_depth_mae.svg"), [&](std::ostream& os) {
    Eigen::VectorXd depths(report.grid.layers());
    for (int h = 0; h < report.grid.layers(); ++h) depths[h] = report.grid.depth(h);
    write_svg_lines(os, depths, report.depth_mae,
                    {kMethodNames.begin(), kMethodNames.end()}, "depth (m)",
                    "mean absolute error (m/s)");
  });
  std::cerr << "eval: " << report.test_samples << " test samples; average rmse";
  for (std::size_t m = 0; m < kMethodNames.size(); ++m) {
    std::cerr << ' ' << kMethodNames[m] << '=' << report.average[m];
  }
  std::cerr << "\n";
  return 0;
}

int cmd_predict(const RunConfig& c, const std::string& checkpoint_path,
                const std::string& dataset_path, const std::string& sst_path,
                const std::string& profiles_path, const std::string& bases_path,
                double lat, double lon, const std::string& month) {
  std::ifstream ck_is = open_artifact("checkpoint", checkpoint_path);
  const Checkpoint ck = read_checkpoint(ck_is);
  std::ifstream ds_is = open_artifact("dataset", dataset_path);
  const Dataset ds = read_dataset(ds_is);
  std::ifstream sst_is = open_artifact("sst", sst_path);
  RasterStack sst = read_raster(sst_is);
  std::ifstream prof_is = open_artifact("profiles", profiles_path);
  const RasterStack profiles = read_raster(prof_is);
  std::ifstream bases_is = open_artifact("bases", bases_path);
  const BasisSet bases = read_basis_set(bases_is);

  bool daily = false;
  for (const TimeKey& t : sst.times) daily = daily || t.day != 0;
  if (daily) sst = monthly_mean(sst);

  const GeoCoord coord{lat, lon};
  validate_coord(coord);
  const TimeKey when = parse_time(month).monthly();
  const auto cell = profiles.cell_of(coord);
  if (!cell) throw std::runtime_error("coordinate is not a cell centre of the grid");

  // The label profile is not required at prediction time, only the ring
  // inputs are; a placeholder month in the profile stack is still needed for
  // indexing, so build the feature tensor directly here.
  const auto ring = neighbor_cells(cell->first, cell->second, profiles.geom.n_lat,
                                   profiles.geom.n_lon);
  const int ts = sst.find_time(when);
  if (ts < 0) throw std::runtime_error("sst stack lacks month " + to_string(when));
  const int H = bases.grid.layers();
  Eigen::VectorXd x(static_cast<Eigen::Index>(H) * kTokenFeatures);
  for (int nb = 0; nb < kNeighbors; ++nb) {
    const auto [ni, nj] = ring[static_cast<std::size_t>(nb)];
    const double sst_value = sst.at(ts, ni, nj);
    if (sst.is_missing(sst_value)) {
      throw std::runtime_error("missing sst at a ring cell for " + to_string(when));
    }
    const EofBasis* basis = bases.basis_at(ni, nj);
    if (basis == nullptr || basis->k_max() < 3) {
      throw std::runtime_error("missing basis at a ring cell");
    }
    const Eigen::MatrixXd block = feature_block(profiles.geom.coord(ni, nj), sst_value, *basis);
    for (int h = 0; h < H; ++h) {
      for (int ch = 0; ch < kChannels; ++ch) {
        x[sample_index(h, ch, nb)] = block(h, ch);
      }
    }
  }
  normalize_sample(x, ds.manifest.stats);
  const Eigen::VectorXd pred = predict(ck.params, x);

  char name[96];
  std::snprintf(name, sizeof(name), "predict_%g_%g_%s.csv", lat, lon,
                to_string(when).c_str());
  write_file(default_path(c, name), [&](std::ostream& os) {
    os << "# config: " << c.echo().dump() << "\n";
    os << "depth_m,speed_mps\n";
    char buf[64];
    for (int h = 0; h < H; ++h) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", bases.grid.depth(h), pred[h]);
      os << buf;
    }
  });
  std::cerr << "predict: wrote " << name << "\n";
  return 0;
}

int cmd_attn_export(const RunConfig& c, const std::vector<std::string>& checkpoints,
                    const std::string& dataset_path, int sample_index) {
  std::ifstream ds_is = open_artifact("dataset", dataset_path);
  const Dataset ds = read_dataset(ds_is);
  int idx = sample_index;
  if (idx < 0) {
    const auto test = ds.split_indices("test");
    idx = test.empty() ? 0 : test.front();
  }
  if (idx >= ds.size()) throw ConfigError("--sample index out of range");
  const auto [x, y] = ds.sample(idx);

  for (const std::string& path : checkpoints) {
    std::ifstream ck_is = open_artifact("checkpoint", path);
    const Checkpoint ck = read_checkpoint(ck_is);
    const AttentionTrace trace = attention_trace(ck.params, x);
    char name[64];
    std::snprintf(name, sizeof(name), "attention_epoch_%04d", ck.epoch);
    write_file(default_path(c, std::string(name) + ".csv"), [&](std::ostream& os) {
      os << "# config: " << c.echo().dump() << "\n";
      os << "depth_m,weight\n";
      char buf[64];
      for (int h = 0; h < ds.manifest.grid.layers(); ++h) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", ds.manifest.grid.depth(h),
                      trace.received[h]);
        os << buf;
      }
    });
    write_file(default_path(c, std::string(name) + ".heads"), [&](std::ostream& os) {
      nlohmann::json j;
      j["format"] = "ssp.atttrace.v1";
      j["epoch"] = ck.epoch;
      j["heads"] = static_cast<int>(trace.head_weights.size());
      j["depth_layers"] = ds.manifest.grid.layers();
      j["provenance"] = c.echo().dump();
      os << j.dump() << '\n';
      for (const Eigen::MatrixXd& w : trace.head_weights) {
        const ad::RowMat rm = w;
        write_f64(os, rm.data(), static_cast<std::size_t>(rm.size()));
      }
    });
    std::cerr << "attn-export: epoch " << ck.epoch << " -> " << name << ".csv\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"sound speed profile estimation pipeline"};
  app.require_subcommand(1);

  CommonFlags flags;
  bool synth_csv = false;
  std::string profiles_path, sst_path, bases_path, dataset_path;
  std::string ckpt_path, ckpt_attention, ckpt_cnn;
  std::vector<std::string> ckpt_list;
  double lat = 0.0, lon = 0.0;
  std::string month;
  int sample_index = -1;

  CLI::App* synth = app.add_subcommand("synth", "generate synthetic ocean rasters");
  add_common(synth, flags);
  synth->add_flag("--csv", synth_csv, "also emit CSV forms");

  CLI::App* eof_cmd = app.add_subcommand("eof", "build per-cell bases from history");
  add_common(eof_cmd, flags);
  eof_cmd->add_option("--profiles", profiles_path, "profile raster path");

  CLI::App* fuse = app.add_subcommand("fuse", "build the supervised dataset");
  add_common(fuse, flags);
  fuse->add_option("--sst", sst_path, "sst raster path");
  fuse->add_option("--profiles", profiles_path, "profile raster path");
  fuse->add_option("--bases", bases_path, "basis set path");

  CLI::App* train_cmd = app.add_subcommand("train", "train one model variant");
  add_common(train_cmd, flags);
  train_cmd->add_option("--dataset", dataset_path, "dataset path");

  CLI::App* eval_cmd = app.add_subcommand("eval", "compare methods on the test split");
  add_common(eval_cmd, flags);
  eval_cmd->add_option("--dataset", dataset_path, "dataset path");
  eval_cmd->add_option("--profiles", profiles_path, "profile raster path");
  eval_cmd->add_option("--ckpt-attention", ckpt_attention, "attention checkpoint");
  eval_cmd->add_option("--ckpt-cnn", ckpt_cnn, "cnn checkpoint");

  CLI::App* predict = app.add_subcommand("predict", "estimate one profile");
  add_common(predict, flags);
  predict->add_option("--checkpoint", ckpt_path, "checkpoint path");
  predict->add_option("--dataset", dataset_path, "dataset path (normalization stats)");
  predict->add_option("--sst", sst_path, "sst raster path");
  predict->add_option("--profiles", profiles_path, "profile raster path");
  predict->add_option("--bases", bases_path, "basis set path");
  predict->add_option("--lat", lat, "target latitude")->required();
  predict->add_option("--lon", lon, "target longitude")->required();
  predict->add_option("--month", month, "target month YYYY-MM")->required();

  CLI::App* attn = app.add_subcommand("attn-export", "export attention traces");
  add_common(attn, flags);
  attn->add_option("--checkpoint", ckpt_list, "checkpoint path (repeatable)");
  attn->add_option("--dataset", dataset_path, "dataset path");
  attn->add_option("--sample", sample_index, "sample index (default: first test sample)");

  std::vector<const char*> argv;
  argv.push_back("ssp");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const RunConfig c = resolve_config(flags);
    auto or_default = [&](const std::string& given, const char* name) {
      return given.empty() ? default_path(c, name) : given;
    };
    if (synth->parsed()) return cmd_synth(c, synth_csv);
    if (eof_cmd->parsed()) return cmd_eof(c, or_default(profiles_path, "profiles.raster"));
    if (fuse->parsed()) {
      return cmd_fuse(c, or_default(sst_path, "sst.raster"),
                      or_default(profiles_path, "profiles.raster"),
                      or_default(bases_path, "bases.eofset"));
    }
    if (train_cmd->parsed()) return cmd_train(c, or_default(dataset_path, "dataset.sspds"));
    if (eval_cmd->parsed()) {
      return cmd_eval(c, or_default(dataset_path, "dataset.sspds"),
                      or_default(profiles_path, "profiles.raster"),
                      or_default(ckpt_attention, "checkpoint_attention.sspck"),
                      or_default(ckpt_cnn, "checkpoint_cnn.sspck"));
    }
    if (predict->parsed()) {
      return cmd_predict(c, or_default(ckpt_path, "checkpoint_attention.sspck"),
                         or_default(dataset_path, "dataset.sspds"),
                         or_default(sst_path, "sst.raster"),
                         or_default(profiles_path, "profiles.raster"),
                         or_default(bases_path, "bases.eofset"), lat, lon, month);
    }
    if (attn->parsed()) {
      std::vector<std::string> cks = ckpt_list;
      if (cks.empty()) cks.push_back(default_path(c, "checkpoint_attention.sspck"));
      return cmd_attn_export(c, cks, or_default(dataset_path, "dataset.sspds"),
                             sample_index);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ssp
