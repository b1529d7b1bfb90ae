#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssp/cli.hpp"

using namespace ssp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("ssp_cli_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& out_dir) {
  const fs::path path = dir / "run.json";
  std::ofstream os(path);
  os << R"({
    "out_dir": ")" << out_dir << R"(",
    "seed": 21,
    "depth_grid": {"z_min": 5, "z_max": 12, "step": 1},
    "region": {"lat0": 5.5, "lon0": 150.5, "dlat": 1, "dlon": 1, "n_lat": 4, "n_lon": 4},
    "train_months": "2015-01..2015-06",
    "test_months": "2015-07..2015-08",
    "model": {"heads": 2, "head_dim": 4, "conv_filters": 4, "pool_rows": 2, "pool_cols": 2},
    "train": {"max_epochs": 2, "batch_size": 8, "snapshot_epochs": [1]},
    "synth": {"mixed_layer": 20.0},
    "eval_depths": [8, 200]
  })";
  return path;
}

int cli(std::initializer_list<std::string> args) {
  return run_cli(std::vector<std::string>(args));
}

}  // namespace

TEST_CASE("the full pipeline runs end to end") {
  TempDir tmp("pipeline");
  const std::string out = (tmp.path / "out").string();
  const std::string cfg = write_config(tmp.path, out).string();

  REQUIRE(cli({"synth", "--config", cfg, "--csv"}) == 0);
  CHECK(fs::exists(fs::path(out) / "sst.raster"));
  CHECK(fs::exists(fs::path(out) / "profiles.raster"));
  CHECK(fs::exists(fs::path(out) / "sst.csv"));

  REQUIRE(cli({"eof", "--config", cfg}) == 0);
  CHECK(fs::exists(fs::path(out) / "bases.eofset"));

  REQUIRE(cli({"fuse", "--config", cfg}) == 0);
  CHECK(fs::exists(fs::path(out) / "dataset.sspds"));

  REQUIRE(cli({"train", "--config", cfg, "--variant", "attention"}) == 0);
  REQUIRE(cli({"train", "--config", cfg, "--variant", "cnn"}) == 0);
  CHECK(fs::exists(fs::path(out) / "checkpoint_attention.sspck"));
  CHECK(fs::exists(fs::path(out) / "checkpoint_attention_epoch_0001.sspck"));
  CHECK(fs::exists(fs::path(out) / "checkpoint_cnn.sspck"));
  CHECK(fs::exists(fs::path(out) / "loss_attention.csv"));
  CHECK(fs::exists(fs::path(out) / "train_stats_cnn.csv"));

  REQUIRE(cli({"eval", "--config", cfg}) == 0);
  CHECK(fs::exists(fs::path(out) / "eval_methods.csv"));
  CHECK(fs::exists(fs::path(out) / "eval_bands.csv"));
  CHECK(fs::exists(fs::path(out) / "eval_depth_mae.csv"));
  CHECK(fs::exists(fs::path(out) / "eval_depth_mae.svg"));

  REQUIRE(cli({"predict", "--config", cfg, "--lat", "6.5", "--lon", "151.5",
               "--month", "2015-07"}) == 0);
  CHECK(fs::exists(fs::path(out) / "predict_6.5_151.5_2015-07.csv"));

  REQUIRE(cli({"attn-export", "--config", cfg, "--sample", "0"}) == 0);
  CHECK(fs::exists(fs::path(out) / "attention_epoch_0002.csv"));
  CHECK(fs::exists(fs::path(out) / "attention_epoch_0002.heads"));

  SUBCASE("artifacts embed the run configuration") {
    std::ifstream raster(fs::path(out) / "sst.raster", std::ios::binary);
    std::string header;
    std::getline(raster, header);
    CHECK(header.find("\"provenance\"") != std::string::npos);
    CHECK(header.find("\"seed\\\":21") != std::string::npos);
    const std::string methods = slurp(fs::path(out) / "eval_methods.csv");
    CHECK(methods.find("# config: ") != std::string::npos);
  }

  SUBCASE("the predicted profile covers the grid") {
    const std::string csv = slurp(fs::path(out) / "predict_6.5_151.5_2015-07.csv");
    int lines = 0;
    for (char ch : csv) lines += ch == '\n' ? 1 : 0;
    CHECK(lines == 2 + 8);  // config comment, header, 8 layers
  }

  SUBCASE("band tables skip depths beyond the grid") {
    const std::string bands = slurp(fs::path(out) / "eval_bands.csv");
    CHECK(bands.find("8,Average") != std::string::npos);
    CHECK(bands.find("200,") == std::string::npos);
  }
}

TEST_CASE("identical runs reproduce identical artifacts") {
  TempDir tmp("repro");
  const std::string out = (tmp.path / "out").string();
  const std::string cfg = write_config(tmp.path, out).string();
  const std::vector<const char*> names = {"sst.raster",    "profiles.raster",
                                          "bases.eofset",  "dataset.sspds",
                                          "checkpoint_cnn.sspck", "loss_cnn.csv"};
  auto run_all = [&] {
    REQUIRE(cli({"synth", "--config", cfg}) == 0);
    REQUIRE(cli({"eof", "--config", cfg}) == 0);
    REQUIRE(cli({"fuse", "--config", cfg}) == 0);
    REQUIRE(cli({"train", "--config", cfg, "--variant", "cnn"}) == 0);
  };
  run_all();
  std::vector<std::string> snapshots;
  for (const char* name : names) snapshots.push_back(slurp(fs::path(out) / name));
  run_all();
  for (std::size_t k = 0; k < names.size(); ++k) {
    CHECK(slurp(fs::path(out) / names[k]) == snapshots[k]);
  }
}

TEST_CASE("missing artifacts exit with the dedicated code") {
  TempDir tmp("missing");
  const std::string out = (tmp.path / "out").string();
  const std::string cfg = write_config(tmp.path, out).string();
  CHECK(cli({"train", "--config", cfg}) == 3);   // no dataset yet
  CHECK(cli({"eval", "--config", cfg}) == 3);    // nothing built
  CHECK(cli({"fuse", "--config", cfg}) == 3);    // no rasters
}

TEST_CASE("config problems exit with the config code") {
  TempDir tmp("badcfg");
  const std::string out = (tmp.path / "out").string();
  const std::string cfg = write_config(tmp.path, out).string();
  CHECK(cli({"synth", "--config", cfg, "--basis-scope", "blended"}) == 2);
  CHECK(cli({"synth", "--config", cfg, "--depth-grid", "nonsense"}) == 2);
  CHECK(cli({"synth", "--config", (tmp.path / "absent.json").string()}) == 3);
}

TEST_CASE("boundary predictions surface the ring error") {
  TempDir tmp("boundary");
  const std::string out = (tmp.path / "out").string();
  const std::string cfg = write_config(tmp.path, out).string();
  REQUIRE(cli({"synth", "--config", cfg}) == 0);
  REQUIRE(cli({"eof", "--config", cfg}) == 0);
  REQUIRE(cli({"fuse", "--config", cfg}) == 0);
  REQUIRE(cli({"train", "--config", cfg, "--variant", "attention"}) == 0);
  CHECK(cli({"predict", "--config", cfg, "--lat", "5.5", "--lon", "150.5",
             "--month", "2015-07"}) == 1);
}
