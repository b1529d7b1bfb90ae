#include "ssp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "ssp/json_io.hpp"
#include "ssp/util.hpp"

namespace ssp {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(lr_drop_factor > 0 && lr_drop_factor <= 1)) {
    throw std::invalid_argument("lr_drop_factor must be in (0, 1]");
  }
  if (lr_drop_period < 1) throw std::invalid_argument("lr_drop_period must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"learning_rate", c.learning_rate},
       {"lr_drop_factor", c.lr_drop_factor},
       {"lr_drop_period", c.lr_drop_period},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"snapshot_epochs", c.snapshot_epochs},
       {"log_test_rmse", c.log_test_rmse}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  j.at("batch_size").get_to(c.batch_size);
  j.at("max_epochs").get_to(c.max_epochs);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("lr_drop_factor").get_to(c.lr_drop_factor);
  j.at("lr_drop_period").get_to(c.lr_drop_period);
  if (j.contains("beta1")) j.at("beta1").get_to(c.beta1);
  if (j.contains("beta2")) j.at("beta2").get_to(c.beta2);
  if (j.contains("epsilon")) j.at("epsilon").get_to(c.epsilon);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("checkpoint_every")) j.at("checkpoint_every").get_to(c.checkpoint_every);
  if (j.contains("snapshot_epochs")) j.at("snapshot_epochs").get_to(c.snapshot_epochs);
  if (j.contains("log_test_rmse")) j.at("log_test_rmse").get_to(c.log_test_rmse);
}

double lr_at(const TrainConfig& c, int epoch) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  return c.learning_rate * std::pow(c.lr_drop_factor, epoch / c.lr_drop_period);
}

AdamState init_adam(const ModelParams& params) {
  AdamState state;
  params.for_each([&](const std::string&, const ad::Tensor& t) {
    state.m.push_back(ad::Tensor::zeros(t.shape));
    state.v.push_back(ad::Tensor::zeros(t.shape));
  });
  return state;
}

void adam_step(ModelParams& params, const std::vector<ad::Tensor>& grads,
               AdamState& state, const TrainConfig& c, double lr) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  std::size_t k = 0;
  params.for_each([&](const std::string& name, ad::Tensor& t) {
    if (k >= grads.size() || grads[k].shape != t.shape) {
      throw std::invalid_argument("adam_step: gradient shape mismatch at " + name);
    }
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    const auto& g = grads[k].data;
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.square();
    t.data -= lr * (m / bc1) / ((v / bc2).sqrt() + c.epsilon);
    ++k;
  });
}

namespace {

std::vector<ad::Tensor> collect_grads(const ad::Tape& tape, const ParamNodes& nodes) {
  std::vector<ad::Tensor> grads;
  grads.reserve(nodes.ids.size());
  for (int id : nodes.ids) grads.push_back(tape.grad(id));
  return grads;
}

void atomic_write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + tmp.string());
    write_checkpoint(os, c);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, const std::string& out_dir,
                  const std::string& provenance,
                  const std::function<void(int, ModelParams&)>& post_epoch) {
  model_config.validate();
  train_config.validate();
  const std::vector<int> train_idx = dataset.split_indices("train");
  if (train_idx.empty()) throw std::runtime_error("train: dataset has no training split");
  if (model_config.depth_layers != dataset.manifest.grid.layers()) {
    throw std::invalid_argument("train: model depth does not match the dataset grid");
  }

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck.model = model_config;
  ck.train = train_config;
  ck.params = init_params(model_config, train_config.seed);
  ck.opt = init_adam(ck.params);
  ck.provenance = provenance;

  const std::filesystem::path dir = out_dir;
  const bool persist = !out_dir.empty();
  if (persist) std::filesystem::create_directories(dir);
  const std::string tag = to_string(model_config.variant);
  auto checkpoint_path = [&](int epoch1) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_epoch_%04d", epoch1);
    return dir / ("checkpoint_" + tag + buf + ".sspck");
  };
  const std::filesystem::path final_path = dir / ("checkpoint_" + tag + ".sspck");

  const auto wall_start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < train_config.max_epochs; ++epoch) {
    const double lr = lr_at(train_config, epoch);
    std::vector<int> order = train_idx;
    Rng shuffler(train_config.seed ^ static_cast<std::uint64_t>(epoch));
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    try {
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(train_config.batch_size)) {
        const std::size_t stop = std::min(
            order.size(), start + static_cast<std::size_t>(train_config.batch_size));
        ad::Tape tape;
        const ParamNodes nodes = register_params(tape, ck.params, /*trainable=*/true);
        int batch_loss = -1;
        for (std::size_t s = start; s < stop; ++s) {
          auto [x, y] = dataset.sample(order[s]);
          const int x_node = tape.constant(make_input(x, model_config.depth_layers));
          const Forward fwd = forward(tape, model_config, nodes, x_node);
          const int label = tape.constant(ad::Tensor::from_vector(y));
          const int loss = tape.rmse(fwd.prediction, label);
          batch_loss = batch_loss < 0 ? loss : tape.add(batch_loss, loss);
        }
        const std::size_t members = stop - start;
        batch_loss = tape.scale(batch_loss, 1.0 / static_cast<double>(members));
        tape.backward(batch_loss);
        const double batch_value = tape.value(batch_loss).data[0];
        loss_sum += batch_value * static_cast<double>(members);
        loss_count += members;
        adam_step(ck.params, collect_grads(tape, nodes), ck.opt, train_config, lr);
      }
    } catch (const std::exception& e) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch + 1) + ": " + e.what();
      return result;  // checkpoints on disk stay at the last epoch boundary
    }

    LossRow row;
    row.epoch = epoch + 1;
    row.lr = lr;
    row.train_rmse = loss_sum / static_cast<double>(loss_count);
    if (train_config.log_test_rmse) {
      row.test_rmse = evaluate_split(ck.params, dataset, "test");
    }
    ck.history.push_back(row);
    ck.epoch = epoch + 1;

    if (persist) {
      const bool periodic = train_config.checkpoint_every > 0 &&
                            (epoch + 1) % train_config.checkpoint_every == 0;
      const bool snapshot =
          std::find(train_config.snapshot_epochs.begin(),
                    train_config.snapshot_epochs.end(), epoch + 1) !=
          train_config.snapshot_epochs.end();
      if (periodic || snapshot) atomic_write_checkpoint(checkpoint_path(epoch + 1), ck);
      atomic_write_checkpoint(final_path, ck);
    }
    if (post_epoch) post_epoch(epoch + 1, ck.params);
  }
  result.seconds_per_epoch =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
          .count() /
      static_cast<double>(train_config.max_epochs);
  return result;
}

double evaluate_split(const ModelParams& params, const Dataset& dataset,
                      const std::string& split) {
  const std::vector<int> idx = dataset.split_indices(split);
  if (idx.empty()) throw std::runtime_error("evaluate_split: empty split '" + split + "'");
  double sum = 0.0;
  for (int k : idx) {
    auto [x, y] = dataset.sample(k);
    const Eigen::VectorXd pred = predict(params, x);
    sum += std::sqrt((pred - y).squaredNorm() / static_cast<double>(y.size()));
  }
  return sum / static_cast<double>(idx.size());
}

void write_loss_log(std::ostream& os, const std::vector<LossRow>& rows) {
  const bool with_test =
      !rows.empty() && std::any_of(rows.begin(), rows.end(),
                                   [](const LossRow& r) { return r.test_rmse.has_value(); });
  os << (with_test ? "epoch,lr,train_rmse,test_rmse\n" : "epoch,lr,train_rmse\n");
  char buf[96];
  for (const LossRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g", r.epoch, r.lr, r.train_rmse);
    os << buf;
    if (with_test) {
      if (r.test_rmse) {
        std::snprintf(buf, sizeof(buf), ",%.17g", *r.test_rmse);
        os << buf;
      } else {
        os << ',';
      }
    }
    os << '\n';
  }
}

void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  nlohmann::json j;
  j["format"] = "ssp.checkpoint.v1";
  j["model"] = c.model;
  j["train"] = c.train;
  j["epoch"] = c.epoch;
  j["step"] = c.opt.step;
  nlohmann::json hist = nlohmann::json::array();
  for (const LossRow& r : c.history) {
    hist.push_back({{"epoch", r.epoch},
                    {"lr", r.lr},
                    {"train_rmse", r.train_rmse},
                    {"test_rmse", r.test_rmse ? nlohmann::json(*r.test_rmse)
                                              : nlohmann::json(nullptr)}});
  }
  j["history"] = hist;
  j["provenance"] = c.provenance;
  os << j.dump() << '\n';
  c.params.for_each([&](const std::string&, const ad::Tensor& t) {
    write_f64(os, t.data.data(), static_cast<std::size_t>(t.size()));
  });
  for (const auto& t : c.opt.m) write_f64(os, t.data.data(), static_cast<std::size_t>(t.size()));
  for (const auto& t : c.opt.v) write_f64(os, t.data.data(), static_cast<std::size_t>(t.size()));
  if (!os) throw std::runtime_error("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
  const nlohmann::json j = read_header_line(is, "ssp.checkpoint.v1");
  Checkpoint c;
  c.model = j.at("model").get<ModelConfig>();
  c.train = j.at("train").get<TrainConfig>();
  c.epoch = j.at("epoch").get<int>();
  for (const auto& r : j.at("history")) {
    LossRow row;
    row.epoch = r.at("epoch").get<int>();
    row.lr = r.at("lr").get<double>();
    row.train_rmse = r.at("train_rmse").get<double>();
    if (!r.at("test_rmse").is_null()) row.test_rmse = r.at("test_rmse").get<double>();
    c.history.push_back(row);
  }
  c.provenance = j.value("provenance", "");

  // Parameter and moment blobs hold shapes implied by the model config.
  c.params = init_params(c.model, 0);
  c.params.for_each([&](const std::string&, ad::Tensor& t) {
    read_f64(is, t.data.data(), static_cast<std::size_t>(t.size()));
  });
  c.opt = init_adam(c.params);
  c.opt.step = j.at("step").get<std::int64_t>();
  for (auto& t : c.opt.m) read_f64(is, t.data.data(), static_cast<std::size_t>(t.size()));
  for (auto& t : c.opt.v) read_f64(is, t.data.data(), static_cast<std::size_t>(t.size()));
  return c;
}

std::vector<VariantStats> report_model_stats(const ModelConfig& config,
                                             const Dataset& dataset,
                                             const TrainConfig& train_config) {
  std::vector<VariantStats> out;
  for (Variant v : {Variant::kAttention, Variant::kCnnOnly}) {
    ModelConfig mc = config;
    mc.variant = v;
    TrainConfig tc = train_config;
    tc.max_epochs = 1;
    tc.log_test_rmse = false;
    const TrainResult r = train(dataset, mc, tc);
    VariantStats s;
    s.variant = to_string(v);
    s.parameter_count = expected_parameter_count(mc);
    s.seconds_per_epoch = r.seconds_per_epoch;
    out.push_back(s);
  }
  return out;
}

}  // namespace ssp
