#ifndef SSP_TRAINER_HPP
#define SSP_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <istream>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ssp/fusion.hpp"
#include "ssp/model.hpp"

namespace ssp {

struct TrainConfig {
  int batch_size = 16;
  int max_epochs = 100;
  double learning_rate = 0.001;
  double lr_drop_factor = 0.1;
  int lr_drop_period = 20;  // epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;           // epochs; 0 writes only the final state
  std::vector<int> snapshot_epochs;   // extra numbered checkpoints (1-based)
  bool log_test_rmse = false;         // per-epoch test loss in the log

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Step-decayed rate: base * factor^(epoch / period), epoch 0-based.
double lr_at(const TrainConfig& c, int epoch);

struct AdamState {
  std::vector<ad::Tensor> m, v;  // in ModelParams::for_each order
  std::int64_t step = 0;
};

AdamState init_adam(const ModelParams& params);

/// Bias-corrected Adam update, in place.
void adam_step(ModelParams& params, const std::vector<ad::Tensor>& grads,
               AdamState& state, const TrainConfig& c, double lr);

struct LossRow {
  int epoch = 0;  // 1-based in logs
  double lr = 0.0;
  double train_rmse = 0.0;
  std::optional<double> test_rmse;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ModelParams params;
  AdamState opt;
  int epoch = 0;
  std::vector<LossRow> history;
  std::string provenance;
};

void write_checkpoint(std::ostream& os, const Checkpoint& c);
Checkpoint read_checkpoint(std::istream& is);

void write_loss_log(std::ostream& os, const std::vector<LossRow>& rows);

struct TrainResult {
  Checkpoint checkpoint;
  bool aborted = false;
  std::string abort_reason;
  double seconds_per_epoch = 0.0;  // measured wall time, not serialized
};

/// Runs the batched Adam loop over the dataset's training split: a seeded
/// reshuffle per epoch, batch loss = mean of per-sample root-mean-square
/// errors, one optimizer step per batch. Checkpoints are written atomically
/// to `out_dir` (when non-empty) at epoch boundaries, so a non-finite abort
/// leaves the last epoch checkpoint intact. `post_epoch` (test hook) runs
/// after each epoch's checkpointing with the 1-based epoch number.
TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, const std::string& out_dir = "",
                  const std::string& provenance = "",
                  const std::function<void(int, ModelParams&)>& post_epoch = {});

/// Mean per-sample RMSE of the checkpointed model over a dataset split.
double evaluate_split(const ModelParams& params, const Dataset& dataset,
                      const std::string& split);

struct VariantStats {
  std::string variant;
  std::int64_t parameter_count = 0;
  double seconds_per_epoch = 0.0;
};

/// Parameter counts plus a measured epoch time for both variants at the same
/// trunk dimensions.
std::vector<VariantStats> report_model_stats(const ModelConfig& config,
                                             const Dataset& dataset,
                                             const TrainConfig& train_config);

}  // namespace ssp

#endif  // SSP_TRAINER_HPP
