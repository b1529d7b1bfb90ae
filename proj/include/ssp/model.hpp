#ifndef SSP_MODEL_HPP
#define SSP_MODEL_HPP

#include <Eigen/Core>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "ssp/autodiff.hpp"
#include "ssp/fusion.hpp"

namespace ssp {

enum class Variant { kAttention, kCnnOnly };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Network dimensions. Tokens are depth layers; each token carries the 48
/// fused features of its layer. The attention block runs over the depth axis,
/// its output is treated as a single-channel image for the convolution, and
/// an adaptive average pool bounds the fully-connected fan-in.
struct ModelConfig {
  int depth_layers = 1976;  // H, also the output size
  int heads = 8;
  int head_dim = 32;        // key/value width per head
  int conv_filters = 256;   // 2x2 kernels, stride 1
  int pool_rows = 8;        // adaptive pool target
  int pool_cols = 8;
  Variant variant = Variant::kAttention;

  int d_model() const { return heads * head_dim; }
  void validate() const;  // throws when the layer stack cannot be shaped

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// All trainable tensors. The CNN-only variant owns no attention tensors, so
/// its parameter count is a strict subset of the attention variant's.
struct ModelParams {
  ModelConfig config;
  ad::Tensor embed_w, embed_b;
  std::vector<ad::Tensor> query_w, key_w, value_w;  // one per head
  ad::Tensor out_proj;
  ad::Tensor conv_kernel, conv_bias;
  ad::Tensor fc_w, fc_b;

  /// Visits every tensor in a fixed order (serialization and Adam rely on it).
  template <typename F>
  void for_each(F&& f) {
    f("embed_w", embed_w);
    f("embed_b", embed_b);
    if (config.variant == Variant::kAttention) {
      for (int h = 0; h < config.heads; ++h) {
        const std::string tag = std::to_string(h);
        f("query_w" + tag, query_w[h]);
        f("key_w" + tag, key_w[h]);
        f("value_w" + tag, value_w[h]);
      }
      f("out_proj", out_proj);
    }
    f("conv_kernel", conv_kernel);
    f("conv_bias", conv_bias);
    f("fc_w", fc_w);
    f("fc_b", fc_b);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& name, const ad::Tensor& t) { f(name, t); });
  }

  std::int64_t parameter_count() const;
};

/// Glorot-uniform weights, zero biases, fully determined by the seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Closed-form parameter count from the dimensions alone.
std::int64_t expected_parameter_count(const ModelConfig& config);

/// Node handles of the registered parameters, in for_each order.
struct ParamNodes {
  std::vector<int> ids;
};
ParamNodes register_params(ad::Tape& tape, const ModelParams& params, bool trainable);

/// [H,6,8] tensor from the flat sample layout (depth, channel, neighbour).
ad::Tensor make_input(const Eigen::VectorXd& flat, int depth_layers);

/// One scaled-dot-product head over token rows: returns the output rows and
/// the row-stochastic weight matrix. Runs the same kernels the model records.
struct HeadResult {
  Eigen::MatrixXd output;   // tokens x head_dim
  Eigen::MatrixXd weights;  // tokens x tokens
};
HeadResult attention_head(const Eigen::MatrixXd& embedded, const Eigen::MatrixXd& w_query,
                          const Eigen::MatrixXd& w_key, const Eigen::MatrixXd& w_value);

/// Full multi-head block (concatenated heads through the output projection)
/// of `params` applied to already-embedded tokens.
Eigen::MatrixXd multi_head_attention(const Eigen::MatrixXd& embedded,
                                     const ModelParams& params);

/// Depth-token view of a sample: row h is layer h's 6x8 slab, channel-major.
ad::Tensor tokenize(const ad::Tensor& x);
ad::Tensor untokenize(const ad::Tensor& tokens, int depth_layers);

struct Forward {
  int prediction = -1;              // [H]
  std::vector<int> head_weights;    // attention matrices [H,H], one per head
};

/// Builds the network graph on the tape and returns the output nodes.
Forward forward(ad::Tape& tape, const ModelConfig& config, const ParamNodes& nodes,
                int x_node);

/// Forward pass without gradient tracking.
Eigen::VectorXd predict(const ModelParams& params, const Eigen::VectorXd& x_flat);

/// Row-stochastic attention maps and the per-depth received-attention vector
/// (column means of the head-averaged map, normalized to sum 1).
struct AttentionTrace {
  std::vector<Eigen::MatrixXd> head_weights;
  Eigen::VectorXd received;
};

AttentionTrace attention_trace(const ModelParams& params, const Eigen::VectorXd& x_flat);

}  // namespace ssp

#endif  // SSP_MODEL_HPP
