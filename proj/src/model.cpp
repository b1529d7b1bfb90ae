#include "ssp/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ssp/util.hpp"

namespace ssp {

std::string to_string(Variant v) {
  return v == Variant::kAttention ? "attention" : "cnn";
}

Variant variant_from_string(const std::string& s) {
  if (s == "attention") return Variant::kAttention;
  if (s == "cnn") return Variant::kCnnOnly;
  throw std::invalid_argument("unknown variant '" + s + "', want attention|cnn");
}

void ModelConfig::validate() const {
  if (depth_layers < 3 || heads < 1 || head_dim < 1 || conv_filters < 1 ||
      pool_rows < 1 || pool_cols < 1) {
    throw std::invalid_argument("model config has non-positive dimensions");
  }
  if (d_model() < 3) {
    throw std::invalid_argument("d_model too small for the 2x2 convolution");
  }
  const int mp_rows = (depth_layers - 1) / 2;
  const int mp_cols = (d_model() - 1) / 2;
  if (pool_rows > mp_rows || pool_cols > mp_cols) {
    throw std::invalid_argument("adaptive pool target exceeds the pooled map size");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"depth_layers", c.depth_layers}, {"heads", c.heads},
       {"head_dim", c.head_dim},         {"conv_filters", c.conv_filters},
       {"pool_rows", c.pool_rows},       {"pool_cols", c.pool_cols},
       {"variant", to_string(c.variant)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("depth_layers").get_to(c.depth_layers);
  j.at("heads").get_to(c.heads);
  j.at("head_dim").get_to(c.head_dim);
  j.at("conv_filters").get_to(c.conv_filters);
  j.at("pool_rows").get_to(c.pool_rows);
  j.at("pool_cols").get_to(c.pool_cols);
  c.variant = variant_from_string(j.at("variant").get<std::string>());
}

std::int64_t ModelParams::parameter_count() const {
  std::int64_t n = 0;
  for_each([&](const std::string&, const ad::Tensor& t) { n += t.size(); });
  return n;
}

std::int64_t expected_parameter_count(const ModelConfig& c) {
  const std::int64_t dm = c.d_model();
  std::int64_t n = kTokenFeatures * dm + dm;  // embedding
  if (c.variant == Variant::kAttention) {
    n += 3LL * c.heads * dm * c.head_dim;     // Q, K, V maps
    n += static_cast<std::int64_t>(c.heads) * c.head_dim * dm;  // output projection
  }
  n += 2LL * 2 * 1 * c.conv_filters + c.conv_filters;           // conv kernel + bias
  const std::int64_t fan_in =
      static_cast<std::int64_t>(c.pool_rows) * c.pool_cols * c.conv_filters;
  n += fan_in * c.depth_layers + c.depth_layers;                // head
  return n;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const int dm = config.d_model();
  ModelParams p;
  p.config = config;
  p.embed_w = ad::Tensor::zeros({kTokenFeatures, dm});
  p.embed_b = ad::Tensor::zeros({dm});
  if (config.variant == Variant::kAttention) {
    for (int h = 0; h < config.heads; ++h) {
      p.query_w.push_back(ad::Tensor::zeros({dm, config.head_dim}));
      p.key_w.push_back(ad::Tensor::zeros({dm, config.head_dim}));
      p.value_w.push_back(ad::Tensor::zeros({dm, config.head_dim}));
    }
    p.out_proj = ad::Tensor::zeros({config.heads * config.head_dim, dm});
  }
  p.conv_kernel = ad::Tensor::zeros({2, 2, 1, config.conv_filters});
  p.conv_bias = ad::Tensor::zeros({config.conv_filters});
  const int fan_in = config.pool_rows * config.pool_cols * config.conv_filters;
  p.fc_w = ad::Tensor::zeros({fan_in, config.depth_layers});
  p.fc_b = ad::Tensor::zeros({config.depth_layers});

  Rng rng(seed);
  auto glorot = [&](ad::Tensor& t, double fin, double fout) {
    const double bound = std::sqrt(6.0 / (fin + fout));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(-bound, bound);
  };
  glorot(p.embed_w, kTokenFeatures, dm);
  if (config.variant == Variant::kAttention) {
    for (int h = 0; h < config.heads; ++h) {
      glorot(p.query_w[h], dm, config.head_dim);
      glorot(p.key_w[h], dm, config.head_dim);
      glorot(p.value_w[h], dm, config.head_dim);
    }
    glorot(p.out_proj, config.heads * config.head_dim, dm);
  }
  glorot(p.conv_kernel, 2.0 * 2 * 1, 2.0 * 2 * config.conv_filters);
  glorot(p.fc_w, fan_in, config.depth_layers);
  return p;
}

ParamNodes register_params(ad::Tape& tape, const ModelParams& params, bool trainable) {
  ParamNodes nodes;
  params.for_each([&](const std::string&, const ad::Tensor& t) {
    nodes.ids.push_back(trainable ? tape.param(t) : tape.constant(t));
  });
  return nodes;
}

ad::Tensor make_input(const Eigen::VectorXd& flat, int depth_layers) {
  if (flat.size() != static_cast<Eigen::Index>(depth_layers) * kChannels * kNeighbors) {
    throw std::invalid_argument("make_input: flat sample length mismatch");
  }
  return {{depth_layers, kChannels, kNeighbors}, flat.array()};
}

ad::Tensor tokenize(const ad::Tensor& x) {
  if (x.rank() != 3 || x.dim(1) != kChannels || x.dim(2) != kNeighbors) {
    throw std::invalid_argument("tokenize: expected [H,6,8]");
  }
  // The (channel, neighbour) slab of each layer is already contiguous
  // channel-major, so the token matrix is a relabelling of the same data.
  return {{x.dim(0), kTokenFeatures}, x.data};
}

ad::Tensor untokenize(const ad::Tensor& tokens, int depth_layers) {
  if (tokens.rank() != 2 || tokens.dim(0) != depth_layers ||
      tokens.dim(1) != kTokenFeatures) {
    throw std::invalid_argument("untokenize: expected [H,48]");
  }
  return {{depth_layers, kChannels, kNeighbors}, tokens.data};
}

namespace {

struct ParamCursor {
  const std::vector<int>& ids;
  std::size_t at = 0;
  int next() { return ids[at++]; }
};

/// Shared head graph: scores scaled by 1/sqrt(head_dim), softmax over rows,
/// weighted value rows. Returns (output node, weight node).
std::pair<int, int> head_nodes(ad::Tape& tape, int embedded, int wq, int wk, int wv) {
  const int head_dim = tape.value(wq).dim(1);
  const int q = tape.matmul(embedded, wq);
  const int k = tape.matmul(embedded, wk);
  const int v = tape.matmul(embedded, wv);
  const int scores =
      tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  const int weights = tape.softmax_rows(scores);
  return {tape.matmul(weights, v), weights};
}

Eigen::MatrixXd node_matrix(const ad::Tape& tape, int id) {
  const ad::Tensor& t = tape.value(id);
  return t.mat(t.dim(0), t.dim(1));
}

}  // namespace

HeadResult attention_head(const Eigen::MatrixXd& embedded, const Eigen::MatrixXd& w_query,
                          const Eigen::MatrixXd& w_key, const Eigen::MatrixXd& w_value) {
  ad::Tape tape;
  const int xe = tape.constant(ad::Tensor::from_matrix(embedded));
  const auto [out, weights] =
      head_nodes(tape, xe, tape.constant(ad::Tensor::from_matrix(w_query)),
                 tape.constant(ad::Tensor::from_matrix(w_key)),
                 tape.constant(ad::Tensor::from_matrix(w_value)));
  return {node_matrix(tape, out), node_matrix(tape, weights)};
}

Eigen::MatrixXd multi_head_attention(const Eigen::MatrixXd& embedded,
                                     const ModelParams& params) {
  if (params.config.variant != Variant::kAttention) {
    throw std::invalid_argument("multi_head_attention: cnn variant has no attention");
  }
  ad::Tape tape;
  const int xe = tape.constant(ad::Tensor::from_matrix(embedded));
  std::vector<int> outs;
  for (int h = 0; h < params.config.heads; ++h) {
    outs.push_back(head_nodes(tape, xe,
                              tape.constant(params.query_w[static_cast<std::size_t>(h)]),
                              tape.constant(params.key_w[static_cast<std::size_t>(h)]),
                              tape.constant(params.value_w[static_cast<std::size_t>(h)]))
                       .first);
  }
  const int mixed = tape.matmul(tape.concat_cols(outs), tape.constant(params.out_proj));
  return node_matrix(tape, mixed);
}

Forward forward(ad::Tape& tape, const ModelConfig& config, const ParamNodes& nodes,
                int x_node) {
  config.validate();
  const int H = config.depth_layers;
  const int dm = config.d_model();
  const ad::Tensor& x = tape.value(x_node);
  if (x.shape != std::vector<int>{H, kChannels, kNeighbors}) {
    throw std::invalid_argument("forward: input shape does not match the config");
  }

  ParamCursor cur{nodes.ids};
  const int embed_w = cur.next();
  const int embed_b = cur.next();

  const int tokens = tape.reshape(x_node, {H, kTokenFeatures});
  const int embedded = tape.linear(tokens, embed_w, embed_b);  // [H, dm]

  Forward out;
  int trunk = embedded;
  if (config.variant == Variant::kAttention) {
    std::vector<int> head_outputs;
    for (int h = 0; h < config.heads; ++h) {
      const int wq = cur.next();
      const int wk = cur.next();
      const int wv = cur.next();
      const auto [head_out, weights] = head_nodes(tape, embedded, wq, wk, wv);
      out.head_weights.push_back(weights);
      head_outputs.push_back(head_out);
    }
    const int w_out = cur.next();
    trunk = tape.matmul(tape.concat_cols(head_outputs), w_out);  // [H, dm]
  }

  const int conv_kernel = cur.next();
  const int conv_bias = cur.next();
  const int fc_w = cur.next();
  const int fc_b = cur.next();

  const int image = tape.reshape(trunk, {H, dm, 1});
  const int conv = tape.conv2d(image, conv_kernel, conv_bias);
  const int act = tape.relu(conv);
  const int pooled = tape.maxpool2d(act);
  const int compact = tape.adaptive_avgpool(pooled, config.pool_rows, config.pool_cols);
  const int flat =
      tape.reshape(compact, {1, config.pool_rows * config.pool_cols * config.conv_filters});
  const int head = tape.linear(flat, fc_w, fc_b);  // [1, H]
  out.prediction = tape.reshape(head, {H});
  return out;
}

Eigen::VectorXd predict(const ModelParams& params, const Eigen::VectorXd& x_flat) {
  ad::Tape tape;
  const ParamNodes nodes = register_params(tape, params, /*trainable=*/false);
  const int x = tape.constant(make_input(x_flat, params.config.depth_layers));
  const Forward fwd = forward(tape, params.config, nodes, x);
  const ad::Tensor& pred = tape.value(fwd.prediction);
  return Eigen::Map<const Eigen::VectorXd>(pred.data.data(), pred.size());
}

AttentionTrace attention_trace(const ModelParams& params, const Eigen::VectorXd& x_flat) {
  if (params.config.variant != Variant::kAttention) {
    throw std::runtime_error("attention_trace: the cnn variant has no attention block");
  }
  ad::Tape tape;
  const ParamNodes nodes = register_params(tape, params, /*trainable=*/false);
  const int x = tape.constant(make_input(x_flat, params.config.depth_layers));
  const Forward fwd = forward(tape, params.config, nodes, x);

  const int H = params.config.depth_layers;
  AttentionTrace trace;
  Eigen::MatrixXd mean_map = Eigen::MatrixXd::Zero(H, H);
  for (int w : fwd.head_weights) {
    const ad::Tensor& t = tape.value(w);
    Eigen::MatrixXd m = t.mat(H, H);
    mean_map += m;
    trace.head_weights.push_back(std::move(m));
  }
  mean_map /= static_cast<double>(fwd.head_weights.size());
  // attention received by each depth token
  trace.received = mean_map.colwise().mean().transpose();
  trace.received /= trace.received.sum();
  return trace;
}

}  // namespace ssp
