#include <doctest.h>

#include <cmath>
#include <vector>

#include "ssp/model.hpp"
#include "ssp/util.hpp"

using namespace ssp;
using ad::Tape;
using ad::Tensor;

namespace {

const ModelConfig kTiny{8, 2, 4, 4, 2, 2, Variant::kAttention};

Eigen::VectorXd random_sample(int depth_layers, Rng& rng, double scale = 1.0) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(depth_layers) * kTokenFeatures);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.normal() * scale;
  return x;
}

Eigen::MatrixXd random_matrix(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

void zero_params(ModelParams& p) {
  p.for_each([](const std::string&, Tensor& t) { t.data.setZero(); });
}

}  // namespace

TEST_CASE("tokenize relabels the slab without moving data") {
  Rng rng(1);
  SUBCASE("values are preserved position by position") {
    Eigen::VectorXd flat = random_sample(2, rng);
    const Tensor x = make_input(flat, 2);
    const Tensor tokens = tokenize(x);
    CHECK(tokens.shape == std::vector<int>{2, kTokenFeatures});
    for (int h = 0; h < 2; ++h) {
      for (int c = 0; c < kChannels; ++c) {
        for (int nb = 0; nb < kNeighbors; ++nb) {
          CHECK(tokens.data[h * kTokenFeatures + c * kNeighbors + nb] ==
                flat[sample_index(h, c, nb)]);
        }
      }
    }
  }
  SUBCASE("round trip is the identity") {
    const Tensor x = make_input(random_sample(5, rng), 5);
    const Tensor back = untokenize(tokenize(x), 5);
    CHECK(back.shape == x.shape);
    CHECK((back.data == x.data).all());
  }
  SUBCASE("full-scale shape") {
    Eigen::VectorXd flat = Eigen::VectorXd::Zero(1976 * kTokenFeatures);
    const Tensor tokens = tokenize(make_input(flat, 1976));
    CHECK(tokens.shape == std::vector<int>{1976, 48});
  }
}

TEST_CASE("single attention head") {
  SUBCASE("one token attends only to itself") {
    Eigen::MatrixXd xe(1, 3);
    xe << 0.3, -0.7, 1.1;
    Rng rng(2);
    const Eigen::MatrixXd w = random_matrix(3, 2, rng);
    const HeadResult r = attention_head(xe, w, w, w);
    CHECK(r.weights.rows() == 1);
    CHECK(r.weights(0, 0) == 1.0);
    CHECK((r.output - xe * w).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("identical tokens attend uniformly") {
    Eigen::MatrixXd xe(4, 3);
    for (int i = 0; i < 4; ++i) xe.row(i) << 0.5, 1.5, -2.0;
    Rng rng(3);
    const HeadResult r = attention_head(xe, random_matrix(3, 2, rng),
                                        random_matrix(3, 2, rng), random_matrix(3, 2, rng));
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        CHECK(r.weights(i, j) == doctest::Approx(0.25).epsilon(1e-14));
      }
    }
  }
  SUBCASE("two-token closed form") {
    // tokens 0 and ln(3), identity maps, head_dim 1 => scale 1. The first
    // query is 0, so its row is uniform; the second row follows softmax of
    // [0, (ln 3)^2].
    Eigen::MatrixXd xe(2, 1);
    const double a = std::log(3.0);
    xe << 0.0, a;
    Eigen::MatrixXd one(1, 1);
    one << 1.0;
    const HeadResult r = attention_head(xe, one, one, one);
    CHECK(r.weights(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(r.weights(0, 1) == doctest::Approx(0.5).epsilon(1e-14));
    const double w11 = std::exp(a * a) / (1.0 + std::exp(a * a));
    CHECK(r.weights(1, 0) == doctest::Approx(1.0 - w11).epsilon(1e-13));
    CHECK(r.weights(1, 1) == doctest::Approx(w11).epsilon(1e-13));
    CHECK(r.output(0, 0) == doctest::Approx(0.5 * a).epsilon(1e-13));
    CHECK(r.output(1, 0) == doctest::Approx(w11 * a).epsilon(1e-13));
    // frozen from the closed form
    CHECK(r.output(0, 0) == doctest::Approx(0.5493061443340549).epsilon(1e-12));
    CHECK(r.output(1, 0) == doctest::Approx(0.8456663206148138).epsilon(1e-12));
  }
  SUBCASE("rows always sum to one") {
    Rng rng(4);
    const HeadResult r =
        attention_head(random_matrix(6, 4, rng), random_matrix(4, 3, rng),
                       random_matrix(4, 3, rng), random_matrix(4, 3, rng));
    for (int i = 0; i < 6; ++i) {
      CHECK(std::abs(r.weights.row(i).sum() - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("multi-head block") {
  SUBCASE("one head with identity projection reduces to the head") {
    ModelConfig cfg = kTiny;
    cfg.heads = 1;
    cfg.head_dim = 8;  // d_model = 8
    ModelParams p = init_params(cfg, 11);
    p.out_proj.data.setZero();
    for (int i = 0; i < 8; ++i) p.out_proj.data[i * 8 + i] = 1.0;
    Rng rng(5);
    const Eigen::MatrixXd xe = random_matrix(6, 8, rng);
    const Eigen::MatrixXd got = multi_head_attention(xe, p);
    const HeadResult head =
        attention_head(xe, Eigen::MatrixXd(p.query_w[0].mat(8, 8)),
                       Eigen::MatrixXd(p.key_w[0].mat(8, 8)),
                       Eigen::MatrixXd(p.value_w[0].mat(8, 8)));
    CHECK((got - head.output).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("token permutations commute with the block") {
    const ModelParams p = init_params(kTiny, 17);
    Rng rng(6);
    const Eigen::MatrixXd xe = random_matrix(kTiny.depth_layers, kTiny.d_model(), rng);
    const Eigen::MatrixXd base = multi_head_attention(xe, p);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<int> perm(static_cast<std::size_t>(kTiny.depth_layers));
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
      rng.shuffle(perm);
      Eigen::MatrixXd permuted(xe.rows(), xe.cols());
      for (Eigen::Index i = 0; i < xe.rows(); ++i) {
        permuted.row(i) = xe.row(perm[static_cast<std::size_t>(i)]);
      }
      const Eigen::MatrixXd got = multi_head_attention(permuted, p);
      double worst = 0.0;
      for (Eigen::Index i = 0; i < xe.rows(); ++i) {
        worst = std::max(worst, (got.row(i) - base.row(perm[static_cast<std::size_t>(i)]))
                                    .cwiseAbs()
                                    .maxCoeff());
      }
      CHECK(worst <= 1e-12);
    }
  }
  SUBCASE("default dimensions produce 256 channels") {
    ModelConfig cfg;  // defaults: 8 heads x 32
    cfg.depth_layers = 70;
    cfg.pool_rows = 8;
    cfg.pool_cols = 8;
    const ModelParams p = init_params(cfg, 3);
    Rng rng(7);
    const Eigen::MatrixXd xe = random_matrix(70, cfg.d_model(), rng);
    const Eigen::MatrixXd out = multi_head_attention(xe, p);
    CHECK(out.rows() == 70);
    CHECK(out.cols() == 256);
  }
}

TEST_CASE("forward pass") {
  Rng rng(8);
  SUBCASE("all-zero parameters output the head bias") {
    ModelParams p = init_params(kTiny, 1);
    zero_params(p);
    for (int h = 0; h < kTiny.depth_layers; ++h) p.fc_b.data[h] = 10.0 + h;
    const Eigen::VectorXd pred = predict(p, random_sample(kTiny.depth_layers, rng));
    for (int h = 0; h < kTiny.depth_layers; ++h) CHECK(pred[h] == 10.0 + h);
  }
  SUBCASE("tiny config yields a finite depth-length output") {
    const ModelParams p = init_params(kTiny, 2);
    const Eigen::VectorXd pred = predict(p, random_sample(kTiny.depth_layers, rng));
    CHECK(pred.size() == kTiny.depth_layers);
    CHECK(pred.allFinite());
  }
  SUBCASE("forward is a pure function") {
    const ModelParams p = init_params(kTiny, 3);
    const Eigen::VectorXd x = random_sample(kTiny.depth_layers, rng);
    const Eigen::VectorXd a = predict(p, x);
    const Eigen::VectorXd b = predict(p, x);
    CHECK((a.array() == b.array()).all());
  }
  SUBCASE("a silenced attention block matches the cnn variant") {
    // Zero embedding and output projection feed identical (zero) images to
    // the shared downstream stack, so the variants must coincide.
    ModelParams attention = init_params(kTiny, 4);
    attention.embed_w.data.setZero();
    attention.embed_b.data.setZero();
    attention.out_proj.data.setZero();

    ModelConfig cnn_cfg = kTiny;
    cnn_cfg.variant = Variant::kCnnOnly;
    ModelParams cnn = init_params(cnn_cfg, 5);
    cnn.embed_w = attention.embed_w;
    cnn.embed_b = attention.embed_b;
    cnn.conv_kernel = attention.conv_kernel;
    cnn.conv_bias = attention.conv_bias;
    cnn.fc_w = attention.fc_w;
    cnn.fc_b = attention.fc_b;

    const Eigen::VectorXd x = random_sample(kTiny.depth_layers, rng);
    const Eigen::VectorXd a = predict(attention, x);
    const Eigen::VectorXd b = predict(cnn, x);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("input shape mismatches are rejected") {
    const ModelParams p = init_params(kTiny, 6);
    CHECK_THROWS(predict(p, Eigen::VectorXd::Zero(7)));
  }
}

TEST_CASE("attention trace") {
  Rng rng(9);
  SUBCASE("identical tokens spread attention uniformly") {
    const ModelParams p = init_params(kTiny, 7);
    Eigen::VectorXd x(static_cast<Eigen::Index>(kTiny.depth_layers) * kTokenFeatures);
    for (int h = 0; h < kTiny.depth_layers; ++h) {
      for (int f = 0; f < kTokenFeatures; ++f) {
        x[h * kTokenFeatures + f] = 0.1 * f;  // same slab at every depth
      }
    }
    const AttentionTrace trace = attention_trace(p, x);
    for (int h = 0; h < kTiny.depth_layers; ++h) {
      CHECK(trace.received[h] ==
            doctest::Approx(1.0 / kTiny.depth_layers).epsilon(1e-12));
    }
  }
  SUBCASE("received attention is a distribution") {
    const ModelParams p = init_params(kTiny, 8);
    const AttentionTrace trace = attention_trace(p, random_sample(kTiny.depth_layers, rng));
    CHECK(std::abs(trace.received.sum() - 1.0) <= 1e-9);
    CHECK(trace.received.minCoeff() >= 0.0);
    REQUIRE(trace.head_weights.size() == 2);
    for (const Eigen::MatrixXd& w : trace.head_weights) {
      for (int i = 0; i < w.rows(); ++i) {
        CHECK(std::abs(w.row(i).sum() - 1.0) <= 1e-12);
      }
    }
  }
  SUBCASE("the cnn variant has no trace") {
    ModelConfig cfg = kTiny;
    cfg.variant = Variant::kCnnOnly;
    const ModelParams p = init_params(cfg, 9);
    CHECK_THROWS_WITH_AS(attention_trace(p, random_sample(cfg.depth_layers, rng)),
                         doctest::Contains("no attention"), std::runtime_error);
  }
  SUBCASE("column-mean aggregation matches the closed form") {
    // Aggregating the two-token hand case: column means of the weight
    // matrix, renormalized.
    Eigen::MatrixXd xe(2, 1);
    const double a = std::log(3.0);
    xe << 0.0, a;
    Eigen::MatrixXd one(1, 1);
    one << 1.0;
    const HeadResult r = attention_head(xe, one, one, one);
    Eigen::VectorXd received = r.weights.colwise().mean().transpose();
    received /= received.sum();
    CHECK(received[0] == doctest::Approx(0.3651206711696044).epsilon(1e-12));
    CHECK(received[1] == doctest::Approx(0.6348793288303956).epsilon(1e-12));
  }
}

TEST_CASE("parameter initialization") {
  SUBCASE("seeds fully determine the draw") {
    const ModelParams a = init_params(kTiny, 42);
    const ModelParams b = init_params(kTiny, 42);
    const ModelParams c = init_params(kTiny, 43);
    bool all_equal = true;
    bool any_differs = false;
    a.for_each([&](const std::string& name, const Tensor& t) {
      const_cast<ModelParams&>(b).for_each([&](const std::string& n2, Tensor& t2) {
        if (name == n2) all_equal = all_equal && (t.data == t2.data).all();
      });
      const_cast<ModelParams&>(c).for_each([&](const std::string& n2, Tensor& t2) {
        if (name == n2 && (t.data != t2.data).any()) any_differs = true;
      });
    });
    CHECK(all_equal);
    CHECK(any_differs);
  }
  SUBCASE("weights respect the glorot bound, biases start at zero") {
    const ModelParams p = init_params(kTiny, 7);
    const double embed_bound = std::sqrt(6.0 / (48 + kTiny.d_model()));
    CHECK(p.embed_w.data.abs().maxCoeff() <= embed_bound);
    const double qkv_bound = std::sqrt(6.0 / (kTiny.d_model() + kTiny.head_dim));
    for (const auto& w : p.query_w) CHECK(w.data.abs().maxCoeff() <= qkv_bound);
    CHECK(p.embed_b.data.abs().maxCoeff() == 0.0);
    CHECK(p.conv_bias.data.abs().maxCoeff() == 0.0);
    CHECK(p.fc_b.data.abs().maxCoeff() == 0.0);
  }
  SUBCASE("parameter counts match the closed form") {
    const ModelParams p = init_params(kTiny, 1);
    // embed 48*8+8, qkv 3*2*8*4, out 2*4*8, conv 2*2*1*4+4, fc 16*8+8
    CHECK(p.parameter_count() == 804);
    CHECK(expected_parameter_count(kTiny) == 804);

    ModelConfig cnn_cfg = kTiny;
    cnn_cfg.variant = Variant::kCnnOnly;
    const ModelParams q = init_params(cnn_cfg, 1);
    CHECK(q.parameter_count() == expected_parameter_count(cnn_cfg));
    CHECK(q.parameter_count() < p.parameter_count());
  }
}

TEST_CASE("full tiny model matches finite differences") {
  Rng rng(10);
  const Eigen::VectorXd x = random_sample(kTiny.depth_layers, rng);
  Eigen::VectorXd label(kTiny.depth_layers);
  for (int h = 0; h < kTiny.depth_layers; ++h) label[h] = rng.normal();

  ModelParams params = init_params(kTiny, 99);
  auto loss_at = [&]() {
    Tape tape;
    const ParamNodes nodes = register_params(tape, params, true);
    const int xn = tape.constant(make_input(x, kTiny.depth_layers));
    const Forward fwd = forward(tape, kTiny, nodes, xn);
    const int loss = tape.rmse(fwd.prediction, tape.constant(Tensor::from_vector(label)));
    return std::pair{tape, loss};
  };

  Tape tape;
  const ParamNodes nodes = register_params(tape, params, true);
  const int xn = tape.constant(make_input(x, kTiny.depth_layers));
  const Forward fwd = forward(tape, kTiny, nodes, xn);
  const int loss = tape.rmse(fwd.prediction, tape.constant(Tensor::from_vector(label)));
  tape.backward(loss);

  const double h = 1e-5;
  double worst = 0.0;
  std::size_t group = 0;
  params.for_each([&](const std::string&, Tensor& t) {
    const Tensor& g = tape.grad(nodes.ids[group]);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double keep = t.data[i];
      auto eval = [&](double v) {
        t.data[i] = v;
        Tape t2;
        const ParamNodes n2 = register_params(t2, params, false);
        const int x2 = t2.constant(make_input(x, kTiny.depth_layers));
        const Forward f2 = forward(t2, kTiny, n2, x2);
        const int l2 = t2.rmse(f2.prediction, t2.constant(Tensor::from_vector(label)));
        return t2.value(l2).data[0];
      };
      const double fd = (eval(keep + h) - eval(keep - h)) / (2.0 * h);
      t.data[i] = keep;
      const double rel =
          std::abs(fd - g.data[i]) / std::max({1.0, std::abs(fd), std::abs(g.data[i])});
      worst = std::max(worst, rel);
    }
    ++group;
  });
  CHECK(worst <= 1e-4);
}
