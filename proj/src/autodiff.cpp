#include "ssp/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace ssp::ad {

namespace {

[[noreturn]] void fail(const char* op, const std::string& what) {
  throw std::runtime_error(std::string(op) + ": " + what);
}

void ensure_finite(const Tensor& t, const char* op) {
  if (!t.data.isFinite().all()) fail(op, "non-finite values");
}

/// im2col row r = (oy*ow+ox), column c = ((ky*kw+kx)*ci + c_in).
RowMat im2col(const Tensor& x, int kh, int kw) {
  const int h = x.dim(0), w = x.dim(1), ci = x.dim(2);
  const int oh = h - kh + 1, ow = w - kw + 1;
  RowMat m(static_cast<Eigen::Index>(oh) * ow, static_cast<Eigen::Index>(kh) * kw * ci);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index row = static_cast<Eigen::Index>(oy) * ow + ox;
      Eigen::Index col = 0;
      for (int ky = 0; ky < kh; ++ky) {
        const double* src = x.data.data() +
                            (static_cast<Eigen::Index>(oy + ky) * w + ox) * ci;
        for (int kx = 0; kx < kw; ++kx) {
          for (int c = 0; c < ci; ++c) m(row, col++) = src[kx * ci + c];
        }
      }
    }
  }
  return m;
}

}  // namespace

Eigen::Index numel(const std::vector<int>& shape) {
  Eigen::Index n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
  const Eigen::Index n = numel(shape);
  return {std::move(shape), Eigen::ArrayXd::Zero(n)};
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
  Tensor t;
  t.shape = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
  t.data.resize(m.size());
  Eigen::Map<RowMat>(t.data.data(), m.rows(), m.cols()) = m;
  return t;
}

Tensor Tensor::from_vector(const Eigen::VectorXd& v) {
  Tensor t;
  t.shape = {static_cast<int>(v.size())};
  t.data = v.array();
  return t;
}

int Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, int)> bp,
               const char* op) {
  if (numel(value.shape) != value.size()) fail(op, "shape/data size mismatch");
  ensure_finite(value, op);
  nodes_.push_back({std::move(value), Tensor{}, needs_grad, std::move(bp)});
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(Tensor value) { return push(std::move(value), false, nullptr, "constant"); }

int Tape::param(Tensor value) {
  const int id = push(std::move(value), true, nullptr, "param");
  params_.push_back(id);
  return id;
}

const Tensor& Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!backward_run_) fail("grad", "backward has not run");
  if (!n.needs_grad) fail("grad", "node is not tracked");
  return n.grad;
}

const Tensor& Tape::check2d(int id, const char* op) const {
  const Tensor& t = value(id);
  if (t.rank() != 2) fail(op, "expected a rank-2 tensor");
  return t;
}

int Tape::add(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.shape != tb.shape) fail("add", "shape mismatch");
  Tensor out{ta.shape, ta.data + tb.data};
  return push(std::move(out), needs(a) || needs(b),
              [a, b](Tape& t, int self) {
                const auto& g = t.grad_ref(self).data;
                if (t.needs(a)) t.grad_ref(a).data += g;
                if (t.needs(b)) t.grad_ref(b).data += g;
              },
              "add");
}

int Tape::scale(int x, double s) {
  const Tensor& tx = value(x);
  Tensor out{tx.shape, tx.data * s};
  return push(std::move(out), needs(x),
              [x, s](Tape& t, int self) {
                if (t.needs(x)) t.grad_ref(x).data += s * t.grad_ref(self).data;
              },
              "scale");
}

int Tape::sum(int x) {
  const Tensor& tx = value(x);
  Tensor out{{1}, Eigen::ArrayXd::Constant(1, tx.data.sum())};
  return push(std::move(out), needs(x),
              [x](Tape& t, int self) {
                if (t.needs(x)) t.grad_ref(x).data += t.grad_ref(self).data[0];
              },
              "sum");
}

int Tape::linear(int x, int w, int b) {
  const Tensor& tx = check2d(x, "linear");
  const Tensor& tw = check2d(w, "linear");
  const Tensor& tb = value(b);
  const int n = tx.dim(0), di = tx.dim(1), dout = tw.dim(1);
  if (tw.dim(0) != di || tb.rank() != 1 || tb.dim(0) != dout) {
    fail("linear", "shape mismatch");
  }
  Tensor out = Tensor::zeros({n, dout});
  out.mat(n, dout) = tx.mat(n, di) * tw.mat(di, dout);
  out.mat(n, dout).rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(tb.data.data(), dout);
  return push(std::move(out), needs(x) || needs(w) || needs(b),
              [x, w, b, n, di, dout](Tape& t, int self) {
                const auto gy = t.grad_ref(self).mat(n, dout);
                if (t.needs(x)) {
                  t.grad_ref(x).mat(n, di) += gy * t.value(w).mat(di, dout).transpose();
                }
                if (t.needs(w)) {
                  t.grad_ref(w).mat(di, dout) += t.value(x).mat(n, di).transpose() * gy;
                }
                if (t.needs(b)) {
                  Eigen::Map<Eigen::RowVectorXd>(t.grad_ref(b).data.data(), dout) +=
                      gy.colwise().sum();
                }
              },
              "linear");
}

int Tape::matmul(int a, int b) {
  const Tensor& ta = check2d(a, "matmul");
  const Tensor& tb = check2d(b, "matmul");
  const int n = ta.dim(0), k = ta.dim(1), m = tb.dim(1);
  if (tb.dim(0) != k) fail("matmul", "inner dimension mismatch");
  Tensor out = Tensor::zeros({n, m});
  out.mat(n, m) = ta.mat(n, k) * tb.mat(k, m);
  return push(std::move(out), needs(a) || needs(b),
              [a, b, n, k, m](Tape& t, int self) {
                const auto g = t.grad_ref(self).mat(n, m);
                if (t.needs(a)) t.grad_ref(a).mat(n, k) += g * t.value(b).mat(k, m).transpose();
                if (t.needs(b)) t.grad_ref(b).mat(k, m) += t.value(a).mat(n, k).transpose() * g;
              },
              "matmul");
}

int Tape::matmul_nt(int a, int b) {
  const Tensor& ta = check2d(a, "matmul_nt");
  const Tensor& tb = check2d(b, "matmul_nt");
  const int n = ta.dim(0), k = ta.dim(1), m = tb.dim(0);
  if (tb.dim(1) != k) fail("matmul_nt", "inner dimension mismatch");
  Tensor out = Tensor::zeros({n, m});
  out.mat(n, m) = ta.mat(n, k) * tb.mat(m, k).transpose();
  return push(std::move(out), needs(a) || needs(b),
              [a, b, n, k, m](Tape& t, int self) {
                const auto g = t.grad_ref(self).mat(n, m);
                if (t.needs(a)) t.grad_ref(a).mat(n, k) += g * t.value(b).mat(m, k);
                if (t.needs(b)) t.grad_ref(b).mat(m, k) += g.transpose() * t.value(a).mat(n, k);
              },
              "matmul_nt");
}

int Tape::softmax_rows(int x) {
  const Tensor& tx = check2d(x, "softmax_rows");
  const int n = tx.dim(0), m = tx.dim(1);
  Tensor out = Tensor::zeros({n, m});
  auto xm = tx.mat(n, m);
  auto ym = out.mat(n, m);
  for (int i = 0; i < n; ++i) {
    const double mx = xm.row(i).maxCoeff();
    ym.row(i) = (xm.row(i).array() - mx).exp();
    ym.row(i) /= ym.row(i).sum();
  }
  return push(std::move(out), needs(x),
              [x, n, m](Tape& t, int self) {
                if (!t.needs(x)) return;
                const auto y = t.value(self).mat(n, m);
                const auto g = t.grad_ref(self).mat(n, m);
                auto gx = t.grad_ref(x).mat(n, m);
                for (int i = 0; i < n; ++i) {
                  const double dot = g.row(i).dot(y.row(i));
                  gx.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
                }
              },
              "softmax_rows");
}

int Tape::relu(int x) {
  const Tensor& tx = value(x);
  Tensor out{tx.shape, tx.data.max(0.0)};
  return push(std::move(out), needs(x),
              [x](Tape& t, int self) {
                if (!t.needs(x)) return;
                // subgradient 0 at the kink
                t.grad_ref(x).data +=
                    (t.value(x).data > 0.0).cast<double>() * t.grad_ref(self).data;
              },
              "relu");
}

int Tape::conv2d(int x, int kernel, int bias) {
  const Tensor& tx = value(x);
  const Tensor& tk = value(kernel);
  const Tensor& tb = value(bias);
  if (tx.rank() != 3 || tk.rank() != 4) fail("conv2d", "expected [h,w,ci] and [kh,kw,ci,co]");
  const int h = tx.dim(0), w = tx.dim(1), ci = tx.dim(2);
  const int kh = tk.dim(0), kw = tk.dim(1), co = tk.dim(3);
  if (tk.dim(2) != ci) fail("conv2d", "channel mismatch");
  if (tb.rank() != 1 || tb.dim(0) != co) fail("conv2d", "bias shape mismatch");
  if (h < kh || w < kw) fail("conv2d", "input smaller than kernel");
  const int oh = h - kh + 1, ow = w - kw + 1;
  const Eigen::Index patch = static_cast<Eigen::Index>(kh) * kw * ci;

  const RowMat m = im2col(tx, kh, kw);
  Tensor out = Tensor::zeros({oh, ow, co});
  auto ym = out.mat(oh * ow, co);
  ym = m * tk.mat(static_cast<int>(patch), co);
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(tb.data.data(), co);

  return push(std::move(out), needs(x) || needs(kernel) || needs(bias),
              [x, kernel, bias, h, w, ci, kh, kw, co, oh, ow, patch](Tape& t, int self) {
                const auto gy = t.grad_ref(self).mat(oh * ow, co);
                if (t.needs(bias)) {
                  Eigen::Map<Eigen::RowVectorXd>(t.grad_ref(bias).data.data(), co) +=
                      gy.colwise().sum();
                }
                if (t.needs(kernel)) {
                  const RowMat m2 = im2col(t.value(x), kh, kw);
                  t.grad_ref(kernel).mat(static_cast<int>(patch), co) +=
                      m2.transpose() * gy;
                }
                if (t.needs(x)) {
                  const RowMat gm =
                      gy * t.value(kernel).mat(static_cast<int>(patch), co).transpose();
                  auto& gx = t.grad_ref(x).data;
                  for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                      const Eigen::Index row = static_cast<Eigen::Index>(oy) * ow + ox;
                      Eigen::Index col = 0;
                      for (int ky = 0; ky < kh; ++ky) {
                        double* dst =
                            gx.data() + (static_cast<Eigen::Index>(oy + ky) * w + ox) * ci;
                        for (int kx = 0; kx < kw; ++kx) {
                          for (int c = 0; c < ci; ++c) dst[kx * ci + c] += gm(row, col++);
                        }
                      }
                    }
                  }
                }
              },
              "conv2d");
}

int Tape::maxpool2d(int x) {
  const Tensor& tx = value(x);
  if (tx.rank() != 3) fail("maxpool2d", "expected [h,w,c]");
  const int h = tx.dim(0), w = tx.dim(1), c = tx.dim(2);
  if (h < 2 || w < 2) fail("maxpool2d", "input smaller than the 2x2 window");
  const int oh = h / 2, ow = w / 2;
  Tensor out = Tensor::zeros({oh, ow, c});
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(out.size()));
  auto idx = [w, c](int y, int xw, int ch) {
    return (static_cast<Eigen::Index>(y) * w + xw) * c + ch;
  };
  Eigen::Index o = 0;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int ch = 0; ch < c; ++ch, ++o) {
        // ties go to the first element in row-major window order
        Eigen::Index best = idx(2 * oy, 2 * ox, ch);
        double bv = tx.data[best];
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const Eigen::Index k = idx(2 * oy + dy, 2 * ox + dx, ch);
            if (tx.data[k] > bv) {
              bv = tx.data[k];
              best = k;
            }
          }
        }
        out.data[o] = bv;
        argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return push(std::move(out), needs(x),
              [x, argmax = std::move(argmax)](Tape& t, int self) {
                if (!t.needs(x)) return;
                auto& gx = t.grad_ref(x).data;
                const auto& g = t.grad_ref(self).data;
                for (Eigen::Index o = 0; o < g.size(); ++o) {
                  gx[argmax[static_cast<std::size_t>(o)]] += g[o];
                }
              },
              "maxpool2d");
}

int Tape::adaptive_avgpool(int x, int p, int q) {
  const Tensor& tx = value(x);
  if (tx.rank() != 3) fail("adaptive_avgpool", "expected [h,w,c]");
  const int h = tx.dim(0), w = tx.dim(1), c = tx.dim(2);
  if (p < 1 || q < 1 || p > h || q > w) fail("adaptive_avgpool", "bad output size");
  auto lo = [](int i, int n, int m) { return (i * n) / m; };
  Tensor out = Tensor::zeros({p, q, c});
  for (int i = 0; i < p; ++i) {
    const int r0 = lo(i, h, p), r1 = lo(i + 1, h, p);
    for (int j = 0; j < q; ++j) {
      const int c0 = lo(j, w, q), c1 = lo(j + 1, w, q);
      const double inv = 1.0 / (static_cast<double>(r1 - r0) * (c1 - c0));
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int r = r0; r < r1; ++r) {
          for (int cc = c0; cc < c1; ++cc) {
            acc += tx.data[(static_cast<Eigen::Index>(r) * w + cc) * c + ch];
          }
        }
        out.data[(static_cast<Eigen::Index>(i) * q + j) * c + ch] = acc * inv;
      }
    }
  }
  return push(std::move(out), needs(x),
              [x, p, q, h, w, c, lo](Tape& t, int self) {
                if (!t.needs(x)) return;
                auto& gx = t.grad_ref(x).data;
                const auto& g = t.grad_ref(self).data;
                for (int i = 0; i < p; ++i) {
                  const int r0 = lo(i, h, p), r1 = lo(i + 1, h, p);
                  for (int j = 0; j < q; ++j) {
                    const int c0 = lo(j, w, q), c1 = lo(j + 1, w, q);
                    const double inv = 1.0 / (static_cast<double>(r1 - r0) * (c1 - c0));
                    for (int ch = 0; ch < c; ++ch) {
                      const double gv =
                          g[(static_cast<Eigen::Index>(i) * q + j) * c + ch] * inv;
                      for (int r = r0; r < r1; ++r) {
                        for (int cc = c0; cc < c1; ++cc) {
                          gx[(static_cast<Eigen::Index>(r) * w + cc) * c + ch] += gv;
                        }
                      }
                    }
                  }
                }
              },
              "adaptive_avgpool");
}

int Tape::reshape(int x, std::vector<int> shape) {
  const Tensor& tx = value(x);
  if (numel(shape) != tx.size()) fail("reshape", "element count mismatch");
  Tensor out{std::move(shape), tx.data};
  return push(std::move(out), needs(x),
              [x](Tape& t, int self) {
                if (t.needs(x)) t.grad_ref(x).data += t.grad_ref(self).data;
              },
              "reshape");
}

int Tape::concat_cols(const std::vector<int>& xs) {
  if (xs.empty()) fail("concat_cols", "no inputs");
  const int n = check2d(xs[0], "concat_cols").dim(0);
  int total = 0;
  bool any = false;
  for (int id : xs) {
    const Tensor& t = check2d(id, "concat_cols");
    if (t.dim(0) != n) fail("concat_cols", "row count mismatch");
    total += t.dim(1);
    any = any || needs(id);
  }
  Tensor out = Tensor::zeros({n, total});
  auto om = out.mat(n, total);
  int at = 0;
  for (int id : xs) {
    const Tensor& t = value(id);
    om.middleCols(at, t.dim(1)) = t.mat(n, t.dim(1));
    at += t.dim(1);
  }
  return push(std::move(out), any,
              [xs, n, total](Tape& t, int self) {
                const auto g = t.grad_ref(self).mat(n, total);
                int at = 0;
                for (int id : xs) {
                  const int c = t.value(id).dim(1);
                  if (t.needs(id)) t.grad_ref(id).mat(n, c) += g.middleCols(at, c);
                  at += c;
                }
              },
              "concat_cols");
}

int Tape::rmse(int pred, int label) {
  const Tensor& tp = value(pred);
  const Tensor& tl = value(label);
  if (tp.shape != tl.shape) fail("rmse", "shape mismatch");
  const double n = static_cast<double>(tp.size());
  const double mse = (tp.data - tl.data).square().sum() / n;
  Tensor out{{1}, Eigen::ArrayXd::Constant(1, std::sqrt(mse))};
  return push(std::move(out), needs(pred) || needs(label),
              [pred, label, n](Tape& t, int self) {
                const double v = t.value(self).data[0];
                if (v == 0.0) return;  // flat minimum, gradient defined as 0
                const double g0 = t.grad_ref(self).data[0];
                const Eigen::ArrayXd d =
                    (t.value(pred).data - t.value(label).data) * (g0 / (n * v));
                if (t.needs(pred)) t.grad_ref(pred).data += d;
                if (t.needs(label)) t.grad_ref(label).data -= d;
              },
              "rmse");
}

void Tape::backward(int node) {
  if (backward_run_) {
    throw std::runtime_error("backward: tape already consumed; run a new forward pass");
  }
  Node& loss = nodes_[static_cast<std::size_t>(node)];
  if (loss.value.size() != 1) throw std::runtime_error("backward: loss must be scalar");
  for (Node& n : nodes_) {
    if (n.needs_grad) n.grad = Tensor::zeros(n.value.shape);
  }
  backward_run_ = true;
  // A loss that never touches a parameter leaves every gradient zero-filled.
  if (!loss.needs_grad) return;
  loss.grad.data[0] = 1.0;
  for (int id = node; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad && n.backprop) n.backprop(*this, id);
  }
}

}  // namespace ssp::ad
