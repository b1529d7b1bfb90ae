#ifndef SSP_AUTODIFF_HPP
#define SSP_AUTODIFF_HPP

#include <Eigen/Core>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace ssp::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense tensor, 64-bit, row-major flat storage.
struct Tensor {
  std::vector<int> shape;
  Eigen::ArrayXd data;

  Tensor() = default;
  Tensor(std::vector<int> s, Eigen::ArrayXd d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<int> shape);
  static Tensor from_matrix(const Eigen::MatrixXd& m);  // row-major copy
  static Tensor from_vector(const Eigen::VectorXd& v);

  Eigen::Index size() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  Eigen::Map<const RowMat> mat(int rows, int cols) const {
    return {data.data(), rows, cols};
  }
  Eigen::Map<RowMat> mat(int rows, int cols) { return {data.data(), rows, cols}; }
};

Eigen::Index numel(const std::vector<int>& shape);

/// Records a single forward pass and replays it in reverse. A tape is built,
/// run backward once, then discarded; parameters live outside and are copied
/// in each step.
class Tape {
 public:
  /// Untracked input (data, labels).
  int constant(Tensor value);

  /// Tracked parameter; its gradient is available after backward even when it
  /// never feeds the loss (zero-filled).
  int param(Tensor value);

  // Kernels. Shapes in comments, row-major.
  int add(int a, int b);                        // same shape
  int scale(int x, double s);
  int sum(int x);                               // -> [1]
  int linear(int x, int w, int b);              // [n,di]x[di,do]+[do] -> [n,do]
  int matmul(int a, int b);                     // [n,k]x[k,m] -> [n,m]
  int matmul_nt(int a, int b);                  // [n,k]x[m,k]^T -> [n,m]
  int softmax_rows(int x);                      // [n,m] rows sum to 1
  int relu(int x);
  int conv2d(int x, int kernel, int bias);      // [h,w,ci],[kh,kw,ci,co],[co]
  int maxpool2d(int x);                         // 2x2 window, stride 2
  int adaptive_avgpool(int x, int p, int q);    // [h,w,c] -> [p,q,c]
  int reshape(int x, std::vector<int> shape);
  int concat_cols(const std::vector<int>& xs);  // [n,ci]... -> [n,sum(ci)]
  int rmse(int pred, int label);                // [H],[H] -> [1]

  /// Reverse sweep from a scalar node. Each node's adjoint rule runs exactly
  /// once, in reverse creation order. A second call without a fresh forward
  /// pass is an error.
  void backward(int node);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const;
  const std::vector<int>& params() const { return params_; }
  bool backward_run() const { return backward_run_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&, int self)> backprop;
  };

  int push(Tensor value, bool needs_grad, std::function<void(Tape&, int)> bp,
           const char* op);
  bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  Tensor& grad_ref(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Tensor& check2d(int id, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<int> params_;
  bool backward_run_ = false;
};

}  // namespace ssp::ad

#endif  // SSP_AUTODIFF_HPP
