#ifndef SSP_TESTS_ORACLE_EIGEN_HPP
#define SSP_TESTS_ORACLE_EIGEN_HPP

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

namespace ssp_tests {

/// Brute-force eigensolver oracle for symmetric matrices: plain Jacobi
/// rotations applied until the off-diagonal mass is below 1e-14 of the
/// Frobenius norm. Written independently of the library solver (rotation via
/// atan2, explicit rotation matrices); test-only code.
inline void oracle_eigen(const Eigen::MatrixXd& sym, Eigen::VectorXd& values,
                         Eigen::MatrixXd& vectors) {
  const int n = static_cast<int>(sym.rows());
  Eigen::MatrixXd a = sym;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double target = 1e-14 * sym.norm();
  for (int pass = 0; pass < 500; ++pass) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    if (std::sqrt(off) <= target) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double phi = 0.5 * std::atan2(2.0 * a(p, q), a(q, q) - a(p, p));
        const double c = std::cos(phi), s = std::sin(phi);
        Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(n, n);
        rot(p, p) = c;
        rot(q, q) = c;
        rot(p, q) = s;
        rot(q, p) = -s;
        a = rot.transpose() * a * rot;
        v = v * rot;
      }
    }
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a(x, x) > a(y, y); });
  values.resize(n);
  vectors.resize(n, n);
  for (int k = 0; k < n; ++k) {
    const int src = order[static_cast<std::size_t>(k)];
    values[k] = a(src, src);
    vectors.col(k) = v.col(src);
  }
}

}  // namespace ssp_tests

#endif  // SSP_TESTS_ORACLE_EIGEN_HPP
