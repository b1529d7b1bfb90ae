#ifndef SSP_EOF_HPP
#define SSP_EOF_HPP

#include <Eigen/Core>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ssp/geo.hpp"

namespace ssp {

/// Historical profiles of one cell (or region), one column per sample.
struct ProfileMatrix {
  DepthGrid grid;
  Eigen::MatrixXd columns;  // layers x samples
};

/// Orthonormal principal-component basis of a profile anomaly covariance.
struct EofBasis {
  DepthGrid grid;
  Eigen::VectorXd mean;     // layers
  Eigen::MatrixXd eigvecs;  // layers x k_max, orthonormal columns
  Eigen::VectorXd eigvals;  // k_max, non-negative, descending
  int sample_count = 0;
  std::string provenance;

  int k_max() const { return static_cast<int>(eigvals.size()); }
};

struct EigenPairs {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // orthonormal columns
};

/// Cyclic Jacobi diagonalisation of a symmetric matrix. Sweeps until the
/// off-diagonal Frobenius norm falls below tol_factor * ||A||_F (or
/// max_sweeps). Pairs are returned in descending eigenvalue order.
EigenPairs jacobi_eigen_symmetric(const Eigen::MatrixXd& sym,
                                  double tol_factor = 1e-12,
                                  int max_sweeps = 100);

Profile mean_profile(const ProfileMatrix& m);

/// columns minus the mean; throws on length mismatch.
Eigen::MatrixXd residual_matrix(const ProfileMatrix& m, const Profile& mean);

enum class EofRoute {
  kAuto,    // Gram matrix when samples < layers, direct otherwise
  kDirect,  // layers x layers covariance
  kGram,    // samples x samples Gram matrix, vectors mapped back
};

/// Eigenpairs of resid * resid^T / samples, k_max = min(layers, samples).
/// Each eigenvector is oriented so its largest-magnitude entry is positive
/// (shallowest such entry on ties).
EigenPairs eof_decompose(const Eigen::MatrixXd& resid, EofRoute route = EofRoute::kAuto);

/// mean_profile + residual_matrix + eof_decompose in one step.
EofBasis build_basis(const ProfileMatrix& m, EofRoute route = EofRoute::kAuto);

/// Coefficients of the target anomaly on the leading `order` eigenvectors.
Eigen::VectorXd project(const EofBasis& basis, const Profile& target, int order);

/// mean + eigvecs(:, 0..K-1) * coeffs.
Profile reconstruct(const EofBasis& basis, const Eigen::VectorXd& coeffs);

// --- file formats ----------------------------------------------------------

/// One-line JSON header (grid, sample count, k_max, eigenvalues) followed by
/// the mean then the eigenvector columns as little-endian f64.
void write_basis(std::ostream& os, const EofBasis& basis);
EofBasis read_basis(std::istream& is);

/// Per-cell bases over a grid, or one shared basis for the whole region.
struct BasisSet {
  GridGeometry geom;
  DepthGrid grid;
  std::string scope;  // "cell" or "region"
  std::vector<std::optional<EofBasis>> cells;  // row-major, scope "cell"
  std::optional<EofBasis> shared;              // scope "region"
  std::string provenance;

  /// Basis used for cell (i, j) under the configured scope; nullptr when the
  /// cell had too little history.
  const EofBasis* basis_at(int i, int j) const;
};

/// Builds bases from the profile stack restricted to `months` (the training
/// period). Cells with fewer than two complete profiles are left empty.
BasisSet build_basis_set(const RasterStack& profiles, const std::vector<TimeKey>& months,
                         const std::string& scope);

void write_basis_set(std::ostream& os, const BasisSet& set);
BasisSet read_basis_set(std::istream& is);

}  // namespace ssp

#endif  // SSP_EOF_HPP
