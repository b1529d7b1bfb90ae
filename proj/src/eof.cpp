#include "ssp/eof.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ssp/json_io.hpp"
#include "ssp/util.hpp"

namespace ssp {

namespace {

/// Largest-magnitude entry positive; on ties the shallowest qualifying entry
/// decides. Keeps serialized bases reproducible across solver orderings.
void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  int best = 0;
  double mag = std::abs(v[0]);
  for (int i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > mag) {
      mag = std::abs(v[i]);
      best = i;
    }
  }
  if (v[best] < 0.0) v = -v;
}

void sort_descending(EigenPairs& p) {
  const int n = static_cast<int>(p.values.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return p.values[a] > p.values[b]; });
  Eigen::VectorXd vals(n);
  Eigen::MatrixXd vecs(p.vectors.rows(), n);
  for (int k = 0; k < n; ++k) {
    vals[k] = p.values[order[k]];
    vecs.col(k) = p.vectors.col(order[k]);
  }
  p.values = std::move(vals);
  p.vectors = std::move(vecs);
}

/// Appends an orthonormal vector for a null direction: the first canonical
/// basis vector with a usable component orthogonal to `used` columns.
Eigen::VectorXd null_filler(const Eigen::MatrixXd& used, int filled) {
  const Eigen::Index h = used.rows();
  for (Eigen::Index c = 0; c < h; ++c) {
    Eigen::VectorXd v = Eigen::VectorXd::Unit(h, c);
    for (int k = 0; k < filled; ++k) {
      v -= used.col(k).dot(v) * used.col(k);
    }
    const double n = v.norm();
    if (n > 1e-6) return v / n;
  }
  throw std::runtime_error("eof_decompose: could not complete orthonormal basis");
}

}  // namespace

EigenPairs jacobi_eigen_symmetric(const Eigen::MatrixXd& sym, double tol_factor,
                                  int max_sweeps) {
  if (sym.rows() != sym.cols()) {
    throw std::invalid_argument("jacobi_eigen_symmetric: matrix is not square");
  }
  if (!sym.allFinite()) {
    throw std::invalid_argument("jacobi_eigen_symmetric: non-finite input");
  }
  const int n = static_cast<int>(sym.rows());
  Eigen::MatrixXd a = sym;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

  auto off_norm = [&]() {
    double s = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
    return std::sqrt(s);
  };
  const double target = tol_factor * sym.norm();

  for (int sweep = 0; sweep < max_sweeps && off_norm() > target; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (int r = 0; r < n; ++r) {
          const double arp = a(r, p);
          const double arq = a(r, q);
          a(r, p) = c * arp - s * arq;
          a(r, q) = s * arp + c * arq;
        }
        for (int r = 0; r < n; ++r) {
          const double apr = a(p, r);
          const double aqr = a(q, r);
          a(p, r) = c * apr - s * aqr;
          a(q, r) = s * apr + c * aqr;
        }
        for (int r = 0; r < n; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
  }

  EigenPairs out;
  out.values = a.diagonal();
  out.vectors = std::move(v);
  sort_descending(out);
  return out;
}

Profile mean_profile(const ProfileMatrix& m) {
  if (m.columns.cols() < 1) throw std::invalid_argument("mean_profile: empty matrix");
  if (m.columns.rows() != m.grid.layers()) {
    throw std::invalid_argument("mean_profile: row count does not match grid");
  }
  Profile p{m.grid, Eigen::VectorXd(m.columns.rows())};
  // Deviation-form row mean: exact for identical columns.
  for (Eigen::Index h = 0; h < m.columns.rows(); ++h) {
    const double ref = m.columns(h, 0);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m.columns.cols(); ++j) acc += m.columns(h, j) - ref;
    p.speeds[h] = ref + acc / static_cast<double>(m.columns.cols());
  }
  return p;
}

Eigen::MatrixXd residual_matrix(const ProfileMatrix& m, const Profile& mean) {
  if (mean.speeds.size() != m.columns.rows()) {
    throw std::invalid_argument("residual_matrix: mean length mismatch");
  }
  return m.columns.colwise() - mean.speeds;
}

EigenPairs eof_decompose(const Eigen::MatrixXd& resid, EofRoute route) {
  if (!resid.allFinite()) {
    throw std::invalid_argument("eof_decompose: non-finite input");
  }
  const Eigen::Index h = resid.rows();
  const Eigen::Index j = resid.cols();
  if (h < 1 || j < 2) {
    throw std::invalid_argument("eof_decompose: need at least 2 samples");
  }
  if (route == EofRoute::kAuto) {
    route = j < h ? EofRoute::kGram : EofRoute::kDirect;
  }
  const int k_max = static_cast<int>(std::min(h, j));

  EigenPairs out;
  out.values = Eigen::VectorXd(k_max);
  out.vectors = Eigen::MatrixXd(h, k_max);

  if (route == EofRoute::kDirect) {
    const Eigen::MatrixXd cov =
        (resid * resid.transpose()) / static_cast<double>(j);
    EigenPairs full = jacobi_eigen_symmetric(cov);
    out.values = full.values.head(k_max);
    out.vectors = full.vectors.leftCols(k_max);
  } else {
    const Eigen::MatrixXd gram =
        (resid.transpose() * resid) / static_cast<double>(j);
    EigenPairs small = jacobi_eigen_symmetric(gram);
    // Nonzero Gram eigenpairs map through resid; ||resid * u||^2 = J * mu.
    // Mapped columns are re-orthonormalized in order (near-null directions
    // come out noisy), and vanishing eigenvalues are completed from the null
    // space.
    const double cutoff = std::max(small.values[0], 0.0) * 1e-13;
    for (int k = 0; k < k_max; ++k) {
      const double mu = small.values[k];
      out.values[k] = std::max(mu, 0.0);
      bool placed = false;
      if (mu > cutoff) {
        Eigen::VectorXd w = resid * small.vectors.col(k);
        const double raw_norm = w.norm();
        for (int prev = 0; prev < k; ++prev) {
          w -= out.vectors.col(prev).dot(w) * out.vectors.col(prev);
        }
        const double n = w.norm();
        if (n > 1e-6 * raw_norm && n > 0.0) {
          out.vectors.col(k) = w / n;
          placed = true;
        }
      }
      if (!placed) out.vectors.col(k) = null_filler(out.vectors, k);
    }
  }

  for (int k = 0; k < k_max; ++k) fix_sign(out.vectors.col(k));
  return out;
}

EofBasis build_basis(const ProfileMatrix& m, EofRoute route) {
  EofBasis basis;
  basis.grid = m.grid;
  basis.sample_count = static_cast<int>(m.columns.cols());
  Profile mean = mean_profile(m);
  EigenPairs pairs = eof_decompose(residual_matrix(m, mean), route);
  basis.mean = std::move(mean.speeds);
  basis.eigvecs = std::move(pairs.vectors);
  basis.eigvals = std::move(pairs.values);
  return basis;
}

Eigen::VectorXd project(const EofBasis& basis, const Profile& target, int order) {
  if (order < 1 || order > basis.k_max()) {
    throw std::invalid_argument("project: order out of range");
  }
  if (target.speeds.size() != basis.mean.size()) {
    throw std::invalid_argument("project: profile length mismatch");
  }
  return basis.eigvecs.leftCols(order).transpose() * (target.speeds - basis.mean);
}

Profile reconstruct(const EofBasis& basis, const Eigen::VectorXd& coeffs) {
  if (coeffs.size() > basis.k_max()) {
    throw std::invalid_argument("reconstruct: more coefficients than basis vectors");
  }
  Profile p{basis.grid, basis.mean + basis.eigvecs.leftCols(coeffs.size()) * coeffs};
  return p;
}

void write_basis(std::ostream& os, const EofBasis& basis) {
  nlohmann::json j;
  j["format"] = "ssp.eofbasis.v1";
  j["grid"] = basis.grid;
  j["samples"] = basis.sample_count;
  j["k_max"] = basis.k_max();
  j["eigvals"] = std::vector<double>(basis.eigvals.begin(), basis.eigvals.end());
  j["provenance"] = basis.provenance;
  os << j.dump() << '\n';
  write_f64(os, basis.mean.data(), static_cast<std::size_t>(basis.mean.size()));
  write_f64(os, basis.eigvecs.data(),
            static_cast<std::size_t>(basis.eigvecs.size()));  // column-major
  if (!os) throw std::runtime_error("basis write failed");
}

EofBasis read_basis(std::istream& is) {
  const nlohmann::json j = read_header_line(is, "ssp.eofbasis.v1");
  EofBasis basis;
  basis.grid = j.at("grid").get<DepthGrid>();
  basis.sample_count = j.at("samples").get<int>();
  const int k_max = j.at("k_max").get<int>();
  const auto vals = j.at("eigvals").get<std::vector<double>>();
  if (static_cast<int>(vals.size()) != k_max) {
    throw std::runtime_error("basis header eigenvalue count mismatch");
  }
  basis.eigvals = Eigen::Map<const Eigen::VectorXd>(vals.data(), k_max);
  basis.provenance = j.value("provenance", "");
  const int h = basis.grid.layers();
  basis.mean.resize(h);
  read_f64(is, basis.mean.data(), static_cast<std::size_t>(h));
  basis.eigvecs.resize(h, k_max);
  read_f64(is, basis.eigvecs.data(), static_cast<std::size_t>(h) * k_max);
  return basis;
}

const EofBasis* BasisSet::basis_at(int i, int j) const {
  if (scope == "region") return shared ? &*shared : nullptr;
  const std::size_t idx = static_cast<std::size_t>(i) * geom.n_lon + j;
  if (idx >= cells.size() || !cells[idx]) return nullptr;
  return &*cells[idx];
}

BasisSet build_basis_set(const RasterStack& profiles, const std::vector<TimeKey>& months,
                         const std::string& scope) {
  if (!profiles.depth_grid) {
    throw std::invalid_argument("build_basis_set: stack has no depth grid");
  }
  if (scope != "cell" && scope != "region") {
    throw std::invalid_argument("build_basis_set: scope must be 'cell' or 'region'");
  }
  BasisSet set;
  set.geom = profiles.geom;
  set.grid = *profiles.depth_grid;
  set.scope = scope;

  auto cell_columns = [&](int i, int j) {
    std::vector<Eigen::VectorXd> cols;
    for (const TimeKey& m : months) {
      const int t = profiles.find_time(m.monthly());
      if (t < 0) continue;
      if (auto p = profiles.profile_at(t, i, j)) cols.push_back(std::move(p->speeds));
    }
    return cols;
  };
  auto to_matrix = [&](const std::vector<Eigen::VectorXd>& cols) {
    ProfileMatrix m{set.grid, Eigen::MatrixXd(set.grid.layers(),
                                              static_cast<Eigen::Index>(cols.size()))};
    for (std::size_t c = 0; c < cols.size(); ++c) m.columns.col(c) = cols[c];
    return m;
  };

  if (scope == "region") {
    std::vector<Eigen::VectorXd> pool;
    for (int i = 0; i < set.geom.n_lat; ++i) {
      for (int j = 0; j < set.geom.n_lon; ++j) {
        auto cols = cell_columns(i, j);
        pool.insert(pool.end(), std::make_move_iterator(cols.begin()),
                    std::make_move_iterator(cols.end()));
      }
    }
    if (pool.size() < 2) {
      throw std::runtime_error("build_basis_set: fewer than 2 profiles in region");
    }
    set.shared = build_basis(to_matrix(pool));
    return set;
  }

  set.cells.resize(static_cast<std::size_t>(set.geom.cells()));
  for (int i = 0; i < set.geom.n_lat; ++i) {
    for (int j = 0; j < set.geom.n_lon; ++j) {
      auto cols = cell_columns(i, j);
      if (cols.size() < 2) continue;  // cell left empty, skipped downstream
      set.cells[static_cast<std::size_t>(i) * set.geom.n_lon + j] =
          build_basis(to_matrix(cols));
    }
  }
  return set;
}

void write_basis_set(std::ostream& os, const BasisSet& set) {
  nlohmann::json j;
  j["format"] = "ssp.eofset.v1";
  j["geometry"] = set.geom;
  j["grid"] = set.grid;
  j["scope"] = set.scope;
  j["provenance"] = set.provenance;
  nlohmann::json cells = nlohmann::json::array();
  if (set.scope == "cell") {
    for (const auto& c : set.cells) {
      if (!c) {
        cells.push_back(nullptr);
        continue;
      }
      cells.push_back({{"samples", c->sample_count},
                       {"k_max", c->k_max()},
                       {"eigvals", std::vector<double>(c->eigvals.begin(),
                                                       c->eigvals.end())}});
    }
  } else if (set.shared) {
    cells.push_back({{"samples", set.shared->sample_count},
                     {"k_max", set.shared->k_max()},
                     {"eigvals", std::vector<double>(set.shared->eigvals.begin(),
                                                     set.shared->eigvals.end())}});
  }
  j["cells"] = cells;
  os << j.dump() << '\n';

  auto write_blob = [&](const EofBasis& b) {
    write_f64(os, b.mean.data(), static_cast<std::size_t>(b.mean.size()));
    write_f64(os, b.eigvecs.data(), static_cast<std::size_t>(b.eigvecs.size()));
  };
  if (set.scope == "cell") {
    for (const auto& c : set.cells) {
      if (c) write_blob(*c);
    }
  } else if (set.shared) {
    write_blob(*set.shared);
  }
  if (!os) throw std::runtime_error("basis set write failed");
}

BasisSet read_basis_set(std::istream& is) {
  const nlohmann::json j = read_header_line(is, "ssp.eofset.v1");
  BasisSet set;
  set.geom = j.at("geometry").get<GridGeometry>();
  set.grid = j.at("grid").get<DepthGrid>();
  set.scope = j.at("scope").get<std::string>();
  set.provenance = j.value("provenance", "");
  const auto& cells = j.at("cells");

  auto read_one = [&](const nlohmann::json& meta) {
    EofBasis b;
    b.grid = set.grid;
    b.sample_count = meta.at("samples").get<int>();
    const int k_max = meta.at("k_max").get<int>();
    const auto vals = meta.at("eigvals").get<std::vector<double>>();
    b.eigvals = Eigen::Map<const Eigen::VectorXd>(vals.data(),
                                                  static_cast<Eigen::Index>(vals.size()));
    const int h = set.grid.layers();
    b.mean.resize(h);
    read_f64(is, b.mean.data(), static_cast<std::size_t>(h));
    b.eigvecs.resize(h, k_max);
    read_f64(is, b.eigvecs.data(), static_cast<std::size_t>(h) * k_max);
    return b;
  };

  if (set.scope == "region") {
    if (cells.size() != 1) throw std::runtime_error("region basis set wants 1 entry");
    set.shared = read_one(cells.at(0));
    return set;
  }
  if (static_cast<int>(cells.size()) != set.geom.cells()) {
    throw std::runtime_error("basis set cell count does not match geometry");
  }
  set.cells.resize(cells.size());
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (!cells.at(k).is_null()) set.cells[k] = read_one(cells.at(k));
  }
  return set;
}

}  // namespace ssp
