#include "rapidmix/operator_core.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace rapidmix {

long dense_dim(int local_dim, std::size_t num_sites) {
  if (local_dim < 2) {
    throw argument_error(fmt::format("local dimension must be >= 2, got {}", local_dim));
  }
  long dim = 1;
  for (std::size_t i = 0; i < num_sites; ++i) {
    dim *= local_dim;
    if (dim > kDenseDimLimit) {
      throw resource_error(fmt::format(
          "dense dimension {}^{} exceeds the limit {}", local_dim, num_sites, kDenseDimLimit));
    }
  }
  return dim;
}

bool is_sorted_strict(const std::vector<int>& sites) {
  for (std::size_t i = 0; i + 1 < sites.size(); ++i) {
    if (sites[i] >= sites[i + 1]) return false;
  }
  return sites.empty() || sites.front() >= 0;
}

bool contains_all(const std::vector<int>& haystack, const std::vector<int>& needles) {
  return std::includes(haystack.begin(), haystack.end(), needles.begin(), needles.end());
}

std::vector<int> support_union(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<int> support_difference(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<int> support_intersection(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

DenseOperator::DenseOperator(Matrix m, std::vector<int> support_sites, int d)
    : matrix(std::move(m)), support(std::move(support_sites)), local_dim(d) {
  if (!is_sorted_strict(support)) {
    throw argument_error("operator support must be strictly increasing and nonnegative");
  }
  if (matrix.rows() != matrix.cols()) {
    throw argument_error(
        fmt::format("operator matrix must be square, got {}x{}", matrix.rows(), matrix.cols()));
  }
  long expect = dense_dim(local_dim, support.size());
  if (matrix.rows() != expect) {
    throw argument_error(fmt::format(
        "operator matrix dimension {} does not match {}^{} = {}",
        matrix.rows(), local_dim, support.size(), expect));
  }
}

QuantumState::QuantumState(DenseOperator payload) : op(std::move(payload)) {
  const Matrix& rho = op.matrix;
  double scale = std::max(1.0, rho.norm());
  double asym = (rho - rho.adjoint()).norm();
  if (asym > 1e-10 * scale) {
    throw argument_error(fmt::format(
        "state is not Hermitian: asymmetry {:.3e} (relative tolerance 1e-10)", asym / scale));
  }
  double tr = rho.trace().real();
  if (std::abs(tr - 1.0) > 1e-10) {
    throw argument_error(fmt::format("state trace {:.12f} is not 1 within 1e-10", tr));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (rho + rho.adjoint()),
                                           Eigen::EigenvaluesOnly);
  double lam_min = es.eigenvalues().minCoeff();
  if (lam_min < -1e-10) {
    throw argument_error(
        fmt::format("state has negative eigenvalue {:.3e} below tolerance -1e-10", lam_min));
  }
}

QuantumState::QuantumState(Matrix rho, std::vector<int> support_sites, int d)
    : QuantumState(DenseOperator(std::move(rho), std::move(support_sites), d)) {}

namespace {

// Digit strides for a register of k sites with local dimension d; the first
// site is the most significant digit.
std::vector<long> digit_strides(int d, int k) {
  std::vector<long> stride(k);
  long s = 1;
  for (int j = k - 1; j >= 0; --j) {
    stride[j] = s;
    s *= d;
  }
  return stride;
}

}  // namespace

DenseOperator embed(const DenseOperator& op, const std::vector<int>& full_support) {
  if (!is_sorted_strict(full_support)) {
    throw argument_error("embed: full support must be strictly increasing and nonnegative");
  }
  if (!contains_all(full_support, op.support)) {
    throw argument_error(fmt::format(
        "embed: operator support is not contained in the target register ({} sites)",
        full_support.size()));
  }
  const int d = op.local_dim;
  const int k = static_cast<int>(full_support.size());
  const int m = op.num_sites();
  long dim_full = dense_dim(d, full_support.size());
  long dim_sub = op.dim();

  // positions of op's sites inside the full register
  std::vector<int> pos(m);
  for (int t = 0; t < m; ++t) {
    pos[t] = static_cast<int>(
        std::lower_bound(full_support.begin(), full_support.end(), op.support[t]) -
        full_support.begin());
  }
  std::vector<long> stride = digit_strides(d, k);

  // offset contributed by a given subsystem index placed at pos
  std::vector<long> sub_offset(dim_sub);
  for (long s = 0; s < dim_sub; ++s) {
    long off = 0, t = s;
    for (int u = m - 1; u >= 0; --u) {
      off += (t % d) * stride[pos[u]];
      t /= d;
    }
    sub_offset[s] = off;
  }

  Matrix out = Matrix::Zero(dim_full, dim_full);
  for (long row = 0; row < dim_full; ++row) {
    long i_sub = 0;
    for (int t = 0; t < m; ++t) i_sub = i_sub * d + (row / stride[pos[t]]) % d;
    long env = row - sub_offset[i_sub];
    for (long j = 0; j < dim_sub; ++j) {
      out(row, env + sub_offset[j]) = op.matrix(i_sub, j);
    }
  }
  return DenseOperator(std::move(out), full_support, d);
}

DenseOperator partial_trace(const DenseOperator& op, const std::vector<int>& traced_sites) {
  if (!is_sorted_strict(traced_sites)) {
    throw argument_error("partial_trace: traced sites must be strictly increasing");
  }
  if (!contains_all(op.support, traced_sites)) {
    throw argument_error("partial_trace: traced sites must lie in the operator support");
  }
  const int d = op.local_dim;
  std::vector<int> kept = support_difference(op.support, traced_sites);
  const int k = op.num_sites();
  std::vector<long> stride = digit_strides(d, k);

  auto offsets_for = [&](const std::vector<int>& sites) {
    std::vector<int> pos(sites.size());
    for (std::size_t t = 0; t < sites.size(); ++t) {
      pos[t] = static_cast<int>(
          std::lower_bound(op.support.begin(), op.support.end(), sites[t]) -
          op.support.begin());
    }
    long n = 1;
    for (std::size_t t = 0; t < sites.size(); ++t) n *= d;
    std::vector<long> off(n);
    for (long s = 0; s < n; ++s) {
      long o = 0, t = s;
      for (int u = static_cast<int>(sites.size()) - 1; u >= 0; --u) {
        o += (t % d) * stride[pos[u]];
        t /= d;
      }
      off[s] = o;
    }
    return off;
  };

  std::vector<long> off_keep = offsets_for(kept);
  std::vector<long> off_tr = offsets_for(traced_sites);

  Matrix out = Matrix::Zero(static_cast<long>(off_keep.size()),
                            static_cast<long>(off_keep.size()));
  for (std::size_t r = 0; r < off_keep.size(); ++r) {
    for (std::size_t c = 0; c < off_keep.size(); ++c) {
      Complex acc = 0.0;
      for (long t : off_tr) acc += op.matrix(off_keep[r] + t, off_keep[c] + t);
      out(static_cast<long>(r), static_cast<long>(c)) = acc;
    }
  }
  return DenseOperator(std::move(out), kept, d);
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (long i = 0; i < a.rows(); ++i) {
    for (long j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Matrix symmetrize(const Matrix& m, double tol) {
  double scale = std::max(1.0, m.norm());
  double asym = (m - m.adjoint()).norm();
  if (asym > tol * scale) {
    throw numeric_error(fmt::format(
        "matrix is not Hermitian: relative asymmetry {:.3e} exceeds {:.1e}", asym / scale, tol));
  }
  return 0.5 * (m + m.adjoint());
}

Spectrum herm_eig(const Matrix& m) {
  Matrix h = symmetrize(m);
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success) {
    throw numeric_error("eigendecomposition failed to converge");
  }
  Spectrum s{es.eigenvalues(), es.eigenvectors()};
  long n = h.rows();
  double gram = (s.eigenvectors.adjoint() * s.eigenvectors - Matrix::Identity(n, n)).norm();
  if (gram > 1e-9 * std::sqrt(static_cast<double>(n))) {
    throw numeric_error(fmt::format("eigenvector Gram residual {:.3e} too large", gram));
  }
  double scale = std::max(1.0, h.norm());
  double recon =
      (h - s.eigenvectors * s.eigenvalues.asDiagonal() * s.eigenvectors.adjoint()).norm();
  if (recon > 1e-9 * scale) {
    throw numeric_error(fmt::format("spectral reconstruction residual {:.3e} too large", recon));
  }
  return s;
}

Spectrum herm_eig(const DenseOperator& op) { return herm_eig(op.matrix); }

namespace {

Matrix rebuild(const Spectrum& s, const RealVector& f) {
  return s.eigenvectors * f.asDiagonal() * s.eigenvectors.adjoint();
}

double clip_threshold(const RealVector& lam) {
  double m = lam.cwiseAbs().maxCoeff();
  return kEigClip * std::max(m, 1e-300);
}

}  // namespace

Matrix mat_exp(const Matrix& h) {
  Spectrum s = herm_eig(h);
  return rebuild(s, s.eigenvalues.array().exp().matrix());
}

Matrix mat_log(const Matrix& h) {
  Spectrum s = herm_eig(h);
  double clip = clip_threshold(s.eigenvalues);
  RealVector f(s.eigenvalues.size());
  for (long i = 0; i < f.size(); ++i) {
    double lam = s.eigenvalues(i);
    if (lam <= clip) {
      throw domain_error(fmt::format(
          "log of operator with nonpositive eigenvalue {:.3e}", lam));
    }
    f(i) = std::log(lam);
  }
  return rebuild(s, f);
}

Matrix mat_sqrt(const Matrix& h) {
  Spectrum s = herm_eig(h);
  double clip = clip_threshold(s.eigenvalues);
  RealVector f(s.eigenvalues.size());
  for (long i = 0; i < f.size(); ++i) {
    double lam = s.eigenvalues(i);
    if (lam < -clip) {
      throw domain_error(fmt::format("sqrt of operator with negative eigenvalue {:.3e}", lam));
    }
    f(i) = std::sqrt(std::max(lam, 0.0));
  }
  return rebuild(s, f);
}

Matrix mat_pow(const Matrix& h, double a) {
  Spectrum s = herm_eig(h);
  double clip = clip_threshold(s.eigenvalues);
  RealVector f(s.eigenvalues.size());
  for (long i = 0; i < f.size(); ++i) {
    double lam = s.eigenvalues(i);
    if (lam < -clip) {
      throw domain_error(
          fmt::format("pow({}) of operator with negative eigenvalue {:.3e}", a, lam));
    }
    if (lam <= clip) {
      // generalized-inverse convention: zero stays zero on the kernel
      f(i) = (a == 0.0) ? 1.0 : 0.0;
    } else {
      f(i) = std::pow(lam, a);
    }
  }
  return rebuild(s, f);
}

Matrix mat_ginv(const Matrix& h) {
  Spectrum s = herm_eig(h);
  double clip = clip_threshold(s.eigenvalues);
  RealVector f(s.eigenvalues.size());
  for (long i = 0; i < f.size(); ++i) {
    double lam = s.eigenvalues(i);
    f(i) = (std::abs(lam) <= clip) ? 0.0 : 1.0 / lam;
  }
  return rebuild(s, f);
}

double op_norm(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::BDCSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

double trace_norm(const Matrix& m) { return schatten_norm(m, 1.0); }

double schatten_norm(const Matrix& m, double p) {
  if (p < 1.0) throw argument_error(fmt::format("Schatten order p = {} must be >= 1", p));
  Eigen::BDCSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  if (std::isinf(p)) return sv.size() ? sv(0) : 0.0;
  double acc = 0.0;
  for (long i = 0; i < sv.size(); ++i) acc += std::pow(sv(i), p);
  return std::pow(acc, 1.0 / p);
}

namespace {

// sigma^a with a full-rank check; throws domain_error on singular sigma.
Matrix full_rank_power(const Matrix& sigma, double a, const char* who) {
  Spectrum s = herm_eig(sigma);
  double clip = clip_threshold(s.eigenvalues);
  if (s.eigenvalues.minCoeff() <= clip) {
    throw domain_error(fmt::format(
        "{}: reference state is singular (min eigenvalue {:.3e})", who,
        s.eigenvalues.minCoeff()));
  }
  RealVector f(s.eigenvalues.size());
  for (long i = 0; i < f.size(); ++i) f(i) = std::pow(s.eigenvalues(i), a);
  return rebuild(s, f);
}

}  // namespace

double weighted_norm(const Matrix& x, const Matrix& sigma, double p) {
  if (x.rows() != sigma.rows()) {
    throw argument_error("weighted_norm: operator and state dimensions differ");
  }
  if (p < 1.0) throw argument_error(fmt::format("weighted norm order p = {} must be >= 1", p));
  if (std::isinf(p)) return op_norm(x);
  Matrix w = full_rank_power(sigma, 1.0 / (2.0 * p), "weighted_norm");
  return schatten_norm(w * x * w, p);
}

Complex kms_inner(const Matrix& x, const Matrix& y, const Matrix& sigma) {
  Matrix root = full_rank_power(sigma, 0.5, "kms_inner");
  return (root * x.adjoint() * root * y).trace();
}

Complex gns_inner(const Matrix& x, const Matrix& y, const Matrix& sigma) {
  Spectrum s = herm_eig(sigma);
  if (s.eigenvalues.minCoeff() <= clip_threshold(s.eigenvalues)) {
    throw domain_error("gns_inner: reference state is singular");
  }
  return (sigma * x.adjoint() * y).trace();
}

Matrix modular_conjugate(const Matrix& x, const Matrix& sigma, double s) {
  Spectrum spec = herm_eig(sigma);
  double clip = clip_threshold(spec.eigenvalues);
  if (spec.eigenvalues.minCoeff() <= clip) {
    throw domain_error("modular_conjugate: reference state is singular");
  }
  long n = spec.eigenvalues.size();
  Vector phase(n);
  for (long i = 0; i < n; ++i) {
    phase(i) = std::exp(Complex(0.0, s * std::log(spec.eigenvalues(i))));
  }
  Matrix u = spec.eigenvectors * phase.asDiagonal() * spec.eigenvectors.adjoint();
  return u * x * u.adjoint();
}

nlohmann::json operator_to_json(const DenseOperator& op) {
  nlohmann::json data = nlohmann::json::array();
  for (long i = 0; i < op.matrix.rows(); ++i) {
    for (long j = 0; j < op.matrix.cols(); ++j) {
      data.push_back({op.matrix(i, j).real(), op.matrix(i, j).imag()});
    }
  }
  return {{"support", op.support}, {"local_dim", op.local_dim},
          {"rows", op.matrix.rows()}, {"data", std::move(data)}};
}

DenseOperator operator_from_json(const nlohmann::json& j) {
  std::vector<int> support = j.at("support").get<std::vector<int>>();
  int d = j.at("local_dim").get<int>();
  long rows = j.at("rows").get<long>();
  const auto& data = j.at("data");
  if (static_cast<long>(data.size()) != rows * rows) {
    throw argument_error(fmt::format(
        "serialized operator has {} entries, expected {}", data.size(), rows * rows));
  }
  Matrix m(rows, rows);
  long k = 0;
  for (long i = 0; i < rows; ++i) {
    for (long jj = 0; jj < rows; ++jj, ++k) {
      m(i, jj) = Complex(data[k][0].get<double>(), data[k][1].get<double>());
    }
  }
  return DenseOperator(std::move(m), std::move(support), d);
}

Matrix random_hermitian(long dim, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(dim, dim);
  for (long i = 0; i < dim; ++i) {
    for (long j = 0; j < dim; ++j) m(i, j) = Complex(gauss(rng), gauss(rng));
  }
  return 0.5 * (m + m.adjoint());
}

Matrix random_unitary(long dim, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(dim, dim);
  for (long i = 0; i < dim; ++i) {
    for (long j = 0; j < dim; ++j) g(i, j) = Complex(gauss(rng), gauss(rng));
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  // fix phases so the distribution is Haar
  for (long j = 0; j < dim; ++j) {
    Complex rjj = r(j, j);
    q.col(j) *= (std::abs(rjj) > 0) ? rjj / std::abs(rjj) : 1.0;
  }
  return q;
}

Matrix random_density(long dim, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(dim, dim);
  for (long i = 0; i < dim; ++i) {
    for (long j = 0; j < dim; ++j) g(i, j) = Complex(gauss(rng), gauss(rng));
  }
  Matrix rho = g * g.adjoint();
  rho /= rho.trace().real();
  return rho;
}

Vector random_pure(long dim, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(dim);
  for (long i = 0; i < dim; ++i) v(i) = Complex(gauss(rng), gauss(rng));
  v.normalize();
  return v;
}

}  // namespace rapidmix
