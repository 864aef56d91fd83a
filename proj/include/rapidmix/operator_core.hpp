#pragma once

#include <complex>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rapidmix/errors.hpp"

namespace rapidmix {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Largest dense Hilbert-space dimension we will allocate (12 qubits).
inline constexpr long kDenseDimLimit = 4096;

// Relative threshold below which an eigenvalue counts as zero (generalized
// inverse convention).
inline constexpr double kEigClip = 1e-14;

inline double infinity() { return std::numeric_limits<double>::infinity(); }

// d^n without overflow; enforces the dense limit.
long dense_dim(int local_dim, std::size_t num_sites);

// An operator on an ordered list of sites, each with local dimension d.
// Site 0 of the support is the most significant tensor factor.
struct DenseOperator {
  Matrix matrix;
  std::vector<int> support;
  int local_dim = 2;

  DenseOperator() = default;
  DenseOperator(Matrix m, std::vector<int> support_sites, int d);

  long dim() const { return matrix.rows(); }
  int num_sites() const { return static_cast<int>(support.size()); }
};

// A density operator; the constructor validates Hermiticity, positivity and
// unit trace.
struct QuantumState {
  DenseOperator op;

  explicit QuantumState(DenseOperator payload);
  QuantumState(Matrix rho, std::vector<int> support_sites, int d);

  const Matrix& rho() const { return op.matrix; }
  long dim() const { return op.matrix.rows(); }
};

// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
struct Spectrum {
  RealVector eigenvalues;
  Matrix eigenvectors;
};

// ---- support bookkeeping ------------------------------------------------

bool is_sorted_strict(const std::vector<int>& sites);
bool contains_all(const std::vector<int>& haystack, const std::vector<int>& needles);
std::vector<int> support_union(const std::vector<int>& a, const std::vector<int>& b);
std::vector<int> support_difference(const std::vector<int>& a, const std::vector<int>& b);
std::vector<int> support_intersection(const std::vector<int>& a, const std::vector<int>& b);

// ---- tensor plumbing ----------------------------------------------------

// Tensor with identity on full_support \ op.support, respecting site order.
DenseOperator embed(const DenseOperator& op, const std::vector<int>& full_support);

// Trace out traced_sites; the result lives on the remaining sites.
DenseOperator partial_trace(const DenseOperator& op, const std::vector<int>& traced_sites);

Matrix kron(const Matrix& a, const Matrix& b);

// ---- spectra and matrix functions ---------------------------------------

// (M + M†)/2 if the asymmetry is below tol (relative Frobenius), else throws.
Matrix symmetrize(const Matrix& m, double tol = 1e-10);

Spectrum herm_eig(const Matrix& m);
Spectrum herm_eig(const DenseOperator& op);

Matrix mat_exp(const Matrix& h);
Matrix mat_log(const Matrix& h);              // singular input -> domain error
Matrix mat_sqrt(const Matrix& h);             // negative eigenvalue -> domain error
Matrix mat_pow(const Matrix& h, double a);    // a<0 inverts on the support only
Matrix mat_ginv(const Matrix& h);             // generalized inverse

// ---- norms and inner products -------------------------------------------

double op_norm(const Matrix& m);
double trace_norm(const Matrix& m);
double schatten_norm(const Matrix& m, double p);

// ||X||_{p,sigma} = Tr[|sigma^{1/2p} X sigma^{1/2p}|^p]^{1/p}; p = inf gives
// the plain operator norm. sigma must be full rank.
double weighted_norm(const Matrix& x, const Matrix& sigma, double p);

Complex kms_inner(const Matrix& x, const Matrix& y, const Matrix& sigma);
Complex gns_inner(const Matrix& x, const Matrix& y, const Matrix& sigma);

// sigma^{is} X sigma^{-is}
Matrix modular_conjugate(const Matrix& x, const Matrix& sigma, double s);

// ---- serialization (golden tests) ---------------------------------------

nlohmann::json operator_to_json(const DenseOperator& op);
DenseOperator operator_from_json(const nlohmann::json& j);

// ---- randomness ---------------------------------------------------------

Matrix random_hermitian(long dim, Rng& rng);
Matrix random_unitary(long dim, Rng& rng);
Matrix random_density(long dim, Rng& rng);
Vector random_pure(long dim, Rng& rng);

}  // namespace rapidmix
