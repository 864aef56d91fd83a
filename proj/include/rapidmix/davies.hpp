#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rapidmix/hamiltonian.hpp"

namespace rapidmix {

enum class Picture { heisenberg, schrodinger };

// Largest Hilbert-space dimension for which dense superoperator matrices may
// be materialized.
inline constexpr long kSuperopDenseLimit = 128;

// Linear map on operators over a site register. Structured (Lindblad) maps
// carry their Hamiltonian and jump pieces; others carry a dense matrix on
// column-vectorized operators or a bare apply callable.
class Superoperator {
 public:
  std::vector<int> domain;
  int local_dim = 2;
  Picture picture = Picture::heisenberg;

  static Superoperator lindblad(std::vector<int> domain, int local_dim, Picture pic, Matrix h,
                                std::vector<std::pair<Matrix, double>> jumps);
  static Superoperator from_dense(std::vector<int> domain, int local_dim, Picture pic,
                                  Matrix dense);
  static Superoperator from_apply(std::vector<int> domain, int local_dim, Picture pic,
                                  std::function<Matrix(const Matrix&)> fn);

  long dim() const { return dim_; }
  Matrix apply(const Matrix& x) const;
  bool dense_available() const;
  Matrix dense() const;  // assembles on demand for structured maps

  Superoperator flipped() const;            // same map, adjoint picture
  bool structured() const { return structured_; }
  Superoperator dissipative_part() const;   // structured only
  Superoperator hamiltonian_part() const;   // structured only
  const Matrix& hamiltonian() const { return ham_; }
  const std::vector<std::pair<Matrix, double>>& jump_list() const { return jumps_; }

 private:
  long dim_ = 0;
  bool structured_ = false;
  Matrix ham_;                                   // zero matrix when absent
  std::vector<std::pair<Matrix, double>> jumps_; // (S, rate)
  Matrix rate_sum_;                              // sum rate * S^dag S
  std::optional<Matrix> dense_;
  std::function<Matrix(const Matrix&)> apply_;
};

// One decomposed jump operator of a Davies generator.
struct Jump {
  int site = 0;
  int coupling = 0;
  double omega = 0.0;
  double rate = 0.0;
  DenseOperator op;  // may live on a sub-ball of the domain (commuting models)
};

struct JumpSet {
  std::vector<Jump> jumps;
};

// Conditional expectation as a Heisenberg/Schroedinger pair with its invariant
// state. fixed_basis is KMS-orthonormal when present (small systems only).
struct ConditionalExpectation {
  Superoperator heisenberg;
  Superoperator schrodinger;
  std::vector<Matrix> fixed_basis;
  QuantumState sigma;
};

// S split along energy differences of h: pieces (omega, S(omega)) with
// S(omega) = sum over eigenpairs E' - E = omega of P_E S P_E'. Frequencies
// within tol are merged transitively (tol < 0 picks 1e-9 * ||h||).
std::vector<std::pair<double, Matrix>> bohr_decompose(const Matrix& h, const Matrix& s,
                                                      double tol = -1.0);

enum class ChiKind { glauber, metropolis, exp_half };

// Transition-rate function satisfying chi(-w) = e^{-beta w} chi(w).
struct ChiFunction {
  ChiKind kind = ChiKind::glauber;
  double beta = 0.0;
  double operator()(double omega) const;
};

ChiFunction chi_function(ChiKind kind, double beta);
ChiFunction chi_function(const std::string& kind, double beta);

// Hermitian single-site couplings: X, Y, Z for qubits, shift/clock Hermitian
// parts for larger local dimensions.
std::vector<Matrix> default_couplings(int local_dim);

struct DaviesOptions {
  std::vector<int> jump_sites;      // empty: every site of the region
  std::optional<Region> bohr_region;  // region whose Hamiltonian drives the split
  std::vector<Matrix> couplings;    // empty: default_couplings(d)
  bool include_hamiltonian = true;
  bool apply_only = false;          // permit domains beyond the dense cap
};

struct DaviesGenerator {
  Superoperator heisenberg;
  Superoperator schrodinger;
  JumpSet jumps;
};

DaviesGenerator davies_generator(const GibbsEnsemble& e, const Region& region,
                                 const ChiFunction& chi, const DaviesOptions& opts = {});

// Max deviation from GNS detailed balance over random probes: symmetric for
// the dissipative part, antisymmetric for the Hamiltonian part.
double detailed_balance_residual(const Superoperator& l, const QuantumState& sigma,
                                 int probes = 20, unsigned long seed = 0);

struct GapResult {
  double gap = 0.0;
  int kernel_dim = 0;
};

// Smallest nonzero eigenvalue of the KMS-conjugated dissipative generator.
// Dense eigensolve up to 6 qubits, deflated Lanczos beyond.
GapResult spectral_gap(const Superoperator& l, const QuantumState& sigma);

// KMS-orthogonal projection onto ker(L), packaged as a conditional
// expectation with all of its structure.
ConditionalExpectation fixed_point_projection(const Superoperator& l, const QuantumState& sigma);

// CE built directly from a spanning set of its fixed-point space.
ConditionalExpectation conditional_expectation_from_basis(const std::vector<Matrix>& span,
                                                          const QuantumState& sigma,
                                                          std::vector<int> domain,
                                                          int local_dim);

// Choi matrix of the map (dense route; small systems).
Matrix choi_matrix(const Superoperator& s);

// Residuals of the defining conditional-expectation properties.
struct CeCheck {
  double idempotence = 0.0;
  double unitality = 0.0;
  double state_preservation = 0.0;
  double choi_min_eig = 0.0;
  double modular_commutation = 0.0;
  double cross_adjoint = 0.0;  // pictures are adjoints of each other
};

CeCheck check_conditional_expectation(const ConditionalExpectation& ce, Rng& rng);

// Extremal Hermitian eigenvalue by Lanczos with full reorthogonalization and
// deflation; apply acts on vectors of length n.
double lanczos_largest(const std::function<Vector(const Vector&)>& apply, long n,
                       const std::vector<Vector>& deflate, Vector* eigvec = nullptr,
                       double tol = 1e-10, int max_iter = 600);

}  // namespace rapidmix
