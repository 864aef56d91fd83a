#include "rapidmix/entropy_dynamics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <future>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>
#include <fmt/format.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "rapidmix/errors.hpp"

namespace rapidmix {

namespace {

using SparseMatrix = Eigen::SparseMatrix<Complex>;

// Hilbert-space cap for the conjugated spectral propagator; beyond it the
// superoperator eigendecomposition is no longer worth its cubic cost.
constexpr long kSpectralDimLimit = 32;

// Hilbert-space cap for the Lanczos-stepped conjugated propagator.
constexpr long kKrylovDimLimit = 128;

// Krylov subspace size and the generator-norm multiple covered per segment.
constexpr int kKrylovSpace = 48;
constexpr double kKrylovStepNorm = 20.0;

int threads_from_env() {
  const char* raw = std::getenv("RAPIDMIX_THREADS");
  if (raw == nullptr) return 1;
  char* end = nullptr;
  long v = std::strtol(raw, &end, 10);
  if (end == raw || v <= 0) return 1;
  return static_cast<int>(std::min<long>(v, 64));
}

template <typename F>
void parallel_for(long count, const F& body) {
  long threads = std::min<long>(threads_from_env(), count);
  if (threads <= 1) {
    for (long i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::future<void>> futs;
  futs.reserve(static_cast<std::size_t>(threads));
  for (long t = 0; t < threads; ++t) {
    futs.push_back(std::async(std::launch::async, [&]() {
      for (long i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
    }));
  }
  for (auto& f : futs) f.get();
}

Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix unflatten(const Vector& v, long n) { return Eigen::Map<const Matrix>(v.data(), n, n); }

Matrix gaussian_matrix(long n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(n, n);
  for (long c = 0; c < n; ++c) {
    for (long r = 0; r < n; ++r) m(r, c) = Complex(g(rng), g(rng));
  }
  return m;
}

SparseMatrix to_sparse(const Matrix& a) {
  std::vector<Eigen::Triplet<Complex>> trip;
  for (long c = 0; c < a.cols(); ++c) {
    for (long r = 0; r < a.rows(); ++r) {
      if (std::abs(a(r, c)) > 1e-14) trip.emplace_back(r, c, a(r, c));
    }
  }
  SparseMatrix sm(a.rows(), a.cols());
  sm.setFromTriplets(trip.begin(), trip.end());
  return sm;
}

// Jump terms of a Lindblad map, stored sparse where the operators are local
// enough to pay off; term sums can spread across threads deterministically.
struct JumpBank {
  struct SparseJump {
    SparseMatrix op, adj;
    double rate = 0.0;
  };
  struct DenseJump {
    Matrix op, adj;
    double rate = 0.0;
  };

  long dim = 0;
  int threads = 1;
  std::vector<SparseJump> sparse;
  std::vector<DenseJump> dense;

  void add(const Matrix& op, double rate) {
    long nnz = 0;
    for (long c = 0; c < op.cols(); ++c) {
      for (long r = 0; r < op.rows(); ++r) {
        if (std::abs(op(r, c)) > 1e-14) ++nnz;
      }
    }
    if (dim >= 32 && nnz * 4 < dim * dim) {
      sparse.push_back({to_sparse(op), to_sparse(Matrix(op.adjoint())), rate});
    } else {
      dense.push_back({op, Matrix(op.adjoint()), rate});
    }
  }

  long size() const { return static_cast<long>(sparse.size() + dense.size()); }

  Matrix term(const Matrix& x, long j) const {
    if (j < static_cast<long>(sparse.size())) {
      const SparseJump& s = sparse[static_cast<std::size_t>(j)];
      Matrix sx = s.op * x;
      return Matrix(s.rate * (sx * s.adj));
    }
    const DenseJump& d = dense[static_cast<std::size_t>(j - sparse.size())];
    return Matrix(d.rate * (d.op * x * d.adj));
  }

  Matrix sum(const Matrix& x) const {
    long total = size();
    if (threads <= 1 || total < 6 || dim < 48) {
      Matrix y = Matrix::Zero(dim, dim);
      for (long j = 0; j < total; ++j) y += term(x, j);
      return y;
    }
    long workers = std::min<long>(threads, total);
    std::vector<Matrix> partial(static_cast<std::size_t>(workers));
    std::vector<std::future<void>> futs;
    for (long w = 0; w < workers; ++w) {
      futs.push_back(std::async(std::launch::async, [&, w]() {
        Matrix acc = Matrix::Zero(dim, dim);
        for (long j = w; j < total; j += workers) acc += term(x, j);
        partial[static_cast<std::size_t>(w)] = std::move(acc);
      }));
    }
    for (auto& f : futs) f.get();
    Matrix y = std::move(partial[0]);
    for (long w = 1; w < workers; ++w) y += partial[static_cast<std::size_t>(w)];
    return y;
  }
};

// Snapshot of a Schroedinger-picture generator tuned for repeated applies.
class FastApply {
 public:
  explicit FastApply(const Superoperator& l) : dim_(l.dim()) {
    if (!l.structured()) {
      fallback_.emplace(l);
      return;
    }
    structured_ = true;
    ham_ = l.hamiltonian();
    has_ham_ = ham_.size() > 0 && ham_.norm() > 1e-12;
    rate_sum_ = Matrix::Zero(dim_, dim_);
    bank_.dim = dim_;
    bank_.threads = threads_from_env();
    for (const auto& [op, rate] : l.jump_list()) {
      rate_sum_ += rate * Matrix(op.adjoint() * op);
      bank_.add(op, rate);
    }
    rate_sum_ = 0.5 * (rate_sum_ + Matrix(rate_sum_.adjoint()));
  }

  long dim() const { return dim_; }
  bool structured() const { return structured_; }

  Matrix operator()(const Matrix& x) const {
    if (!structured_) return fallback_->apply(x);
    Matrix y = bank_.sum(x);
    y.noalias() -= 0.5 * (rate_sum_ * x);
    y.noalias() -= 0.5 * (x * rate_sum_);
    if (has_ham_) {
      y.noalias() -= Complex(0.0, 1.0) * (ham_ * x);
      y.noalias() += Complex(0.0, 1.0) * (x * ham_);
    }
    return y;
  }

 private:
  long dim_ = 0;
  bool structured_ = false;
  bool has_ham_ = false;
  Matrix ham_;
  Matrix rate_sum_;
  JumpBank bank_;
  std::optional<Superoperator> fallback_;
};

// Hermitian conjugation K = T^{-1} L_* T of a dissipative Lindblad map by
// T(x) = sigma^{1/4} x sigma^{1/4}; KMS detailed balance makes K self-adjoint
// in the Hilbert-Schmidt inner product.
class KmsKernel {
 public:
  KmsKernel(const std::vector<std::pair<Matrix, double>>& jumps, const Matrix& rate_sum,
            const Matrix& s, const Matrix& s_inv)
      : dim_(s.rows()) {
    left_ = s_inv * rate_sum * s;
    right_ = left_.adjoint();
    bank_.dim = dim_;
    bank_.threads = threads_from_env();
    for (const auto& [op, rate] : jumps) bank_.add(Matrix(s_inv * op * s), rate);
  }

  Matrix apply(const Matrix& x) const {
    Matrix y = bank_.sum(x);
    y.noalias() -= 0.5 * (left_ * x);
    y.noalias() -= 0.5 * (x * right_);
    return y;
  }

 private:
  long dim_ = 0;
  Matrix left_, right_;
  JumpBank bank_;
};

// Dense matrix form of the conjugated kernel, assembled column by column from
// rank-one images of matrix units.
Matrix build_kms_dense(const std::vector<std::pair<Matrix, double>>& jumps,
                       const Matrix& rate_sum, const Matrix& s, const Matrix& s_inv) {
  long n = s.rows();
  long n2 = n * n;
  std::vector<std::pair<Matrix, double>> conj;
  conj.reserve(jumps.size());
  for (const auto& [op, rate] : jumps) conj.emplace_back(Matrix(s_inv * op * s), rate);
  Matrix left = s_inv * rate_sum * s;
  Matrix right = left.adjoint();
  Matrix k(n2, n2);
  parallel_for(n2, [&](long col) {
    long r = col % n;
    long c = col / n;
    Matrix y = Matrix::Zero(n, n);
    for (const auto& [a, rate] : conj) y.noalias() += rate * (a.col(r) * a.col(c).adjoint());
    y.col(c) -= 0.5 * left.col(r);
    y.row(r) -= 0.5 * right.row(c);
    k.col(col) = Eigen::Map<const Vector>(y.data(), n2);
  });
  return k;
}

// Propagates states under e^{t L_*}, picking the cheapest faithful scheme:
// a conjugated spectral or Lanczos-stepped flow when the dissipative part is
// KMS-symmetric for the reference state, a dense matrix exponential at small
// dimension, and an adaptive Dormand-Prince integrator otherwise.
class Propagator {
 public:
  enum class Kind { spectral, krylov, exponential, integrator };

  Propagator(const Superoperator& l, const QuantumState* sigma, EvolveMode mode)
      : dim_(l.dim()), full_(l) {
    if (mode == EvolveMode::integrate) return;
    if (sigma != nullptr && sigma->dim() == dim_) try_conjugated(l, *sigma, mode);
    if (kind_ != Kind::integrator) return;
    if (mode == EvolveMode::dense) {
      if (!l.dense_available()) {
        throw argument_error("dense propagation needs a dense or structured generator");
      }
      if (dim_ > kDynamicsDimLimit) {
        throw resource_error(fmt::format("dense propagation caps at dimension {}, got {}",
                                         kDynamicsDimLimit, dim_));
      }
      ldense_ = l.dense();
      kind_ = Kind::exponential;
      return;
    }
    if (l.dense_available() && dim_ <= 16) {
      ldense_ = l.dense();
      kind_ = Kind::exponential;
    }
  }

  Kind kind() const { return kind_; }

  Matrix flow(const Matrix& from, double dt, double t_start) const {
    if (dt == 0.0) return from;
    if (!(dt > 0.0)) throw argument_error("propagation time must be nonnegative");
    switch (kind_) {
      case Kind::spectral:
        return flow_spectral(from, dt);
      case Kind::krylov:
        return flow_krylov(from, dt);
      case Kind::exponential: {
        Matrix prop = Matrix(dt * *ldense_).exp();
        return unflatten(Vector(prop * flatten(from)), dim_);
      }
      case Kind::integrator:
        return flow_integrator(from, dt, t_start);
    }
    throw numeric_error("propagator kind is unreachable");
  }

 private:
  void try_conjugated(const Superoperator& l, const QuantumState& sigma, EvolveMode mode) {
    if (dim_ > kKrylovDimLimit) return;
    Spectrum spec = herm_eig(sigma.rho());
    double top = spec.eigenvalues.maxCoeff();
    if (spec.eigenvalues.minCoeff() <= 1e-14 * std::max(1.0, top)) return;
    auto power = [&](double a) {
      RealVector w = spec.eigenvalues.array().pow(a).matrix();
      return Matrix(spec.eigenvectors * w.asDiagonal() * spec.eigenvectors.adjoint());
    };
    Matrix s = power(0.25);
    Matrix s_inv = power(-0.25);

    std::vector<std::pair<Matrix, double>> jumps;
    Matrix rate_sum;
    std::optional<FastApply> dis;
    if (l.structured()) {
      Matrix h = l.hamiltonian();
      bool has_ham = h.size() > 0 && h.norm() > 1e-12;
      if (has_ham) {
        // the flow splits into unitary and dissipative factors only when the
        // two generator parts commute; probe that on random directions
        FastApply dapply(l.dissipative_part());
        Rng rng(2);
        double hn = h.norm();
        for (int probe = 0; probe < 3; ++probe) {
          Matrix x = random_hermitian(dim_, rng);
          Matrix dx = dapply(x);
          Matrix hx = Complex(0.0, -1.0) * Matrix(h * x - x * h);
          Matrix lhs = dapply(hx);
          Matrix rhs = Complex(0.0, -1.0) * Matrix(h * dx - dx * h);
          if ((lhs - rhs).norm() > 1e-8 * (1.0 + hn * x.norm() + dx.norm())) return;
        }
        ham_spec_ = herm_eig(symmetrize(h, 1e-8));
        split_ = true;
        dis = std::move(dapply);
      }
      jumps = l.jump_list();
      rate_sum = Matrix::Zero(dim_, dim_);
      for (const auto& [op, rate] : jumps) rate_sum += rate * Matrix(op.adjoint() * op);
      rate_sum = 0.5 * (rate_sum + Matrix(rate_sum.adjoint()));
      if (!dis) dis.emplace(l);
    } else if (l.dense_available() && dim_ <= kSpectralDimLimit) {
      dis.emplace(l);  // probe the whole map; Hermiticity rejects unitary parts
    } else {
      return;
    }

    if (dim_ <= kSpectralDimLimit) {
      long n2 = dim_ * dim_;
      Matrix k;
      if (l.structured()) {
        k = build_kms_dense(jumps, rate_sum, s, s_inv);
      } else {
        k.resize(n2, n2);
        for (long col = 0; col < n2; ++col) {
          long r = col % dim_;
          long c = col / dim_;
          Matrix e = s.col(r) * s.col(c).adjoint();
          k.col(col) = flatten(Matrix(s_inv * (*dis)(e) * s_inv));
        }
      }
      if ((k - Matrix(k.adjoint())).norm() > 1e-7 * std::max(1.0, k.norm())) {
        split_ = false;
        ham_spec_.reset();
        return;
      }
      Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(0.5 * (k + Matrix(k.adjoint()))));
      if (es.info() != Eigen::Success) {
        split_ = false;
        ham_spec_.reset();
        return;
      }
      k_spec_ = Spectrum{es.eigenvalues(), es.eigenvectors()};
      s_ = std::move(s);
      s_inv_ = std::move(s_inv);
      kind_ = Kind::spectral;
      return;
    }

    if (mode != EvolveMode::automatic || !l.structured()) {
      split_ = false;
      ham_spec_.reset();
      return;
    }
    KmsKernel kernel(jumps, rate_sum, s, s_inv);
    Rng rng(3);
    for (int probe = 0; probe < 3; ++probe) {
      Matrix u = gaussian_matrix(dim_, rng);
      Matrix v = gaussian_matrix(dim_, rng);
      Matrix ku = kernel.apply(u);
      Matrix kv = kernel.apply(v);
      Complex a = (u.adjoint() * kv).trace();
      Complex b = (ku.adjoint() * v).trace();
      double scale = std::max({ku.norm() * v.norm(), kv.norm() * u.norm(), 1e-30});
      if (std::abs(a - b) > 1e-8 * scale) {
        split_ = false;
        ham_spec_.reset();
        return;
      }
    }
    Matrix v = gaussian_matrix(dim_, rng);
    v /= v.norm();
    double est = 0.0;
    for (int it = 0; it < 12; ++it) {
      Matrix w = kernel.apply(v);
      double nm = w.norm();
      est = std::max(est, nm);
      if (nm < 1e-14) break;
      v = w / nm;
    }
    k_norm_ = std::max(est, 1e-10);
    kernel_ = std::move(kernel);
    s_ = std::move(s);
    s_inv_ = std::move(s_inv);
    kind_ = Kind::krylov;
  }

  Matrix wrap_unitary(Matrix x, double dt) const {
    if (!split_) return x;
    const Spectrum& hs = *ham_spec_;
    Vector phase(hs.eigenvalues.size());
    for (long i = 0; i < phase.size(); ++i) {
      phase(i) = std::exp(Complex(0.0, -dt * hs.eigenvalues(i)));
    }
    Matrix u = hs.eigenvectors * phase.asDiagonal() * hs.eigenvectors.adjoint();
    return Matrix(u * x * u.adjoint());
  }

  Matrix flow_spectral(const Matrix& from, double dt) const {
    Vector v = k_spec_->eigenvectors.adjoint() * flatten(Matrix(s_inv_ * from * s_inv_));
    for (long i = 0; i < v.size(); ++i) v(i) *= std::exp(dt * k_spec_->eigenvalues(i));
    Matrix mid = unflatten(Vector(k_spec_->eigenvectors * v), dim_);
    return wrap_unitary(Matrix(s_ * mid * s_), dt);
  }

  Matrix flow_krylov(const Matrix& from, double dt) const {
    Vector x = flatten(Matrix(s_inv_ * from * s_inv_));
    double segment = kKrylovStepNorm / std::max(k_norm_, 1e-10);
    double left = dt;
    while (left > 1e-14 * std::max(1.0, dt)) {
      double h = std::min(left, segment);
      x = krylov_segment(x, h);
      left -= h;
    }
    return wrap_unitary(Matrix(s_ * unflatten(x, dim_) * s_), dt);
  }

  Vector krylov_segment(const Vector& v, double dt) const {
    double beta = v.norm();
    if (beta < 1e-300) return v;
    long n = v.size();
    int m = static_cast<int>(std::min<long>(kKrylovSpace, n));
    std::vector<Vector> q;
    q.reserve(static_cast<std::size_t>(m));
    q.push_back(v / beta);
    std::vector<double> alpha, off;
    for (int j = 0; j < m; ++j) {
      Vector w = flatten(kernel_->apply(unflatten(q[static_cast<std::size_t>(j)], dim_)));
      if (j > 0) w -= off[static_cast<std::size_t>(j - 1)] * q[static_cast<std::size_t>(j - 1)];
      double a = std::real(q[static_cast<std::size_t>(j)].dot(w));
      alpha.push_back(a);
      w -= a * q[static_cast<std::size_t>(j)];
      for (const Vector& u : q) w -= u.dot(w) * u;  // full reorthogonalization
      double b = w.norm();
      if (j + 1 == m || b < 1e-10 * beta) break;
      off.push_back(b);
      q.push_back(w / b);
    }
    int m_eff = static_cast<int>(alpha.size());
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m_eff, m_eff);
    for (int i = 0; i < m_eff; ++i) {
      t(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < m_eff) {
        t(i, i + 1) = off[static_cast<std::size_t>(i)];
        t(i + 1, i) = off[static_cast<std::size_t>(i)];
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    Eigen::VectorXd coeff =
        ((es.eigenvalues().array() * dt).exp() * es.eigenvectors().row(0).transpose().array())
            .matrix();
    Eigen::VectorXd w_small = es.eigenvectors() * coeff;
    Vector out = Vector::Zero(n);
    for (int j = 0; j < m_eff; ++j) out += (beta * w_small(j)) * q[static_cast<std::size_t>(j)];
    return out;
  }

  Matrix flow_integrator(const Matrix& from, double dt, double t_start) const {
    // Dormand-Prince 5(4) with absolute Frobenius error control per step
    const double a21 = 1.0 / 5;
    const double a31 = 3.0 / 40, a32 = 9.0 / 40;
    const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
    const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
    const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
    const double e1 = b1 - 5179.0 / 57600, e3 = b3 - 7571.0 / 16695, e4 = b4 - 393.0 / 640,
                 e5 = b5 + 92097.0 / 339200, e6 = b6 - 187.0 / 2100, e7 = -1.0 / 40;

    Matrix y = from;
    double t = 0.0;
    double h = std::min(dt, 1e-2);
    double tr0 = std::real(from.trace());
    long steps = 0;
    while (t < dt - 1e-14 * std::max(1.0, dt)) {
      if (++steps > 2000000) {
        throw numeric_error(fmt::format(
            "adaptive integrator exceeded its step budget; last good time {:.9g}", t_start + t));
      }
      h = std::min(h, dt - t);
      Matrix k1 = full_(y);
      Matrix k2 = full_(Matrix(y + h * (a21 * k1)));
      Matrix k3 = full_(Matrix(y + h * (a31 * k1 + a32 * k2)));
      Matrix k4 = full_(Matrix(y + h * (a41 * k1 + a42 * k2 + a43 * k3)));
      Matrix k5 = full_(Matrix(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
      Matrix k6 = full_(Matrix(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)));
      Matrix y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      Matrix k7 = full_(y5);
      double err = h * Matrix(e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7).norm();
      if (err <= kOdeLocalTol) {
        t += h;
        y = std::move(y5);
        double drift = std::abs(std::real(y.trace()) - tr0);
        if (drift > kTraceDriftTol) {
          throw numeric_error(fmt::format(
              "integrated state drifted in trace by {:.3e}; last good time {:.9g}", drift,
              t_start + t));
        }
      }
      double grow = err > 0.0 ? 0.9 * std::pow(kOdeLocalTol / err, 0.2) : 5.0;
      h *= std::clamp(grow, 0.2, 5.0);
      if (h < 1e-12 * std::max(1.0, dt)) {
        throw numeric_error(fmt::format(
            "adaptive integrator step collapsed; last good time {:.9g}", t_start + t));
      }
    }
    return y;
  }

  long dim_ = 0;
  Kind kind_ = Kind::integrator;
  FastApply full_;
  Matrix s_, s_inv_;
  bool split_ = false;
  std::optional<Spectrum> ham_spec_;
  std::optional<Spectrum> k_spec_;
  std::optional<KmsKernel> kernel_;
  double k_norm_ = 0.0;
  std::optional<Matrix> ldense_;
};

// Eigenvalues at or below this relative threshold count as zero support.
double support_clip(const RealVector& eigenvalues) {
  double top = eigenvalues.cwiseAbs().maxCoeff();
  return 1e-12 * std::max(1.0, top);
}

// Weight of rho outside the support of the given spectrum's kept modes.
double outside_mass(const Matrix& rho, const Spectrum& tau_spec, double clip) {
  double mass = 0.0;
  for (long j = 0; j < tau_spec.eigenvalues.size(); ++j) {
    if (tau_spec.eigenvalues(j) > clip) continue;
    Vector v = tau_spec.eigenvectors.col(j);
    mass += std::real(v.dot(rho * v));
  }
  return mass;
}

struct EpCore {
  double value = 0.0;
  double rel = 0.0;
  bool floored = false;
};

// Shared core of entropy_production and the ratio optimizer: both quantities
// come from the same floored logarithms so their quotient is reproducible.
EpCore ep_core(const std::function<Matrix(const Matrix&)>& lstar,
               const std::function<Matrix(const Matrix&)>& estar, const Matrix& rho_in) {
  Matrix rho = 0.5 * (rho_in + Matrix(rho_in.adjoint()));
  Matrix tau = estar(rho);
  tau = 0.5 * (tau + Matrix(tau.adjoint()));
  EpCore out;
  Matrix diff = floored_log(rho, &out.floored) - floored_log(tau, &out.floored);
  out.value = -std::real((lstar(rho) * diff).trace());
  out.rel = std::real((rho * diff).trace());
  return out;
}

struct RatioPoint {
  double ratio = infinity();
  double ep = 0.0;
  double d = 0.0;
  bool valid = false;
};

// Budgeted EP/D evaluations over the square-root parameterization rho = XX^dag.
class RatioObjective {
 public:
  RatioObjective(std::function<Matrix(const Matrix&)> lstar,
                 std::function<Matrix(const Matrix&)> estar, long dim, long budget)
      : lstar_(std::move(lstar)), estar_(std::move(estar)), dim_(dim), budget_(budget) {}

  long dim() const { return dim_; }
  long used() const { return used_; }
  bool exhausted() const { return used_ >= budget_; }
  long headroom() const { return budget_ - used_; }

  RatioPoint eval(const Matrix& x, Matrix* rho_out = nullptr) {
    RatioPoint p;
    if (exhausted()) return p;
    ++used_;
    Matrix rho = x * x.adjoint();
    double tr = std::real(rho.trace());
    if (!(tr > 1e-14)) return p;
    rho /= tr;
    EpCore core = ep_core(lstar_, estar_, rho);
    // Below ~1e-8 the ratio is double-precision noise: both EP and D are
    // cancellation-limited near the fixed-point manifold.
    if (!std::isfinite(core.rel) || core.rel < 1e-8) return p;
    double ratio = core.value / core.rel;
    if (!std::isfinite(ratio)) return p;
    p.ratio = ratio;
    p.ep = core.value;
    p.d = core.rel;
    p.valid = true;
    if (rho_out != nullptr) *rho_out = std::move(rho);
    return p;
  }

 private:
  std::function<Matrix(const Matrix&)> lstar_, estar_;
  long dim_ = 0;
  long budget_ = 0;
  long used_ = 0;
};

// Projected gradient descent on the factor X with backtracking line search.
void descend_ratio(RatioObjective& obj, Matrix x, RatioPoint p,
                   const std::function<void(const RatioPoint&, const Matrix&)>& consider) {
  long rows = x.rows();
  long cols = x.cols();
  long params = 2 * rows * cols;
  double step = 0.25;
  int flat = 0;
  for (int iter = 0; iter < 80 && flat < 3; ++iter) {
    if (obj.headroom() < params + 8) return;
    double xn = std::max(x.norm(), 1e-8);
    double h = 1e-6 * xn;
    Matrix grad = Matrix::Zero(rows, cols);
    for (long c = 0; c < cols; ++c) {
      for (long r = 0; r < rows; ++r) {
        Matrix xt = x;
        xt(r, c) += Complex(h, 0.0);
        RatioPoint qr = obj.eval(xt);
        double gr = qr.valid ? (qr.ratio - p.ratio) / h : 0.0;
        xt(r, c) = x(r, c) + Complex(0.0, h);
        RatioPoint qi = obj.eval(xt);
        double gi = qi.valid ? (qi.ratio - p.ratio) / h : 0.0;
        grad(r, c) = Complex(gr, gi);
      }
    }
    double gn = grad.norm();
    if (!(gn > 1e-13)) return;
    double before = p.ratio;
    double s = step * xn / gn;
    bool accepted = false;
    for (int trial = 0; trial < 8 && !obj.exhausted(); ++trial, s *= 0.5) {
      Matrix xt = x - s * grad;
      Matrix rho;
      RatioPoint q = obj.eval(xt, &rho);
      if (q.valid && q.ratio < p.ratio) {
        x = std::move(xt);
        p = q;
        consider(p, rho);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      step *= 0.25;
      ++flat;
      continue;
    }
    step = std::min(0.5, step * 1.4);
    double gain = before - p.ratio;
    flat = gain < 1e-7 * std::max(std::abs(before), 1e-12) ? flat + 1 : 0;
  }
}

struct BestPoint {
  RatioPoint p;
  Matrix rho;
};

MlsiEstimate run_ratio_search(RatioObjective& obj, const std::vector<Matrix>& seeds) {
  MlsiEstimate est;
  std::optional<BestPoint> best;
  auto consider = [&](const RatioPoint& p, const Matrix& rho) {
    if (!p.valid) return;
    if (!best || p.ratio < best->p.ratio) {
      best = BestPoint{p, rho};
      est.trace.push_back(p.ratio);
    }
  };

  std::vector<std::pair<double, std::size_t>> ranked;
  std::vector<RatioPoint> pts(seeds.size());
  for (std::size_t i = 0; i < seeds.size() && !obj.exhausted(); ++i) {
    Matrix rho;
    pts[i] = obj.eval(seeds[i], &rho);
    if (pts[i].valid) {
      ranked.emplace_back(pts[i].ratio, i);
      consider(pts[i], rho);
    }
  }
  if (!best) {
    throw numeric_error(
        "ratio search found no state clear of the fixed-point manifold within its budget");
  }
  std::sort(ranked.begin(), ranked.end());
  std::size_t descents = std::min<std::size_t>(4, ranked.size());
  for (std::size_t k = 0; k < descents && !obj.exhausted(); ++k) {
    std::size_t idx = ranked[k].second;
    descend_ratio(obj, seeds[idx], pts[idx],
                  [&](const RatioPoint& p, const Matrix& rho) { consider(p, rho); });
  }
  est.ratio = best->p.ratio;
  est.minimizer = best->rho;
  est.entropy_production = best->p.ep;
  est.rel_entropy = best->p.d;
  est.samples = obj.used();
  return est;
}

// Kronecker product of column vectors.
Vector kron_vec(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (long i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

std::vector<Matrix> ratio_seeds(long dim, const std::vector<int>& domain, int local_dim,
                                unsigned seed) {
  Rng rng(seed);
  long rank = dim <= 16 ? dim : std::max<long>(1, 256 / dim);
  std::vector<Matrix> seeds;
  for (long i = 0; i < dim; ++i) {
    Matrix x = Matrix::Zero(dim, rank);
    x(i, 0) = 1.0;
    seeds.push_back(std::move(x));
  }
  long prod_dim = 1;
  for (std::size_t s = 0; s < domain.size(); ++s) prod_dim *= local_dim;
  if (domain.size() >= 2 && prod_dim == dim) {
    for (int t = 0; t < 4; ++t) {
      Vector v = Vector::Ones(1);
      for (std::size_t s = 0; s < domain.size(); ++s) v = kron_vec(v, random_pure(local_dim, rng));
      Matrix x = Matrix::Zero(dim, rank);
      x.col(0) = v;
      seeds.push_back(std::move(x));
    }
  }
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 4; ++t) {
    Matrix x(dim, rank);
    for (long c = 0; c < rank; ++c) {
      for (long r = 0; r < dim; ++r) x(r, c) = Complex(g(rng), g(rng));
    }
    seeds.push_back(std::move(x));
  }
  return seeds;
}

// Exponential-family tilts sigma^{1/2} e^{eps f} sigma^{1/2} along slow
// diagonal observables (magnetization, staggered, single site). These are
// full rank and sit near the stationary manifold, where the ratio approaches
// its infimum for gapped reversible generators; low-rank seeds cannot reach
// that regime.
std::vector<Matrix> tilted_seeds(long dim, const std::vector<int>& domain, int local_dim,
                                 const Matrix& sigma) {
  std::vector<Matrix> seeds;
  long n = static_cast<long>(domain.size());
  if (n < 1 || sigma.rows() != dim) return seeds;
  long prod = 1;
  for (long s = 0; s < n; ++s) {
    if (prod > dim) return seeds;
    prod *= local_dim;
  }
  if (prod != dim) return seeds;

  Spectrum spec = herm_eig(symmetrize(sigma, 1e-8));
  Matrix shalf = spec.eigenvectors *
                 spec.eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                 spec.eigenvectors.adjoint();

  auto digit = [&](long idx, long site) {
    long shift = 1;
    for (long s = site + 1; s < n; ++s) shift *= local_dim;
    return (idx / shift) % local_dim;
  };
  auto charge = [&](long k) { return static_cast<double>(local_dim - 1 - 2 * k); };

  std::vector<RealVector> tilts;
  RealVector mag = RealVector::Zero(dim), stag = RealVector::Zero(dim),
             mid = RealVector::Zero(dim);
  for (long i = 0; i < dim; ++i) {
    for (long s = 0; s < n; ++s) {
      double w = charge(digit(i, s)) / static_cast<double>(n);
      mag(i) += w;
      stag(i) += (s % 2 == 0 ? w : -w);
    }
    mid(i) = charge(digit(i, n / 2));
  }
  tilts.push_back(mag);
  tilts.push_back(stag);
  tilts.push_back(mid);

  for (const RealVector& f : tilts) {
    for (double eps : {0.8, -0.8, 0.3}) {
      Matrix x = shalf;
      for (long j = 0; j < dim; ++j) x.col(j) *= std::exp(0.5 * eps * f(j));
      double norm = x.norm();
      if (norm > 1e-14) x /= norm;
      seeds.push_back(std::move(x));
    }
  }
  return seeds;
}

double first_eps_time(const Propagator& prop, const Matrix& rho0, const Matrix& sigma,
                      const std::vector<double>& grid, double eps, double horizon) {
  double d0 = trace_norm(Matrix(rho0 - sigma));
  if (d0 <= eps) return 0.0;
  Matrix cur = rho0;
  double t_cur = 0.0;
  double best = d0;
  Matrix prev;
  double prev_t = 0.0;
  long hit = -1;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    prev = cur;
    prev_t = t_cur;
    cur = prop.flow(cur, grid[k] - t_cur, t_cur);
    t_cur = grid[k];
    double d = trace_norm(Matrix(cur - sigma));
    best = std::min(best, d);
    if (d <= eps) {
      hit = static_cast<long>(k);
      break;
    }
  }
  if (hit < 0) {
    throw numeric_error(fmt::format(
        "state stayed at trace distance {:.3e} > {:.3g} within horizon {:.6g}", best, eps,
        horizon));
  }
  double lo = prev_t;
  double hi = t_cur;
  Matrix lo_state = std::move(prev);
  while (hi - lo > kBisectTimeTol) {
    double mid = 0.5 * (lo + hi);
    Matrix m = prop.flow(lo_state, mid - lo, lo);
    if (trace_norm(Matrix(m - sigma)) <= eps) {
      hi = mid;
    } else {
      lo = mid;
      lo_state = std::move(m);
    }
  }
  return hi;
}

}  // namespace

double relative_entropy(const Matrix& rho, const Matrix& tau) {
  Matrix r = symmetrize(rho, 1e-8);
  Matrix t = symmetrize(tau, 1e-8);
  Spectrum rs = herm_eig(r);
  Spectrum ts = herm_eig(t);
  double rclip = support_clip(rs.eigenvalues);
  double tclip = support_clip(ts.eigenvalues);
  if (rs.eigenvalues.minCoeff() < -1e-9 * std::max(1.0, rs.eigenvalues.maxCoeff())) {
    throw domain_error(
        fmt::format("relative_entropy: first argument has negative eigenvalue "
                    "{:.3e}", rs.eigenvalues.minCoeff()));
  }
  if (ts.eigenvalues.minCoeff() < -1e-9 * std::max(1.0, ts.eigenvalues.maxCoeff())) {
    throw domain_error(
        fmt::format("relative_entropy: second argument has negative eigenvalue "
                    "{:.3e}", ts.eigenvalues.minCoeff()));
  }
  if (outside_mass(r, ts, tclip) > kSupportSentinel) return infinity();

  double entropy_term = 0.0;  // Tr[rho log rho]
  for (long i = 0; i < rs.eigenvalues.size(); ++i) {
    double lam = rs.eigenvalues(i);
    if (lam > rclip) entropy_term += lam * std::log(lam);
  }
  double cross_term = 0.0;  // Tr[rho log tau] on the support of tau
  for (long j = 0; j < ts.eigenvalues.size(); ++j) {
    double mu = ts.eigenvalues(j);
    if (mu <= tclip) continue;
    Vector v = ts.eigenvectors.col(j);
    cross_term += std::log(mu) * std::real(v.dot(r * v));
  }
  return entropy_term - cross_term;
}

double max_relative_entropy(const Matrix& rho, const Matrix& tau) {
  Matrix r = symmetrize(rho, 1e-8);
  Matrix t = symmetrize(tau, 1e-8);
  Spectrum ts = herm_eig(t);
  double tclip = support_clip(ts.eigenvalues);
  if (outside_mass(r, ts, tclip) > kSupportSentinel) return infinity();

  Matrix half = Matrix::Zero(t.rows(), t.cols());  // tau^{-1/2} on support
  for (long j = 0; j < ts.eigenvalues.size(); ++j) {
    double mu = ts.eigenvalues(j);
    if (mu <= tclip) continue;
    Vector v = ts.eigenvectors.col(j);
    half += (1.0 / std::sqrt(mu)) * (v * v.adjoint());
  }
  Matrix sandwich = half * r * half;
  Spectrum ss = herm_eig(symmetrize(sandwich, 1e-7));
  double top = ss.eigenvalues.maxCoeff();
  if (top <= 0.0) return -infinity();
  return std::log(top);
}

Matrix floored_log(const Matrix& m, bool* floored) {
  Spectrum spec = herm_eig(symmetrize(m, 1e-8));
  RealVector lifted(spec.eigenvalues.size());
  bool any = false;
  for (long i = 0; i < spec.eigenvalues.size(); ++i) {
    double lam = spec.eigenvalues(i);
    if (lam < kEntropyFloor) {
      lam = kEntropyFloor;
      any = true;
    }
    lifted(i) = std::log(lam);
  }
  if (floored != nullptr && any) *floored = true;
  return Matrix(spec.eigenvectors * lifted.asDiagonal() * spec.eigenvectors.adjoint());
}

double chain_rule_check(const QuantumState& rho, const ConditionalExpectation& e,
                        const QuantumState& sigma) {
  long dim = e.schrodinger.dim();
  if (rho.dim() != dim || sigma.dim() != dim) {
    throw argument_error(fmt::format("chain rule check: dimensions {} / {} / {} do not match",
                                     rho.dim(), dim, sigma.dim()));
  }
  Matrix fixed = e.schrodinger.apply(sigma.rho());
  double drift = (fixed - sigma.rho()).norm();
  if (drift > 1e-8 * std::max(1.0, sigma.rho().norm())) {
    throw argument_error(fmt::format(
        "conditional expectation moves the reference state by {:.3e}; chain rule undefined",
        drift));
  }
  Matrix mid = e.schrodinger.apply(rho.rho());
  mid = 0.5 * (mid + Matrix(mid.adjoint()));
  double tr = std::real(mid.trace());
  if (tr > 0.0) mid /= tr;
  double total = relative_entropy(rho.rho(), sigma.rho());
  double first = relative_entropy(rho.rho(), mid);
  double second = relative_entropy(mid, sigma.rho());
  if (!std::isfinite(total) || !std::isfinite(first) || !std::isfinite(second)) {
    return infinity();
  }
  return std::abs(total - first - second);
}

EntropyProduction entropy_production(const Superoperator& l, const QuantumState& rho,
                                     const ConditionalExpectation& e) {
  if (l.picture != Picture::schrodinger) {
    throw argument_error("entropy production needs a Schroedinger-picture generator");
  }
  if (rho.dim() != l.dim() || e.schrodinger.dim() != l.dim()) {
    throw argument_error(fmt::format("entropy production: dimensions {} / {} / {} do not match",
                                     rho.dim(), l.dim(), e.schrodinger.dim()));
  }
  FastApply lstar(l);
  const Superoperator& est = e.schrodinger;
  EpCore core = ep_core([&](const Matrix& x) { return lstar(x); },
                        [&](const Matrix& x) { return est.apply(x); }, rho.rho());
  return {core.value, core.rel, core.floored};
}

MlsiEstimate mlsi_upper_estimate(const Superoperator& l, const ConditionalExpectation& e,
                                 long budget, unsigned seed) {
  if (l.picture != Picture::schrodinger) {
    throw argument_error("ratio estimation needs a Schroedinger-picture generator");
  }
  if (e.schrodinger.dim() != l.dim()) {
    throw argument_error("ratio estimation: generator and conditional expectation disagree");
  }
  if (budget < 1) throw argument_error("evaluation budget must be positive");
  if (l.dim() > kDynamicsDimLimit) {
    throw resource_error(fmt::format("ratio estimation caps at dimension {}, got {}",
                                     kDynamicsDimLimit, l.dim()));
  }
  auto lstar = std::make_shared<FastApply>(l);
  Superoperator est_op = e.schrodinger;
  RatioObjective obj([lstar](const Matrix& x) { return (*lstar)(x); },
                     [est_op](const Matrix& x) { return est_op.apply(x); }, l.dim(), budget);
  std::vector<Matrix> seeds = ratio_seeds(l.dim(), l.domain, l.local_dim, seed);
  if (e.sigma.dim() == l.dim()) {
    std::vector<Matrix> tilted = tilted_seeds(l.dim(), l.domain, l.local_dim, e.sigma.rho());
    seeds.insert(seeds.end(), std::make_move_iterator(tilted.begin()),
                 std::make_move_iterator(tilted.end()));
  }
  return run_ratio_search(obj, seeds);
}

MlsiEstimate cmlsi_probe(const Superoperator& l, const ConditionalExpectation& e, int n_ancilla,
                         long budget, unsigned seed, const MlsiEstimate* base) {
  if (l.picture != Picture::schrodinger) {
    throw argument_error("ratio estimation needs a Schroedinger-picture generator");
  }
  if (n_ancilla != 2 && n_ancilla != 4) {
    throw argument_error(fmt::format("ancilla dimension must be 2 or 4, got {}", n_ancilla));
  }
  if (budget < 1) throw argument_error("evaluation budget must be positive");
  if (e.schrodinger.dim() != l.dim()) {
    throw argument_error("ratio estimation: generator and conditional expectation disagree");
  }
  long dim = l.dim();
  long ext = dim * n_ancilla;
  if (ext > kDynamicsDimLimit) {
    throw resource_error(fmt::format("extended dimension {} exceeds the limit {}", ext,
                                     kDynamicsDimLimit));
  }
  auto lstar = std::make_shared<FastApply>(l);
  Superoperator est_op = e.schrodinger;
  auto lift = [dim, n_ancilla](const std::function<Matrix(const Matrix&)>& f, const Matrix& x) {
    long big = dim * n_ancilla;
    Matrix y(big, big);
    for (int a = 0; a < n_ancilla; ++a) {
      for (int b = 0; b < n_ancilla; ++b) {
        y.block(a * dim, b * dim, dim, dim) = f(x.block(a * dim, b * dim, dim, dim));
      }
    }
    return y;
  };
  RatioObjective obj(
      [lstar, lift](const Matrix& x) {
        return lift([&](const Matrix& blk) { return (*lstar)(blk); }, x);
      },
      [est_op, lift](const Matrix& x) {
        return lift([&](const Matrix& blk) { return est_op.apply(blk); }, x);
      },
      ext, budget);
  std::vector<Matrix> seeds = ratio_seeds(ext, {}, l.local_dim, seed);
  if (base != nullptr && base->minimizer.rows() == dim) {
    // lift the base minimizer with a pure ancilla; EP and D are unchanged, so
    // the extended search starts at the base ratio
    Spectrum spec = herm_eig(symmetrize(base->minimizer, 1e-8));
    long rank = ext <= 16 ? ext : std::max<long>(1, 256 / ext);
    Matrix x = Matrix::Zero(ext, rank);
    long take = std::min<long>(rank, dim);
    for (long j = 0; j < take; ++j) {
      long idx = dim - 1 - j;
      double lam = std::max(spec.eigenvalues(idx), 0.0);
      x.col(j).segment(0, dim) = std::sqrt(lam) * spec.eigenvectors.col(idx);
    }
    seeds.push_back(std::move(x));
  }
  return run_ratio_search(obj, seeds);
}

Trajectory evolve(const Superoperator& l, const QuantumState& rho0,
                  const std::vector<double>& times, const EvolveOptions& opts) {
  if (l.picture != Picture::schrodinger) {
    throw argument_error("evolve needs a Schroedinger-picture generator");
  }
  if (times.empty()) throw argument_error("evolve needs at least one time");
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!std::isfinite(times[k]) || times[k] < 0.0) {
      throw argument_error(
          fmt::format("times must be finite and nonnegative, got {:.6g}", times[k]));
    }
    if (k > 0 && times[k] < times[k - 1]) throw argument_error("times must be nondecreasing");
  }
  if (rho0.dim() != l.dim()) {
    throw argument_error(fmt::format("initial state dimension {} does not match generator {}",
                                     rho0.dim(), l.dim()));
  }
  if (opts.sigma && opts.sigma->dim() != l.dim()) {
    throw argument_error("reference state dimension mismatch");
  }
  if (!opts.regions.empty() && !opts.sigma) {
    throw argument_error("local diagnostics need a reference state");
  }
  for (const Region& a : opts.regions) {
    if (a.vertices.empty()) throw argument_error("diagnostic regions must be nonempty");
    if (!contains_all(l.domain, a.vertices)) {
      throw argument_error("diagnostic region leaves the generator domain");
    }
  }

  Propagator prop(l, opts.sigma ? &*opts.sigma : nullptr, opts.mode);

  Trajectory out;
  out.times = times;
  out.regions = opts.regions;
  out.local_entropy.assign(opts.regions.size(), {});

  std::vector<std::vector<int>> traced;
  std::vector<Matrix> sig_marg;
  if (opts.sigma) {
    for (const Region& a : opts.regions) {
      std::vector<int> outside;
      for (int v : l.domain) {
        if (!a.contains(v)) outside.push_back(v);
      }
      DenseOperator marg =
          partial_trace(DenseOperator{opts.sigma->rho(), l.domain, l.local_dim}, outside);
      traced.push_back(std::move(outside));
      sig_marg.push_back(std::move(marg.matrix));
    }
  }

  Matrix cursor = rho0.rho();
  double t_prev = 0.0;
  for (double t : times) {
    cursor = prop.flow(cursor, t - t_prev, t_prev);
    t_prev = t;
    double raw_trace = std::real(cursor.trace());
    if (std::abs(raw_trace - 1.0) > kTraceDriftTol) {
      throw numeric_error(
          fmt::format("trace drifted by {:.3e} at time {:.6g}", std::abs(raw_trace - 1.0), t));
    }
    // record a cleaned copy; the raw cursor keeps propagating
    Spectrum spec = herm_eig(Matrix(0.5 * (cursor + Matrix(cursor.adjoint()))));
    double lam_min = spec.eigenvalues.minCoeff();
    if (lam_min < -1e-6) {
      throw numeric_error(
          fmt::format("state lost positivity (eigenvalue {:.3e}) at time {:.6g}", lam_min, t));
    }
    if (lam_min < -kEntropyFloor) out.floored = true;
    RealVector clip = spec.eigenvalues.cwiseMax(0.0);
    double total = clip.sum();
    if (!(total > 0.0)) throw numeric_error(fmt::format("state collapsed at time {:.6g}", t));
    Matrix clean = spec.eigenvectors * (clip / total).asDiagonal() * spec.eigenvectors.adjoint();
    clean = 0.5 * (clean + Matrix(clean.adjoint()));
    out.states.emplace_back(clean, l.domain, l.local_dim);
    if (opts.sigma) {
      out.trace_distance.push_back(trace_norm(Matrix(clean - opts.sigma->rho())));
      out.rel_entropy.push_back(relative_entropy(clean, opts.sigma->rho()));
      for (std::size_t i = 0; i < opts.regions.size(); ++i) {
        DenseOperator marg =
            partial_trace(DenseOperator{clean, l.domain, l.local_dim}, traced[i]);
        out.local_entropy[i].push_back(relative_entropy(marg.matrix, sig_marg[i]));
      }
    }
  }
  return out;
}

std::string trajectory_csv(const Trajectory& t) {
  std::string out = "t,trace_distance,rel_entropy";
  for (std::size_t i = 0; i < t.regions.size(); ++i) out += fmt::format(",local_{}", i);
  out += "\n";
  double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < t.times.size(); ++k) {
    double td = k < t.trace_distance.size() ? t.trace_distance[k] : nan;
    double re = k < t.rel_entropy.size() ? t.rel_entropy[k] : nan;
    out += fmt::format("{:.12g},{:.12g},{:.12g}", t.times[k], td, re);
    for (const std::vector<double>& curve : t.local_entropy) {
      out += fmt::format(",{:.12g}", k < curve.size() ? curve[k] : nan);
    }
    out += "\n";
  }
  return out;
}

MixingEstimate mixing_time(const Superoperator& l, const QuantumState& sigma, double eps,
                           const MixingOptions& opts) {
  if (l.picture != Picture::schrodinger) {
    throw argument_error("mixing time needs a Schroedinger-picture generator");
  }
  if (sigma.dim() != l.dim()) throw argument_error("reference state dimension mismatch");
  if (!(eps > 0.0 && eps <= 2.0)) {
    throw argument_error(fmt::format("eps must lie in (0, 2], got {:.6g}", eps));
  }
  if (opts.grid_points < 2) throw argument_error("mixing time needs at least two grid points");
  Matrix drift = l.apply(sigma.rho());
  if (drift.norm() > 1e-7 * (1.0 + sigma.rho().norm())) {
    throw argument_error(
        fmt::format("reference state is not stationary (||L(sigma)|| = {:.3e})", drift.norm()));
  }

  MixingEstimate out;
  out.eps = eps;
  if (opts.with_bound) {
    GapResult gr = spectral_gap(l, sigma);
    if (gr.kernel_dim != 1) {
      throw argument_error(fmt::format(
          "mixing time needs a primitive generator; kernel dimension is {}", gr.kernel_dim));
    }
    if (!(gr.gap > 0.0)) throw numeric_error("spectral gap vanished; no mixing bound");
    out.gap = gr.gap;
    double smin = herm_eig(sigma.rho()).eigenvalues.minCoeff();
    out.gap_bound = smin > 0.0 ? std::log(1.0 / (eps * std::sqrt(smin))) / gr.gap : infinity();
  }
  double horizon = opts.horizon;
  if (horizon <= 0.0) {
    if (!(out.gap > 0.0)) {
      throw argument_error("mixing time needs an explicit horizon when the gap is not computed");
    }
    horizon = kHorizonGapMultiple / out.gap;
  }
  out.horizon = horizon;

  std::vector<Matrix> initials = opts.initial_states;
  if (initials.empty()) {
    initials.reserve(static_cast<std::size_t>(l.dim()) + 32);
    for (long i = 0; i < l.dim(); ++i) {
      Matrix m = Matrix::Zero(l.dim(), l.dim());
      m(i, i) = 1.0;
      initials.push_back(std::move(m));
    }
    Rng rng(opts.seed);
    for (int t = 0; t < 32; ++t) {
      Vector v = random_pure(l.dim(), rng);
      initials.push_back(v * v.adjoint());
    }
  }
  for (const Matrix& m : initials) {
    if (m.rows() != l.dim() || m.cols() != l.dim()) {
      throw argument_error("initial state dimension mismatch");
    }
    if ((m - Matrix(m.adjoint())).norm() > 1e-8 * std::max(1.0, m.norm()) ||
        std::abs(std::real(m.trace()) - 1.0) > 1e-8) {
      throw argument_error("initial states must be unit-trace Hermitian matrices");
    }
  }

  Propagator prop(l, &sigma, EvolveMode::automatic);
  long npts = opts.grid_points;
  std::vector<double> grid(static_cast<std::size_t>(npts));
  for (long k = 0; k < npts; ++k) {
    grid[static_cast<std::size_t>(k)] = horizon * static_cast<double>(k) / (npts - 1);
  }

  const Matrix& sig = sigma.rho();
  long count = static_cast<long>(initials.size());
  out.per_state.assign(static_cast<std::size_t>(count), 0.0);
  std::vector<std::string> failures(static_cast<std::size_t>(count));
  parallel_for(count, [&](long i) {
    std::size_t idx = static_cast<std::size_t>(i);
    try {
      out.per_state[idx] = first_eps_time(prop, initials[idx], sig, grid, eps, horizon);
    } catch (const std::exception& ex) {
      failures[idx] = ex.what();
    }
  });
  for (const std::string& f : failures) {
    if (!f.empty()) throw numeric_error(f);
  }
  out.t_mix = *std::max_element(out.per_state.begin(), out.per_state.end());
  return out;
}

LocalMixingCurve local_mixing_curve(const Superoperator& l, const QuantumState& sigma,
                                    const Region& a, const QuantumState& rho0,
                                    const std::vector<double>& times) {
  EvolveOptions opts;
  opts.sigma = sigma;
  opts.regions = {a};
  Trajectory traj = evolve(l, rho0, times, opts);
  LocalMixingCurve out{traj.times, traj.local_entropy.at(0), traj.rel_entropy};
  for (std::size_t k = 0; k < out.times.size(); ++k) {
    if (out.local_curve[k] > out.global_curve[k] + 1e-9) {
      throw numeric_error(fmt::format(
          "local relative entropy {:.6e} exceeds the global value {:.6e} at time {:.6g}",
          out.local_curve[k], out.global_curve[k], out.times[k]));
    }
  }
  return out;
}

DensityCurve entropy_density_decay(const Superoperator& l, const QuantumState& sigma,
                                   const QuantumState& rho0, const std::vector<double>& times) {
  EvolveOptions opts;
  opts.sigma = sigma;
  Trajectory traj = evolve(l, rho0, times, opts);
  DensityCurve out;
  out.times = traj.times;
  out.volume = static_cast<int>(l.domain.size());
  if (out.volume < 1) throw argument_error("generator domain is empty");
  out.initial_value = relative_entropy(rho0.rho(), sigma.rho());
  Matrix log_sigma = floored_log(sigma.rho(), nullptr);
  out.initial_bound = -std::real((rho0.rho() * log_sigma).trace());
  if (std::isfinite(out.initial_value) && out.initial_value > out.initial_bound + 1e-9) {
    throw numeric_error(fmt::format(
        "initial relative entropy {:.6e} exceeds its log-partition bound {:.6e}",
        out.initial_value, out.initial_bound));
  }
  out.density.reserve(traj.rel_entropy.size());
  for (double d : traj.rel_entropy) out.density.push_back(d / out.volume);
  return out;
}

}  // namespace rapidmix
