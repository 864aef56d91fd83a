#include "rapidmix/davies.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

namespace rapidmix {

namespace {

Vector to_vec(const Matrix& x) {
  return Eigen::Map<const Vector>(x.data(), x.size());
}

Matrix to_mat(const Vector& v, long n) {
  return Eigen::Map<const Matrix>(v.data(), n, n);
}

Picture flip_picture(Picture p) {
  return p == Picture::heisenberg ? Picture::schrodinger : Picture::heisenberg;
}

// acc += coef * kron(a, b) without materializing the Kronecker product.
void accumulate_kron(Matrix& acc, const Matrix& a, const Matrix& b, Complex coef) {
  long n = b.rows();
  for (long j = 0; j < a.cols(); ++j) {
    for (long i = 0; i < a.rows(); ++i) {
      Complex c = coef * a(i, j);
      if (c == Complex(0.0, 0.0)) continue;
      acc.block(i * n, j * n, n, n) += c * b;
    }
  }
}

// Grouping of the energy differences of an eigenbasis-transformed operator.
std::vector<std::pair<double, Matrix>> bohr_split(const Spectrum& spec, const Matrix& s,
                                                  double tol) {
  long n = spec.eigenvalues.size();
  if (s.rows() != n || s.cols() != n) {
    throw argument_error(fmt::format("bohr split needs matching dims, got {}x{} vs {}",
                                     s.rows(), s.cols(), n));
  }
  if (tol < 0.0) {
    tol = 1e-9 * std::max(1.0, spec.eigenvalues.cwiseAbs().maxCoeff());
  }
  Matrix st = spec.eigenvectors.adjoint() * s * spec.eigenvectors;
  double drop = 1e-14 * std::max(1.0, st.norm());

  struct EntryRef {
    double delta;
    long i, j;
  };
  std::vector<EntryRef> entries;
  entries.reserve(64);
  for (long j = 0; j < n; ++j) {
    for (long i = 0; i < n; ++i) {
      if (std::abs(st(i, j)) <= drop) continue;
      entries.push_back({spec.eigenvalues(j) - spec.eigenvalues(i), i, j});
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const EntryRef& a, const EntryRef& b) { return a.delta < b.delta; });

  std::vector<std::pair<double, Matrix>> out;
  std::size_t k = 0;
  while (k < entries.size()) {
    // transitive merge: extend the cluster while consecutive gaps stay small
    std::size_t end = k + 1;
    while (end < entries.size() && entries[end].delta - entries[end - 1].delta <= tol) ++end;
    double lo = entries[k].delta, hi = entries[end - 1].delta;
    if (hi - lo > 100.0 * tol && tol > 0.0) {
      fmt::print(stderr,
                 "warning: merged frequency cluster is wide ([{:.3e}, {:.3e}], tol {:.1e})\n",
                 lo, hi, tol);
    }
    double omega = 0.0;
    for (std::size_t t = k; t < end; ++t) omega += entries[t].delta;
    omega /= static_cast<double>(end - k);
    Matrix piece = Matrix::Zero(n, n);
    for (std::size_t t = k; t < end; ++t) piece(entries[t].i, entries[t].j) = st(entries[t].i, entries[t].j);
    out.emplace_back(omega, spec.eigenvectors * piece * spec.eigenvectors.adjoint());
    k = end;
  }
  return out;
}

Matrix zero_like(long n) { return Matrix::Zero(n, n); }

// Tr[a^dag b] in O(n^2)
Complex hs_inner(const Matrix& a, const Matrix& b) {
  return a.conjugate().cwiseProduct(b).sum();
}

}  // namespace

// ---- Superoperator -------------------------------------------------------

Superoperator Superoperator::lindblad(std::vector<int> domain, int local_dim, Picture pic,
                                      Matrix h, std::vector<std::pair<Matrix, double>> jumps) {
  Superoperator s;
  s.domain = std::move(domain);
  s.local_dim = local_dim;
  s.picture = pic;
  s.dim_ = dense_dim(local_dim, s.domain.size());
  if (h.size() == 0) h = zero_like(s.dim_);
  if (h.rows() != s.dim_ || h.cols() != s.dim_) {
    throw argument_error(fmt::format("hamiltonian is {}x{}, domain dim is {}", h.rows(),
                                     h.cols(), s.dim_));
  }
  if ((h - h.adjoint()).norm() > 1e-8 * (h.norm() + 1.0)) {
    throw argument_error("lindblad hamiltonian must be Hermitian");
  }
  s.rate_sum_ = zero_like(s.dim_);
  for (auto& [op, rate] : jumps) {
    if (op.rows() != s.dim_ || op.cols() != s.dim_) {
      throw argument_error("jump operator dimension mismatch");
    }
    if (rate < 0.0) throw argument_error(fmt::format("negative jump rate {}", rate));
    s.rate_sum_ += rate * (op.adjoint() * op);
  }
  s.ham_ = std::move(h);
  s.jumps_ = std::move(jumps);
  s.structured_ = true;
  return s;
}

Superoperator Superoperator::from_dense(std::vector<int> domain, int local_dim, Picture pic,
                                        Matrix dense) {
  Superoperator s;
  s.domain = std::move(domain);
  s.local_dim = local_dim;
  s.picture = pic;
  s.dim_ = dense_dim(local_dim, s.domain.size());
  long n2 = s.dim_ * s.dim_;
  if (dense.rows() != n2 || dense.cols() != n2) {
    throw argument_error(fmt::format("dense superoperator is {}x{}, expected {}x{}",
                                     dense.rows(), dense.cols(), n2, n2));
  }
  s.dense_ = std::move(dense);
  return s;
}

Superoperator Superoperator::from_apply(std::vector<int> domain, int local_dim, Picture pic,
                                        std::function<Matrix(const Matrix&)> fn) {
  Superoperator s;
  s.domain = std::move(domain);
  s.local_dim = local_dim;
  s.picture = pic;
  s.dim_ = dense_dim(local_dim, s.domain.size());
  if (!fn) throw argument_error("apply callable is empty");
  s.apply_ = std::move(fn);
  return s;
}

Matrix Superoperator::apply(const Matrix& x) const {
  if (x.rows() != dim_ || x.cols() != dim_) {
    throw argument_error(fmt::format("operand is {}x{}, superoperator domain dim is {}",
                                     x.rows(), x.cols(), dim_));
  }
  if (structured_) {
    Matrix y = Matrix::Zero(dim_, dim_);
    const Complex iu(0.0, 1.0);
    if (picture == Picture::heisenberg) {
      if (ham_.norm() > 0.0) y += iu * (ham_ * x - x * ham_);
      for (const auto& [s, rate] : jumps_) {
        if (rate == 0.0) continue;
        y.noalias() += rate * (s.adjoint() * x * s);
      }
    } else {
      if (ham_.norm() > 0.0) y -= iu * (ham_ * x - x * ham_);
      for (const auto& [s, rate] : jumps_) {
        if (rate == 0.0) continue;
        y.noalias() += rate * (s * x * s.adjoint());
      }
    }
    y -= 0.5 * (rate_sum_ * x + x * rate_sum_);
    return y;
  }
  if (dense_) return to_mat(*dense_ * to_vec(x), dim_);
  return apply_(x);
}

bool Superoperator::dense_available() const {
  return dense_.has_value() || (structured_ && dim_ <= kSuperopDenseLimit);
}

Matrix Superoperator::dense() const {
  if (dense_) return *dense_;
  if (!structured_) throw argument_error("superoperator has no dense form");
  if (dim_ > kSuperopDenseLimit) {
    throw resource_error(fmt::format("dense superoperator needs domain dim <= {}, got {}",
                                     kSuperopDenseLimit, dim_));
  }
  long n2 = dim_ * dim_;
  Matrix acc = Matrix::Zero(n2, n2);
  Matrix id = Matrix::Identity(dim_, dim_);
  const Complex iu(0.0, 1.0);
  if (picture == Picture::heisenberg) {
    accumulate_kron(acc, id, ham_, iu);
    accumulate_kron(acc, ham_.transpose(), id, -iu);
    for (const auto& [s, rate] : jumps_) {
      accumulate_kron(acc, s.transpose(), s.adjoint(), Complex(rate, 0.0));
    }
  } else {
    accumulate_kron(acc, id, ham_, -iu);
    accumulate_kron(acc, ham_.transpose(), id, iu);
    for (const auto& [s, rate] : jumps_) {
      accumulate_kron(acc, s.conjugate(), s, Complex(rate, 0.0));
    }
  }
  accumulate_kron(acc, id, rate_sum_, Complex(-0.5, 0.0));
  accumulate_kron(acc, rate_sum_.transpose(), id, Complex(-0.5, 0.0));
  return acc;
}

Superoperator Superoperator::flipped() const {
  if (structured_) {
    Superoperator s = *this;
    s.picture = flip_picture(picture);
    return s;
  }
  if (dense_) {
    return from_dense(domain, local_dim, flip_picture(picture), dense_->adjoint());
  }
  throw argument_error("cannot flip the picture of a bare apply-callable");
}

Superoperator Superoperator::dissipative_part() const {
  if (!structured_) throw argument_error("dissipative part needs a structured generator");
  Superoperator s = *this;
  s.ham_ = zero_like(dim_);
  return s;
}

Superoperator Superoperator::hamiltonian_part() const {
  if (!structured_) throw argument_error("hamiltonian part needs a structured generator");
  Superoperator s = *this;
  s.jumps_.clear();
  s.rate_sum_ = zero_like(dim_);
  return s;
}

// ---- frequency split and rates ------------------------------------------

std::vector<std::pair<double, Matrix>> bohr_decompose(const Matrix& h, const Matrix& s,
                                                      double tol) {
  return bohr_split(herm_eig(h), s, tol);
}

double ChiFunction::operator()(double omega) const {
  double bw = beta * omega;
  switch (kind) {
    case ChiKind::glauber:
      return 1.0 / (1.0 + std::exp(-bw));
    case ChiKind::metropolis:
      return std::min(1.0, std::exp(bw));
    case ChiKind::exp_half:
      return std::exp(0.5 * bw);
  }
  throw argument_error("unreachable chi kind");
}

ChiFunction chi_function(ChiKind kind, double beta) {
  if (beta < 0.0) throw argument_error(fmt::format("negative inverse temperature {}", beta));
  return ChiFunction{kind, beta};
}

ChiFunction chi_function(const std::string& kind, double beta) {
  if (kind == "glauber") return chi_function(ChiKind::glauber, beta);
  if (kind == "metropolis") return chi_function(ChiKind::metropolis, beta);
  if (kind == "exp_half") return chi_function(ChiKind::exp_half, beta);
  throw config_error(fmt::format("unknown rate function '{}'", kind));
}

std::vector<Matrix> default_couplings(int local_dim) {
  if (local_dim < 2) throw argument_error("couplings need local dim >= 2");
  if (local_dim == 2) {
    Matrix x(2, 2), y(2, 2), z(2, 2);
    x << 0, 1, 1, 0;
    y << 0, Complex(0, -1), Complex(0, 1), 0;
    z << 1, 0, 0, -1;
    return {x, y, z};
  }
  long d = local_dim;
  Matrix u = Matrix::Zero(d, d), v = Matrix::Zero(d, d);
  for (long k = 0; k < d; ++k) {
    u((k + 1) % d, k) = 1.0;
    v(k, k) = std::exp(Complex(0.0, 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(d)));
  }
  const Complex iu(0.0, 1.0);
  return {u + u.adjoint(), iu * (u - u.adjoint()), v + v.adjoint(), iu * (v - v.adjoint())};
}

// ---- Davies construction -------------------------------------------------

namespace {

// shared payload for apply-only generators on large domains
struct LocalLindbladData {
  std::vector<int> domain;
  int local_dim = 2;
  Matrix h;         // embedded, zero when the commutator term is off
  Matrix rate_sum;  // embedded sum of rate * S^dag S
  std::vector<std::pair<DenseOperator, double>> jumps;  // local supports
};

Matrix local_apply(const LocalLindbladData& d, const Matrix& x, Picture pic) {
  long n = x.rows();
  Matrix y = Matrix::Zero(n, n);
  const Complex iu(0.0, 1.0);
  double sgn = pic == Picture::heisenberg ? 1.0 : -1.0;
  if (d.h.norm() > 0.0) y += sgn * iu * (d.h * x - x * d.h);
  for (const auto& [op, rate] : d.jumps) {
    Matrix s = embed(op, d.domain).matrix;
    if (pic == Picture::heisenberg) {
      y.noalias() += rate * (s.adjoint() * x * s);
    } else {
      y.noalias() += rate * (s * x * s.adjoint());
    }
  }
  y -= 0.5 * (d.rate_sum * x + x * d.rate_sum);
  return y;
}

}  // namespace

DaviesGenerator davies_generator(const GibbsEnsemble& e, const Region& region,
                                 const ChiFunction& chi, const DaviesOptions& opts) {
  const Potential& p = e.potential();
  const SpinGraph& g = p.graph;
  int d = g.local_dim;
  if (region.empty()) throw argument_error("davies generator needs a nonempty region");
  const std::vector<int>& domain = region.vertices;
  long dim = dense_dim(d, domain.size());

  bool global_split = opts.bohr_region.has_value() || !p.commuting;
  if (dim > kSuperopDenseLimit && !opts.apply_only) {
    throw resource_error(fmt::format(
        "domain dim {} exceeds the dense superoperator limit {}; request apply-only mode", dim,
        kSuperopDenseLimit));
  }
  if (dim > kSuperopDenseLimit && global_split) {
    throw resource_error(
        "apply-only davies generators need a commuting potential (local frequency split)");
  }

  std::vector<Matrix> couplings = opts.couplings.empty() ? default_couplings(d) : opts.couplings;
  for (const Matrix& c : couplings) {
    if (c.rows() != d || c.cols() != d) {
      throw argument_error(fmt::format("coupling must be {}x{}, got {}x{}", d, d, c.rows(),
                                       c.cols()));
    }
    if ((c - c.adjoint()).norm() > 1e-12 * (c.norm() + 1.0)) {
      throw argument_error("couplings must be Hermitian");
    }
  }
  std::vector<int> sites = opts.jump_sites.empty() ? domain : opts.jump_sites;
  if (!contains_all(domain, sites)) {
    throw argument_error("jump sites must lie inside the region");
  }

  DenseOperator h_domain = hamiltonian_on(p, region);
  JumpSet js;

  if (global_split) {
    Region bohr = opts.bohr_region.value_or(region);
    if (!contains_all(domain, bohr.vertices)) {
      throw argument_error("frequency-split region must lie inside the generator region");
    }
    Spectrum spec = herm_eig(embed(hamiltonian_on(p, bohr), domain).matrix);
    for (int x : sites) {
      for (std::size_t a = 0; a < couplings.size(); ++a) {
        Matrix s_full = embed(DenseOperator(couplings[a], {x}, d), domain).matrix;
        double s_scale = s_full.norm();
        for (auto& [omega, piece] : bohr_split(spec, s_full, -1.0)) {
          if (piece.norm() < 1e-12 * s_scale) continue;
          js.jumps.push_back(
              {x, static_cast<int>(a), omega, chi(omega), DenseOperator(piece, domain, d)});
        }
      }
    }
  } else {
    for (int x : sites) {
      Region b1 = closure(g, Region(g, {x}), 2);
      Region ball = region_intersection(closure(g, b1, 2), region);
      Spectrum spec = herm_eig(hamiltonian_on(p, ball).matrix);
      for (std::size_t a = 0; a < couplings.size(); ++a) {
        Matrix s_ball = embed(DenseOperator(couplings[a], {x}, d), ball.vertices).matrix;
        double s_scale = s_ball.norm();
        for (auto& [omega, piece] : bohr_split(spec, s_ball, -1.0)) {
          if (piece.norm() < 1e-12 * s_scale) continue;
          js.jumps.push_back({x, static_cast<int>(a), omega, chi(omega),
                              DenseOperator(piece, ball.vertices, d)});
        }
      }
    }
  }
  if (js.jumps.size() > 20000) {
    throw resource_error(fmt::format("frequency split produced {} jump terms", js.jumps.size()));
  }

  DaviesGenerator out{Superoperator{}, Superoperator{}, std::move(js)};
  if (dim <= kSuperopDenseLimit) {
    std::vector<std::pair<Matrix, double>> jumps;
    jumps.reserve(out.jumps.jumps.size());
    for (const Jump& j : out.jumps.jumps) {
      jumps.emplace_back(embed(j.op, domain).matrix, j.rate);
    }
    Matrix hmat = opts.include_hamiltonian ? h_domain.matrix : zero_like(dim);
    out.heisenberg = Superoperator::lindblad(domain, d, Picture::heisenberg, hmat, jumps);
    out.schrodinger = Superoperator::lindblad(domain, d, Picture::schrodinger, hmat,
                                              std::move(jumps));
  } else {
    auto data = std::make_shared<LocalLindbladData>();
    data->domain = domain;
    data->local_dim = d;
    data->h = opts.include_hamiltonian ? h_domain.matrix : zero_like(dim);
    data->rate_sum = zero_like(dim);
    for (const Jump& j : out.jumps.jumps) {
      data->jumps.emplace_back(j.op, j.rate);
      Matrix local = j.op.matrix.adjoint() * j.op.matrix;
      data->rate_sum += j.rate * embed(DenseOperator(local, j.op.support, d), domain).matrix;
    }
    out.heisenberg = Superoperator::from_apply(domain, d, Picture::heisenberg,
                                               [data](const Matrix& x) {
                                                 return local_apply(*data, x, Picture::heisenberg);
                                               });
    out.schrodinger = Superoperator::from_apply(domain, d, Picture::schrodinger,
                                                [data](const Matrix& x) {
                                                  return local_apply(*data, x,
                                                                     Picture::schrodinger);
                                                });
  }
  return out;
}

// ---- detailed balance ----------------------------------------------------

double detailed_balance_residual(const Superoperator& l, const QuantumState& sigma, int probes,
                                 unsigned long seed) {
  if (!l.structured()) {
    throw argument_error("detailed balance residual needs a structured generator");
  }
  Superoperator heis = l.picture == Picture::heisenberg ? l : l.flipped();
  Superoperator dis = heis.dissipative_part();
  Superoperator ham = heis.hamiltonian_part();
  const Matrix& rho = sigma.rho();
  if (rho.rows() != l.dim()) throw argument_error("state dimension mismatch");

  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < probes; ++k) {
    Matrix x = random_hermitian(l.dim(), rng);
    Matrix y = random_hermitian(l.dim(), rng);
    x /= x.norm();
    y /= y.norm();
    Complex sym = gns_inner(x, dis.apply(y), rho) - gns_inner(dis.apply(x), y, rho);
    Complex anti = gns_inner(x, ham.apply(y), rho) + gns_inner(ham.apply(x), y, rho);
    worst = std::max({worst, std::abs(sym), std::abs(anti)});
  }
  return worst;
}

// ---- weighted conjugation, gap, fixed points -----------------------------

namespace {

struct SigmaPowers {
  Matrix quarter;      // sigma^{1/4}
  Matrix quarter_inv;  // sigma^{-1/4}
  Matrix half;         // sigma^{1/2}
};

SigmaPowers sigma_powers(const QuantumState& sigma) {
  Spectrum spec = herm_eig(sigma.rho());
  double top = spec.eigenvalues.maxCoeff();
  if (spec.eigenvalues.minCoeff() < 1e-12 * top) {
    throw domain_error("state is numerically rank-deficient; weighted conjugation undefined");
  }
  auto power = [&](double a) {
    RealVector w = spec.eigenvalues.array().pow(a).matrix();
    return Matrix(spec.eigenvectors * w.asDiagonal() * spec.eigenvectors.adjoint());
  };
  return {power(0.25), power(-0.25), power(0.5)};
}

// Heisenberg dissipative part of l, flipping or trusting the caller as needed.
Superoperator dissipative_heisenberg(const Superoperator& l) {
  if (l.structured()) {
    Superoperator dis = l.dissipative_part();
    return dis.picture == Picture::heisenberg ? dis : dis.flipped();
  }
  if (l.picture == Picture::heisenberg) return l;
  return l.flipped();  // throws for bare apply-callables
}

// Dense Hermitian form of the weighted conjugation of a dissipative generator.
Matrix weighted_dense(const Superoperator& dis, const SigmaPowers& sp) {
  long n = dis.dim();
  long n2 = n * n;
  Matrix k;
  if (dis.structured()) {
    k = Matrix::Zero(n2, n2);
    Matrix id = Matrix::Identity(n, n);
    Matrix m1 = Matrix::Zero(n, n);
    for (const auto& [s, rate] : dis.jump_list()) {
      Matrix a = sp.quarter * s.adjoint() * sp.quarter_inv;
      Matrix b = sp.quarter_inv * s * sp.quarter;
      accumulate_kron(k, b.transpose(), a, Complex(rate, 0.0));
      m1 += rate * (s.adjoint() * s);
    }
    accumulate_kron(k, id, sp.quarter * m1 * sp.quarter_inv, Complex(-0.5, 0.0));
    accumulate_kron(k, (sp.quarter_inv * m1 * sp.quarter).transpose(), id, Complex(-0.5, 0.0));
  } else {
    Matrix w = Matrix::Zero(n2, n2), wi = Matrix::Zero(n2, n2);
    accumulate_kron(w, sp.quarter.transpose(), sp.quarter, Complex(1.0, 0.0));
    accumulate_kron(wi, sp.quarter_inv.transpose(), sp.quarter_inv, Complex(1.0, 0.0));
    k = w * dis.dense() * wi;
  }
  double scale = std::max(k.norm(), 1e-30);
  if ((k - k.adjoint()).norm() > 1e-8 * scale) {
    throw argument_error("generator is not KMS-symmetric for the given state");
  }
  return 0.5 * (k + Matrix(k.adjoint()));
}

struct WeightedApply {
  const Superoperator* dis;
  const SigmaPowers* sp;
  long n;

  Vector operator()(const Vector& v) const {
    Matrix x = to_mat(v, n);
    Matrix y = sp->quarter * dis->apply(sp->quarter_inv * x * sp->quarter_inv) * sp->quarter;
    return to_vec(y);
  }
};

}  // namespace

double lanczos_largest(const std::function<Vector(const Vector&)>& apply, long n,
                       const std::vector<Vector>& deflate, Vector* eigvec, double tol,
                       int max_iter) {
  std::vector<Vector> defl;
  for (const Vector& v : deflate) {
    Vector w = v;
    for (const Vector& u : defl) w -= u.dot(w) * u;
    double nm = w.norm();
    if (nm > 1e-12) defl.push_back(w / nm);
  }
  auto project_out = [&](Vector& w) {
    for (const Vector& u : defl) w -= u.dot(w) * u;
  };

  Rng rng(0x9e3779b9u + static_cast<unsigned long>(n));
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto fresh = [&]() {
    Vector v(n);
    for (long i = 0; i < n; ++i) v(i) = Complex(gauss(rng), gauss(rng));
    project_out(v);
    double nm = v.norm();
    if (nm < 1e-12) throw numeric_error("lanczos start vector collapsed under deflation");
    return Vector(v / nm);
  };

  std::vector<Vector> q;
  std::vector<double> alpha, beta;  // beta[j] couples q[j] and q[j+1]
  q.push_back(fresh());
  double best = 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = apply(q.back());
    project_out(w);
    double a = std::real(q.back().dot(w));
    alpha.push_back(a);
    w -= a * q.back();
    if (q.size() > 1) w -= beta.back() * q[q.size() - 2];
    for (const Vector& u : q) w -= u.dot(w) * u;  // full reorthogonalization
    for (const Vector& u : q) w -= u.dot(w) * u;
    double b = w.norm();

    long m = static_cast<long>(alpha.size());
    Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha.data(), m);
    Eigen::VectorXd sub(m > 1 ? m - 1 : 0);
    for (long j = 0; j + 1 < m; ++j) sub(j) = beta[j];
    tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    long top = m - 1;  // ascending order
    best = tri.eigenvalues()(top);
    double resid = m > 0 ? std::abs(b * tri.eigenvectors()(m - 1, top)) : infinity();
    bool exhausted = static_cast<long>(q.size()) + static_cast<long>(defl.size()) >= n;
    if (resid <= tol * std::max(std::abs(best), 1.0) || exhausted) {
      if (eigvec != nullptr) {
        Vector y = Vector::Zero(n);
        for (long j = 0; j < m; ++j) y += tri.eigenvectors()(j, top) * q[j];
        y.normalize();
        *eigvec = y;
      }
      return best;
    }
    if (b < 1e-13 * std::max(std::abs(best), 1.0)) {
      beta.push_back(0.0);
      q.push_back(fresh());  // invariant subspace hit; restart a new block
    } else {
      beta.push_back(b);
      q.push_back(w / b);
    }
  }
  throw numeric_error(fmt::format("lanczos did not converge in {} iterations", max_iter));
}

GapResult spectral_gap(const Superoperator& l, const QuantumState& sigma) {
  if (sigma.dim() != l.dim()) throw argument_error("state dimension mismatch");
  Superoperator dis = dissipative_heisenberg(l);
  SigmaPowers sp = sigma_powers(sigma);
  long n = l.dim();

  if (n <= 64) {
    Matrix k = weighted_dense(dis, sp);
    Eigen::SelfAdjointEigenSolver<Matrix> es(k, Eigen::EigenvaluesOnly);
    RealVector lam = -es.eigenvalues();  // decay rates, descending
    double scale = lam.cwiseAbs().maxCoeff();
    double kernel_tol = std::max(1e-9 * scale, 1e-13);
    GapResult out;
    double gap = infinity();
    for (long i = 0; i < lam.size(); ++i) {
      if (lam(i) < kernel_tol) {
        ++out.kernel_dim;
      } else {
        gap = std::min(gap, lam(i));
      }
    }
    out.gap = std::isfinite(gap) ? gap : 0.0;
    return out;
  }

  long n2 = n * n;
  WeightedApply kap{&dis, &sp, n};
  {  // symmetry probe before trusting the Lanczos recursion
    Rng rng(7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int t = 0; t < 3; ++t) {
      Vector u(n2), v(n2);
      for (long i = 0; i < n2; ++i) {
        u(i) = Complex(gauss(rng), gauss(rng));
        v(i) = Complex(gauss(rng), gauss(rng));
      }
      u.normalize();
      v.normalize();
      Vector ku = kap(u), kv = kap(v);
      double scale = std::max({ku.norm(), kv.norm(), 1e-30});
      if (std::abs(u.dot(kv) - std::conj(v.dot(ku))) > 1e-8 * scale) {
        throw argument_error("generator is not KMS-symmetric for the given state");
      }
    }
  }
  auto neg = [&](const Vector& v) { return Vector(-kap(v)); };
  double lam_max = lanczos_largest(neg, n2, {}, nullptr, 1e-9);
  double kernel_tol = std::max(1e-9 * lam_max, 1e-13);

  std::vector<Vector> kernel;
  kernel.push_back(to_vec(sp.half) / sp.half.norm());
  auto shifted = [&](const Vector& v) { return Vector(lam_max * v + kap(v)); };
  double gap = 0.0;
  while (true) {
    Vector vec_out;
    double mu = lanczos_largest(shifted, n2, kernel, &vec_out, 1e-9);
    gap = lam_max - mu;
    if (gap >= kernel_tol) break;
    if (kernel.size() >= 64) {
      throw numeric_error("kernel dimension exceeds 64; generator looks degenerate");
    }
    kernel.push_back(vec_out);
  }
  return {gap, static_cast<int>(kernel.size())};
}

ConditionalExpectation conditional_expectation_from_basis(const std::vector<Matrix>& span,
                                                          const QuantumState& sigma,
                                                          std::vector<int> domain,
                                                          int local_dim) {
  if (span.empty()) throw argument_error("fixed-point span is empty");
  long n = dense_dim(local_dim, domain.size());
  if (sigma.dim() != n) throw argument_error("state dimension mismatch");
  for (const Matrix& s : span) {
    if (s.rows() != n || s.cols() != n) throw argument_error("span element dimension mismatch");
  }
  Matrix sq = mat_sqrt(sigma.rho());

  long m = static_cast<long>(span.size());
  Matrix gram(m, m);
  std::vector<Matrix> weighted(m);
  for (long j = 0; j < m; ++j) weighted[j] = sq * span[j] * sq;
  for (long j = 0; j < m; ++j) {
    for (long i = 0; i < m; ++i) gram(i, j) = hs_inner(weighted[i], span[j]);
  }
  gram = 0.5 * (gram + Matrix(gram.adjoint()));
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  double top = es.eigenvalues().maxCoeff();
  if (top <= 0.0) throw argument_error("fixed-point span is numerically null");

  auto basis = std::make_shared<std::vector<Matrix>>();
  auto dual = std::make_shared<std::vector<Matrix>>();  // sigma^{1/2} X_k sigma^{1/2}
  for (long k = 0; k < m; ++k) {
    if (es.eigenvalues()(k) < 1e-10 * top) continue;
    Matrix x = Matrix::Zero(n, n);
    for (long j = 0; j < m; ++j) x += es.eigenvectors()(j, k) * span[j];
    x /= std::sqrt(es.eigenvalues()(k));
    basis->push_back(x);
    dual->push_back(sq * x * sq);
  }

  auto heis_fn = [basis, dual, n](const Matrix& x) {
    Matrix y = Matrix::Zero(n, n);
    for (std::size_t k = 0; k < basis->size(); ++k) {
      y += hs_inner((*dual)[k], x) * (*basis)[k];
    }
    return y;
  };
  auto schro_fn = [basis, dual, n](const Matrix& rho) {
    Matrix y = Matrix::Zero(n, n);
    for (std::size_t k = 0; k < basis->size(); ++k) {
      y += hs_inner((*basis)[k], rho) * (*dual)[k];
    }
    return y;
  };

  Matrix unit_err = heis_fn(Matrix::Identity(n, n)) - Matrix::Identity(n, n);
  if (unit_err.norm() > 1e-7 * std::sqrt(static_cast<double>(n))) {
    throw argument_error("fixed-point span must contain the identity");
  }

  ConditionalExpectation ce{
      Superoperator::from_apply(domain, local_dim, Picture::heisenberg, heis_fn),
      Superoperator::from_apply(domain, local_dim, Picture::schrodinger, schro_fn),
      *basis, sigma};
  return ce;
}

ConditionalExpectation fixed_point_projection(const Superoperator& l, const QuantumState& sigma) {
  if (sigma.dim() != l.dim()) throw argument_error("state dimension mismatch");
  Superoperator dis = dissipative_heisenberg(l);
  SigmaPowers sp = sigma_powers(sigma);
  long n = l.dim();
  std::vector<int> domain = l.domain;

  auto basis_from_vectors = [&](const std::vector<Vector>& vecs) {
    std::vector<Matrix> span;
    span.reserve(vecs.size());
    for (const Vector& v : vecs) {
      span.push_back(sp.quarter_inv * to_mat(v, n) * sp.quarter_inv);
    }
    return conditional_expectation_from_basis(span, sigma, domain, l.local_dim);
  };

  if (n <= 64) {
    Matrix k = weighted_dense(dis, sp);
    bool want_vectors = n <= 32;
    Eigen::SelfAdjointEigenSolver<Matrix> es(
        k, want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    RealVector lam = -es.eigenvalues();
    double scale = lam.cwiseAbs().maxCoeff();
    double kernel_tol = std::max(1e-9 * scale, 1e-13);
    std::vector<long> kernel_idx;
    double lam_kernel_max = 0.0, gap = infinity();
    for (long i = 0; i < lam.size(); ++i) {
      if (lam(i) < kernel_tol) {
        kernel_idx.push_back(i);
        lam_kernel_max = std::max(lam_kernel_max, std::abs(lam(i)));
      } else {
        gap = std::min(gap, lam(i));
      }
    }
    if (kernel_idx.empty()) throw numeric_error("generator kernel not found");
    if (std::isfinite(gap) && gap < 1e3 * std::max(lam_kernel_max, 1e-300)) {
      throw conditioning_error(fmt::format(
          "kernel cluster (max rate {:.3e}) not separated from the gap {:.3e}", lam_kernel_max,
          gap));
    }
    if (kernel_idx.size() == 1) {
      return conditional_expectation_from_basis({Matrix::Identity(n, n)}, sigma, domain,
                                                l.local_dim);
    }
    if (!want_vectors) {
      es.compute(k, Eigen::ComputeEigenvectors);
    }
    std::vector<Vector> vecs;
    for (long i : kernel_idx) vecs.push_back(es.eigenvectors().col(i));
    return basis_from_vectors(vecs);
  }

  long n2 = n * n;
  WeightedApply kap{&dis, &sp, n};
  auto neg = [&](const Vector& v) { return Vector(-kap(v)); };
  double lam_max = lanczos_largest(neg, n2, {}, nullptr, 1e-9);
  double kernel_tol = std::max(1e-9 * lam_max, 1e-13);
  std::vector<Vector> kernel;
  kernel.push_back(to_vec(sp.half) / sp.half.norm());
  auto shifted = [&](const Vector& v) { return Vector(lam_max * v + kap(v)); };
  while (true) {
    Vector vec_out;
    double mu = lanczos_largest(shifted, n2, kernel, &vec_out, 1e-9);
    if (lam_max - mu >= kernel_tol) break;
    if (kernel.size() >= 64) {
      throw numeric_error("kernel dimension exceeds 64; generator looks degenerate");
    }
    kernel.push_back(vec_out);
  }
  if (kernel.size() == 1) {
    return conditional_expectation_from_basis({Matrix::Identity(n, n)}, sigma, domain,
                                              l.local_dim);
  }
  return basis_from_vectors(kernel);
}

// ---- diagnostics ---------------------------------------------------------

Matrix choi_matrix(const Superoperator& s) {
  long n = s.dim();
  if (n > 64) {
    throw resource_error(fmt::format("choi matrix limited to domain dim 64, got {}", n));
  }
  Matrix c(n * n, n * n);
  Matrix e = Matrix::Zero(n, n);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) {
      e(i, j) = 1.0;
      c.block(i * n, j * n, n, n) = s.apply(e);
      e(i, j) = 0.0;
    }
  }
  return c;
}

CeCheck check_conditional_expectation(const ConditionalExpectation& ce, Rng& rng) {
  long n = ce.heisenberg.dim();
  const Matrix& rho = ce.sigma.rho();
  CeCheck out;

  auto probe = [&]() {
    Matrix x = random_hermitian(n, rng) + Complex(0.0, 1.0) * random_hermitian(n, rng);
    return Matrix(x / x.norm());
  };
  for (int t = 0; t < 5; ++t) {
    Matrix x = probe();
    Matrix ex = ce.heisenberg.apply(x);
    out.idempotence = std::max(out.idempotence, (ce.heisenberg.apply(ex) - ex).norm());
    Matrix y = probe();
    Complex lhs = hs_inner(ex, y);
    Complex rhs = hs_inner(x, ce.schrodinger.apply(y));
    out.cross_adjoint = std::max(out.cross_adjoint, std::abs(lhs - rhs));
  }
  out.unitality = (ce.heisenberg.apply(Matrix::Identity(n, n)) - Matrix::Identity(n, n)).norm();
  out.state_preservation = trace_norm(ce.schrodinger.apply(rho) - rho);
  {
    Matrix c = choi_matrix(ce.heisenberg);
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (c + Matrix(c.adjoint())),
                                             Eigen::EigenvaluesOnly);
    out.choi_min_eig = es.eigenvalues().minCoeff();
  }
  for (double s : {0.3, 1.0, 2.7}) {
    for (int t = 0; t < 3; ++t) {
      Matrix x = probe();
      Matrix lhs = modular_conjugate(ce.heisenberg.apply(x), rho, s);
      Matrix rhs = ce.heisenberg.apply(modular_conjugate(x, rho, s));
      out.modular_commutation = std::max(out.modular_commutation, (lhs - rhs).norm());
    }
  }
  return out;
}

}  // namespace rapidmix
