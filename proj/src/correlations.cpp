#include "rapidmix/correlations.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "rapidmix/entropy_dynamics.hpp"
#include "rapidmix/errors.hpp"

namespace rapidmix {

namespace {

void check_self_adjoint(const DenseOperator& f, const char* who) {
  double scale = std::max(1.0, f.matrix.norm());
  if ((f.matrix - f.matrix.adjoint()).norm() > 1e-10 * scale) {
    throw argument_error(fmt::format("{}: observable is not self-adjoint", who));
  }
}

void check_region_in_state(const QuantumState& sigma, const Region& r,
                          const char* who) {
  if (r.empty()) {
    throw argument_error(fmt::format("{}: region is empty", who));
  }
  if (!contains_all(sigma.op.support, r.vertices)) {
    throw argument_error(
        fmt::format("{}: region is not contained in the state's support", who));
  }
}

void check_disjoint(const Region& a, const Region& c, const char* who) {
  if (!support_intersection(a.vertices, c.vertices).empty()) {
    throw argument_error(fmt::format("{}: regions overlap", who));
  }
}

// Marginal of a state's matrix on the kept sites (kept must be a subset).
DenseOperator marginal(const QuantumState& sigma, const std::vector<int>& keep) {
  std::vector<int> traced = support_difference(sigma.op.support, keep);
  if (traced.empty()) return sigma.op;
  return partial_trace(sigma.op, traced);
}

// Tensor product of two marginals as a matrix on the sorted union of their
// supports; disjoint embedded factors commute, so the product is exact.
Matrix marginal_product(const DenseOperator& sa, const DenseOperator& sc,
                        const std::vector<int>& ac) {
  return embed(sa, ac).matrix * embed(sc, ac).matrix;
}

struct SignStep {
  Matrix optimizer;  // the sign unitary of the Hermitian part
  double value;      // trace norm of the Hermitian part
};

// Maximizes Re Tr[f X] over self-adjoint ||f|| <= 1.
SignStep sign_step(const Matrix& x) {
  Matrix h = 0.5 * (x + x.adjoint());
  Spectrum s = herm_eig(h);
  Matrix sign = Matrix::Zero(h.rows(), h.cols());
  double value = 0.0;
  for (long i = 0; i < s.eigenvalues.size(); ++i) {
    double lam = s.eigenvalues(i);
    Vector v = s.eigenvectors.col(i);
    sign += (lam < 0.0 ? -1.0 : 1.0) * (v * v.adjoint());
    value += std::abs(lam);
  }
  return {sign, value};
}

Matrix random_unit_hermitian(long dim, Rng& rng) {
  Matrix h = random_hermitian(dim, rng);
  double norm = op_norm(h);
  if (norm > 0) h /= norm;
  return h;
}

// Spectral pieces of a PSD matrix at a relative support cutoff.
struct PsdParts {
  Matrix sqrt;      // h^{1/2}
  Matrix inv_sqrt;  // h^{-1/2} on the support
  Matrix inv;       // h^{-1} on the support
  Matrix projector; // support projector
  long rank = 0;
  double min_kept = 0.0;
  double max_eig = 0.0;
};

PsdParts psd_parts(const Matrix& h) {
  Spectrum s = herm_eig(symmetrize(h, 1e-8));
  double top = s.eigenvalues.cwiseAbs().maxCoeff();
  double clip = 1e-12 * std::max(1.0, top);
  PsdParts parts;
  parts.sqrt = Matrix::Zero(h.rows(), h.cols());
  parts.inv_sqrt = parts.sqrt;
  parts.inv = parts.sqrt;
  parts.projector = parts.sqrt;
  parts.max_eig = s.eigenvalues.size() ? s.eigenvalues.maxCoeff() : 0.0;
  for (long i = 0; i < s.eigenvalues.size(); ++i) {
    double lam = s.eigenvalues(i);
    if (lam <= clip) continue;
    Vector v = s.eigenvectors.col(i);
    Matrix vv = v * v.adjoint();
    parts.sqrt += std::sqrt(lam) * vv;
    parts.inv_sqrt += (1.0 / std::sqrt(lam)) * vv;
    parts.inv += (1.0 / lam) * vv;
    parts.projector += vv;
    parts.rank += 1;
    parts.min_kept = parts.min_kept == 0.0 ? lam : std::min(parts.min_kept, lam);
  }
  return parts;
}

// Hermitian single-site basis: identity, then the generalized Gell-Mann
// matrices (X/Y pairs followed by the diagonal ladder). Pauli for d = 2.
std::vector<Matrix> site_basis(int d) {
  std::vector<Matrix> basis;
  basis.push_back(Matrix::Identity(d, d));
  for (int j = 0; j < d; ++j) {
    for (int k = j + 1; k < d; ++k) {
      Matrix x = Matrix::Zero(d, d);
      x(j, k) = 1.0;
      x(k, j) = 1.0;
      basis.push_back(x);
      Matrix y = Matrix::Zero(d, d);
      y(j, k) = Complex(0.0, -1.0);
      y(k, j) = Complex(0.0, 1.0);
      basis.push_back(y);
    }
  }
  for (int m = 1; m < d; ++m) {
    Matrix diag = Matrix::Zero(d, d);
    double scale = std::sqrt(2.0 / (m * (m + 1.0)));
    for (int l = 0; l < m; ++l) diag(l, l) = scale;
    diag(m, m) = -m * scale;
    basis.push_back(diag);
  }
  return basis;
}

int threads_from_env() {
  const char* raw = std::getenv("RAPIDMIX_THREADS");
  if (raw == nullptr) return 1;
  char* end = nullptr;
  long parsed = std::strtol(raw, &end, 10);
  if (end == raw || parsed < 1) return 1;
  return static_cast<int>(std::min(parsed, 64L));
}

// tr_right of a matrix on a two-factor space of sizes (dl, dr).
Matrix trace_out_right(const Matrix& m, long dl, long dr) {
  Matrix out = Matrix::Zero(dl, dl);
  for (long i = 0; i < dl; ++i) {
    for (long j = 0; j < dl; ++j) {
      Complex acc = 0.0;
      for (long k = 0; k < dr; ++k) acc += m(i * dr + k, j * dr + k);
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix random_projector(long dim, long rank, Rng& rng) {
  Matrix u = random_unitary(dim, rng);
  Matrix p = Matrix::Zero(dim, dim);
  for (long i = 0; i < rank; ++i) p += u.col(i) * u.col(i).adjoint();
  return p;
}

Matrix random_positive(long dim, Rng& rng, double lo, double hi) {
  Matrix u = random_unitary(dim, rng);
  std::uniform_real_distribution<double> eig(lo, hi);
  Matrix m = Matrix::Zero(dim, dim);
  for (long i = 0; i < dim; ++i) m += eig(rng) * (u.col(i) * u.col(i).adjoint());
  return m;
}

// A = B^{1/2} (1 + E) B^{1/2} with ||E|| = eps, so the similarity strength of
// (A, B) is exactly eps.
Matrix perturb_relation(const Matrix& b, double eps, Rng& rng) {
  Matrix e = random_unit_hermitian(b.rows(), rng);
  PsdParts parts = psd_parts(b);
  Matrix inner = Matrix::Identity(b.rows(), b.cols()) + eps * e;
  return parts.sqrt * inner * parts.sqrt;
}

}  // namespace

InnerKind inner_kind_from_string(const std::string& name) {
  if (name == "gns") return InnerKind::gns;
  if (name == "kms") return InnerKind::kms;
  throw config_error(
      fmt::format("unknown inner product '{}' (expected gns or kms)", name));
}

DecayMeasure decay_measure_from_string(const std::string& name) {
  if (name == "covariance_sup") return DecayMeasure::covariance_sup;
  if (name == "l2_clustering") return DecayMeasure::l2_clustering;
  if (name == "local_indist") return DecayMeasure::local_indist;
  if (name == "strong_local_indist") return DecayMeasure::strong_local_indist;
  if (name == "mixing_condition") return DecayMeasure::mixing_condition;
  if (name == "mutual_information") return DecayMeasure::mutual_information;
  if (name == "sli_epsilon") return DecayMeasure::sli_epsilon;
  if (name == "mixing_epsilon") return DecayMeasure::mixing_epsilon;
  throw config_error(fmt::format("unknown decay measure '{}'", name));
}

std::string to_string(DecayMeasure m) {
  switch (m) {
    case DecayMeasure::covariance_sup: return "covariance_sup";
    case DecayMeasure::l2_clustering: return "l2_clustering";
    case DecayMeasure::local_indist: return "local_indist";
    case DecayMeasure::strong_local_indist: return "strong_local_indist";
    case DecayMeasure::mixing_condition: return "mixing_condition";
    case DecayMeasure::mutual_information: return "mutual_information";
    case DecayMeasure::sli_epsilon: return "sli_epsilon";
    case DecayMeasure::mixing_epsilon: return "mixing_epsilon";
  }
  throw argument_error("unreachable decay measure");
}

double covariance(const QuantumState& sigma, const DenseOperator& f,
                  const DenseOperator& g, InnerKind kind) {
  check_self_adjoint(f, "covariance");
  check_self_adjoint(g, "covariance");
  if (f.local_dim != sigma.op.local_dim || g.local_dim != sigma.op.local_dim) {
    throw argument_error("covariance: local dimension mismatch");
  }
  if (!contains_all(sigma.op.support, f.support) ||
      !contains_all(sigma.op.support, g.support)) {
    throw argument_error(
        "covariance: observable support is not inside the state's support");
  }
  if (kind == InnerKind::gns) {
    std::vector<int> u = support_union(f.support, g.support);
    Matrix su = marginal(sigma, u).matrix;
    Matrix fe = embed(f, u).matrix;
    Matrix ge = embed(g, u).matrix;
    double mf = std::real((su * fe).trace());
    double mg = std::real((su * ge).trace());
    fe.diagonal().array() -= mf;
    ge.diagonal().array() -= mg;
    return std::real((su * fe * ge).trace());
  }
  const std::vector<int>& full = sigma.op.support;
  Matrix root = mat_sqrt(sigma.rho());
  Matrix fe = embed(f, full).matrix;
  Matrix ge = embed(g, full).matrix;
  double mf = std::real((sigma.rho() * fe).trace());
  double mg = std::real((sigma.rho() * ge).trace());
  fe.diagonal().array() -= mf;
  ge.diagonal().array() -= mg;
  return std::real((root * fe * root * ge).trace());
}

CovarianceBound covariance_sup(const QuantumState& sigma, const Region& a,
                               const Region& c, InnerKind kind, int restarts,
                               unsigned seed) {
  check_region_in_state(sigma, a, "covariance_sup");
  check_region_in_state(sigma, c, "covariance_sup");
  check_disjoint(a, c, "covariance_sup");
  if (restarts < 1) throw argument_error("covariance_sup: restarts must be >= 1");

  int d = sigma.op.local_dim;
  std::vector<int> ac = support_union(a.vertices, c.vertices);
  DenseOperator sac = marginal(sigma, ac);
  DenseOperator sa = partial_trace(sac, c.vertices);
  DenseOperator sc = partial_trace(sac, a.vertices);
  Matrix delta = sac.matrix - marginal_product(sa, sc, ac);

  CovarianceBound result;
  result.certificate = trace_norm(delta);

  long dc = sc.matrix.rows();
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
  constexpr double kTol = 1e-9;
  constexpr int kMaxIter = 500;

  // Effective-operator closures for the two inner products. GNS reduces to
  // the AC marginal; KMS keeps the sqrt-weighted full-space form.
  Matrix root;
  if (kind == InnerKind::kms) root = mat_sqrt(sigma.rho());
  const std::vector<int>& full = sigma.op.support;

  auto effective = [&](const Matrix& obs, const Region& obs_region,
                       const Region& out_region) {
    if (kind == InnerKind::gns) {
      Matrix prod = embed(DenseOperator(obs, obs_region.vertices, d), ac).matrix * delta;
      return partial_trace(DenseOperator(prod, ac, d),
                           support_difference(ac, out_region.vertices))
          .matrix;
    }
    Matrix oe = embed(DenseOperator(obs, obs_region.vertices, d), full).matrix;
    double mean = std::real((sigma.rho() * oe).trace());
    oe.diagonal().array() -= mean;
    Matrix weighted = root * oe * root;
    return partial_trace(DenseOperator(weighted, full, d),
                         support_difference(full, out_region.vertices))
        .matrix;
  };

  for (int r = 0; r < restarts; ++r) {
    Matrix g = random_unit_hermitian(dc, rng);
    double value = 0.0;
    double prev = -1.0;
    int iter = 0;
    while (iter < kMaxIter) {
      ++iter;
      SignStep fs = sign_step(effective(g, c, a));
      SignStep gs = sign_step(effective(fs.optimizer, a, c));
      g = gs.optimizer;
      value = gs.value;
      if (std::abs(value - prev) < kTol) break;
      prev = value;
    }
    result.iterations += iter;
    result.value = std::max(result.value, value);
  }
  return result;
}

std::vector<DenseOperator> observable_basis(const Region& r, int local_dim) {
  if (r.empty()) throw argument_error("observable_basis: region is empty");
  if (!is_sorted_strict(r.vertices)) {
    throw argument_error("observable_basis: region vertices must be sorted");
  }
  double count = std::pow(static_cast<double>(local_dim) * local_dim,
                          static_cast<double>(r.size()));
  if (count > 4096.0) {
    throw resource_error(
        fmt::format("observable_basis: {} basis strings exceed the limit 4096",
                    count));
  }
  std::vector<Matrix> local = site_basis(local_dim);
  int per_site = static_cast<int>(local.size());
  int sites = r.size();
  long total = static_cast<long>(std::llround(count));
  std::vector<DenseOperator> basis;
  basis.reserve(total - 1);
  for (long index = 1; index < total; ++index) {
    long rest = index;
    Matrix acc = Matrix::Identity(1, 1);
    // Site 0 is the most significant tensor factor, so peel digits from the
    // high end.
    for (int s = 0; s < sites; ++s) {
      long stride = 1;
      for (int t = s + 1; t < sites; ++t) stride *= per_site;
      long digit = rest / stride;
      rest %= stride;
      acc = kron(acc, local[digit]);
    }
    basis.emplace_back(acc, r.vertices, local_dim);
  }
  return basis;
}

double l2_clustering_value(const QuantumState& sigma, const Region& a,
                           const Region& c) {
  check_region_in_state(sigma, a, "l2_clustering_value");
  check_region_in_state(sigma, c, "l2_clustering_value");
  check_disjoint(a, c, "l2_clustering_value");
  int d = sigma.op.local_dim;
  double basis_count =
      std::pow(static_cast<double>(d) * d, static_cast<double>(a.size())) +
      std::pow(static_cast<double>(d) * d, static_cast<double>(c.size()));
  if (basis_count > 520.0) {
    throw resource_error(
        "l2_clustering_value: coefficient basis too large for these regions");
  }

  std::vector<int> ac = support_union(a.vertices, c.vertices);
  DenseOperator sac = marginal(sigma, ac);
  DenseOperator sa = partial_trace(sac, c.vertices);
  DenseOperator sc = partial_trace(sac, a.vertices);

  auto centered = [&](std::vector<DenseOperator> raw, const Matrix& smarg) {
    for (DenseOperator& op : raw) {
      double mean = std::real((smarg * op.matrix).trace());
      op.matrix.diagonal().array() -= mean;
    }
    return raw;
  };
  std::vector<DenseOperator> fa = centered(observable_basis(a, d), sa.matrix);
  std::vector<DenseOperator> gc = centered(observable_basis(c, d), sc.matrix);

  auto gram = [](const std::vector<DenseOperator>& ops, const Matrix& smarg) {
    long n = static_cast<long>(ops.size());
    Eigen::MatrixXd g(n, n);
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < n; ++j) {
        g(i, j) = std::real((smarg * ops[i].matrix * ops[j].matrix).trace());
      }
    }
    return g;
  };
  Eigen::MatrixXd ga = gram(fa, sa.matrix);
  Eigen::MatrixXd gc_mat = gram(gc, sc.matrix);

  long na = static_cast<long>(fa.size());
  long nc = static_cast<long>(gc.size());
  Eigen::MatrixXd cross(na, nc);
  std::vector<Matrix> fa_embedded(na);
  for (long i = 0; i < na; ++i) {
    fa_embedded[i] = sac.matrix * embed(fa[i], ac).matrix;
  }
  for (long j = 0; j < nc; ++j) {
    Matrix ge = embed(gc[j], ac).matrix;
    for (long i = 0; i < na; ++i) {
      cross(i, j) = std::real((fa_embedded[i] * ge).trace());
    }
  }

  auto inv_sqrt = [](const Eigen::MatrixXd& g) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    double clip = 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    for (long i = 0; i < es.eigenvalues().size(); ++i) {
      double lam = es.eigenvalues()(i);
      if (lam <= clip) continue;
      out += (1.0 / std::sqrt(lam)) * es.eigenvectors().col(i) *
             es.eigenvectors().col(i).transpose();
    }
    return out;
  };
  Eigen::MatrixXd mid = inv_sqrt(ga) * cross * inv_sqrt(gc_mat);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mid);
  return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

namespace {

// Shared geometry and marginals for the indistinguishability measures.
struct IndistParts {
  Matrix omega;  // tr_BC sigma^{ABC} on A
  Matrix tau;    // tr_B sigma^{AB} on A
};

IndistParts indist_parts(const GibbsEnsemble& ens, const Region& a,
                         const Region& b, const Region& c, const char* who) {
  if (a.empty()) throw argument_error(fmt::format("{}: region A is empty", who));
  if (!support_intersection(a.vertices, b.vertices).empty() ||
      !support_intersection(a.vertices, c.vertices).empty() ||
      !support_intersection(b.vertices, c.vertices).empty()) {
    throw argument_error(fmt::format("{}: regions A, B, C must be disjoint", who));
  }
  if (!crossing_edges(ens.graph(), a, c).empty()) {
    throw argument_error(
        fmt::format("{}: B does not shield A from C (direct A-C interactions)",
                    who));
  }
  Region ab = region_union(a, b);
  Region abc = region_union(ab, c);
  IndistParts parts;
  parts.omega = marginal(ens.gibbs(abc), a.vertices).matrix;
  parts.tau = marginal(ens.gibbs(ab), a.vertices).matrix;
  return parts;
}

}  // namespace

double local_indist(const GibbsEnsemble& ens, const Region& a, const Region& b,
                    const Region& c) {
  IndistParts parts = indist_parts(ens, a, b, c, "local_indist");
  return trace_norm(parts.omega - parts.tau);
}

double strong_local_indist(const GibbsEnsemble& ens, const Region& a,
                           const Region& b, const Region& c, bool one_sided) {
  IndistParts parts = indist_parts(ens, a, b, c, "strong_local_indist");
  PsdParts tau = psd_parts(parts.tau);
  if (one_sided) {
    return op_norm(parts.omega * tau.inv - tau.projector);
  }
  return op_norm(tau.inv_sqrt * parts.omega * tau.inv_sqrt - tau.projector);
}

double mixing_condition(const QuantumState& sigma, const Region& a,
                        const Region& c) {
  check_region_in_state(sigma, a, "mixing_condition");
  check_region_in_state(sigma, c, "mixing_condition");
  check_disjoint(a, c, "mixing_condition");
  std::vector<int> ac = support_union(a.vertices, c.vertices);
  DenseOperator sac = marginal(sigma, ac);
  DenseOperator sa = partial_trace(sac, c.vertices);
  DenseOperator sc = partial_trace(sac, a.vertices);
  Matrix prod = marginal_product(sa, sc, ac);
  Spectrum ps = herm_eig(symmetrize(prod, 1e-8));
  double top = ps.eigenvalues.cwiseAbs().maxCoeff();
  if (ps.eigenvalues.minCoeff() <= 1e-14 * std::max(1.0, top)) {
    throw domain_error("mixing_condition: singular marginals");
  }
  Matrix inv = Matrix::Zero(prod.rows(), prod.cols());
  for (long i = 0; i < ps.eigenvalues.size(); ++i) {
    inv += (1.0 / ps.eigenvalues(i)) *
           (ps.eigenvectors.col(i) * ps.eigenvectors.col(i).adjoint());
  }
  long n = prod.rows();
  return op_norm(sac.matrix * inv - Matrix::Identity(n, n));
}

double mutual_information(const QuantumState& sigma, const Region& a,
                          const Region& c) {
  check_region_in_state(sigma, a, "mutual_information");
  check_region_in_state(sigma, c, "mutual_information");
  check_disjoint(a, c, "mutual_information");
  std::vector<int> ac = support_union(a.vertices, c.vertices);
  DenseOperator sac = marginal(sigma, ac);
  DenseOperator sa = partial_trace(sac, c.vertices);
  DenseOperator sc = partial_trace(sac, a.vertices);
  return relative_entropy(sac.matrix, marginal_product(sa, sc, ac));
}

double max_mutual_information(const QuantumState& sigma, const Region& a,
                              const Region& c) {
  check_region_in_state(sigma, a, "max_mutual_information");
  check_region_in_state(sigma, c, "max_mutual_information");
  check_disjoint(a, c, "max_mutual_information");
  std::vector<int> ac = support_union(a.vertices, c.vertices);
  DenseOperator sac = marginal(sigma, ac);
  DenseOperator sa = partial_trace(sac, c.vertices);
  DenseOperator sc = partial_trace(sac, a.vertices);
  return max_relative_entropy(sac.matrix, marginal_product(sa, sc, ac));
}

SimilarityResult similarity_matrices(const Matrix& omega, const Matrix& tau) {
  if (omega.rows() != omega.cols() || tau.rows() != tau.cols() ||
      omega.rows() != tau.rows()) {
    throw argument_error("similarity: operators must be square and same size");
  }
  Matrix w = symmetrize(omega, 1e-8);
  Matrix t = symmetrize(tau, 1e-8);
  PsdParts wp = psd_parts(w);
  PsdParts tp = psd_parts(t);

  SimilarityResult result;
  result.support_equal = wp.rank == tp.rank &&
                         op_norm(wp.projector - tp.projector) <= 1e-8;
  result.epsilon = op_norm(wp.sqrt * tp.inv * wp.sqrt - tp.projector);
  result.dmax = max_relative_entropy(w, t);
  result.dmax_reverse = max_relative_entropy(t, w);
  return result;
}

SimilarityResult similarity(const QuantumState& omega, const QuantumState& tau) {
  if (omega.op.support != tau.op.support ||
      omega.op.local_dim != tau.op.local_dim) {
    throw argument_error("similarity: states live on different site sets");
  }
  return similarity_matrices(omega.rho(), tau.rho());
}

RelationReport relation_properties_check(const RelationCheckOptions& opt) {
  if (opt.dim < 2 || opt.samples < 1 || opt.chain_length < 1 ||
      opt.max_epsilon <= 0.0 || opt.max_epsilon >= 1.0 || opt.dim_left < 2 ||
      opt.dim_right < 2) {
    throw argument_error("relation_properties_check: bad options");
  }
  Rng rng(opt.seed);
  std::uniform_real_distribution<double> eps_draw(0.02, opt.max_epsilon);
  constexpr double kSlack = 1e-10;

  RelationReport report;
  auto record = [&](const std::string& property, int samples,
                    double worst_excess) {
    RelationPropertyResult entry;
    entry.property = property;
    entry.samples = samples;
    entry.worst_excess = worst_excess;
    entry.pass = worst_excess <= kSlack;
    if (!entry.pass) {
      report.failures.push_back(fmt::format(
          "{}: measured value exceeds the stated bound by {:.3e}", property,
          worst_excess));
      report.all_pass = false;
    }
    report.properties.push_back(std::move(entry));
  };

  // Reflexivity: the self-relation strength vanishes.
  {
    double worst = -infinity();
    for (int s = 0; s < opt.samples; ++s) {
      Matrix a = random_positive(opt.dim, rng, 0.3, 1.5);
      worst = std::max(worst, similarity_matrices(a, a).epsilon);
    }
    record("reflexivity", opt.samples, worst);
  }

  // Symmetry: flipping the pair costs at most eps / (1 - eps).
  {
    double worst = -infinity();
    double worst_inverse = -infinity();
    for (int s = 0; s < opt.samples; ++s) {
      Matrix b = random_positive(opt.dim, rng, 0.3, 1.5);
      Matrix a = perturb_relation(b, eps_draw(rng), rng);
      double eps = similarity_matrices(a, b).epsilon;
      double flipped = similarity_matrices(b, a).epsilon;
      worst = std::max(worst, flipped - eps / (1.0 - eps));
      PsdParts ap = psd_parts(a);
      PsdParts bp = psd_parts(b);
      double inverse_eps = similarity_matrices(bp.inv, ap.inv).epsilon;
      worst_inverse = std::max(worst_inverse, inverse_eps - eps);
    }
    record("symmetry", opt.samples, worst);
    record("inverse_symmetry", opt.samples, worst_inverse);
  }

  // Transitivity: composing two relations costs eps1*eps2 + eps1 + eps2.
  {
    double worst = -infinity();
    for (int s = 0; s < opt.samples; ++s) {
      Matrix b = random_positive(opt.dim, rng, 0.3, 1.5);
      Matrix a = perturb_relation(b, eps_draw(rng), rng);
      Matrix c = perturb_relation(b, eps_draw(rng), rng);
      double e1 = similarity_matrices(a, b).epsilon;
      double e2 = similarity_matrices(b, c).epsilon;
      double measured = similarity_matrices(a, c).epsilon;
      worst = std::max(worst, measured - (e1 * e2 + e1 + e2));
    }
    record("transitivity", opt.samples, worst);
  }

  // Tensor multiplicativity: the product pair obeys the same composed bound.
  {
    double worst = -infinity();
    for (int s = 0; s < opt.samples; ++s) {
      Matrix b1 = random_positive(opt.dim_left, rng, 0.3, 1.5);
      Matrix a1 = perturb_relation(b1, eps_draw(rng), rng);
      Matrix b2 = random_positive(opt.dim_right, rng, 0.3, 1.5);
      Matrix a2 = perturb_relation(b2, eps_draw(rng), rng);
      double e1 = similarity_matrices(a1, b1).epsilon;
      double e2 = similarity_matrices(a2, b2).epsilon;
      double measured = similarity_matrices(kron(a1, a2), kron(b1, b2)).epsilon;
      worst = std::max(worst, measured - (e1 * e2 + e1 + e2));
    }
    record("tensor", opt.samples, worst);
  }

  // Locality and normalization preservation under projected partial traces.
  {
    double worst_local = -infinity();
    double worst_norm = -infinity();
    long dl = opt.dim_left;
    long dr = opt.dim_right;
    for (int s = 0; s < opt.samples; ++s) {
      Matrix e_big = random_positive(dl * dr, rng, 0.3, 1.5);
      Matrix d_big = perturb_relation(e_big, eps_draw(rng), rng);
      double eps = similarity_matrices(d_big, e_big).epsilon;
      long rank = 1 + static_cast<long>(rng() % static_cast<unsigned long>(dr));
      Matrix p = random_projector(dr, rank, rng);
      Matrix sandwich = kron(Matrix::Identity(dl, dl), p);
      Matrix d_cut = trace_out_right(sandwich * d_big * sandwich, dl, dr);
      Matrix e_cut = trace_out_right(sandwich * e_big * sandwich, dl, dr);
      double measured = similarity_matrices(d_cut, e_cut).epsilon;
      worst_local = std::max(worst_local, measured - eps);

      Matrix d_state = d_cut / std::real(d_cut.trace());
      Matrix e_state = e_cut / std::real(e_cut.trace());
      double measured_norm = similarity_matrices(d_state, e_state).epsilon;
      worst_norm = std::max(worst_norm, measured_norm - eps * (2.0 + eps));
    }
    record("locality", opt.samples, worst_local);
    record("normalization", opt.samples, worst_norm);
  }

  // Chained composition of K links stays below (1+eps_1)...(1+eps_K) - 1.
  {
    double worst = -infinity();
    for (int s = 0; s < opt.samples; ++s) {
      Matrix head = random_positive(opt.dim, rng, 0.3, 1.5);
      Matrix tail = head;
      double bound = 1.0;
      for (int k = 0; k < opt.chain_length; ++k) {
        Matrix next = perturb_relation(tail, eps_draw(rng), rng);
        bound *= 1.0 + similarity_matrices(next, tail).epsilon;
        tail = next;
      }
      double measured = similarity_matrices(tail, head).epsilon;
      worst = std::max(worst, measured - (bound - 1.0));
    }
    record("chaining", opt.samples, worst);
  }

  return report;
}

ScanGeometry sliding_scan_geometry(const SpinGraph& g, const Region& domain,
                                   const Region& a, int c_size, int l_min,
                                   int l_max) {
  if (a.empty()) throw argument_error("sliding_scan_geometry: region A is empty");
  if (!contains_all(domain.vertices, a.vertices)) {
    throw argument_error("sliding_scan_geometry: A must lie inside the domain");
  }
  if (c_size < 1 || l_min < 1 || l_max < l_min) {
    throw argument_error("sliding_scan_geometry: bad scan window");
  }
  std::vector<int> dist = bfs_distances(g, a.vertices);
  ScanGeometry geometry;
  geometry.domain = domain;
  geometry.a = a;
  for (int l = l_min; l <= l_max; ++l) {
    std::vector<int> candidates;
    for (int v : domain.vertices) {
      if (dist[v] == l) candidates.push_back(v);
    }
    if (static_cast<int>(candidates.size()) < c_size) continue;
    candidates.resize(c_size);
    geometry.points.emplace_back(l, Region(g, candidates));
  }
  if (geometry.points.size() < 3) {
    throw argument_error(
        fmt::format("sliding_scan_geometry: only {} usable distances (need 3)",
                    geometry.points.size()));
  }
  return geometry;
}

DecayFit decay_scan(const GibbsEnsemble& ens, DecayMeasure measure,
                    const ScanGeometry& geometry, unsigned seed) {
  if (geometry.points.size() < 3) {
    throw argument_error("decay_scan: geometry must provide at least 3 distances");
  }
  const SpinGraph& g = ens.graph();
  const Region& domain = geometry.domain;
  const Region& a = geometry.a;
  // Populate the cache for the shared state before the parallel section.
  const QuantumState& whole = ens.gibbs(domain);

  auto point_value = [&](std::size_t index) {
    const auto& [l, c] = geometry.points[index];
    unsigned point_seed = seed * 1000003u + 31u * static_cast<unsigned>(l);
    switch (measure) {
      case DecayMeasure::covariance_sup:
        return covariance_sup(whole, a, c, InnerKind::gns, 8, point_seed).value;
      case DecayMeasure::l2_clustering:
        return l2_clustering_value(whole, a, c);
      case DecayMeasure::local_indist: {
        Region b = region_difference(domain, region_union(a, c));
        return local_indist(ens, a, b, c);
      }
      case DecayMeasure::strong_local_indist: {
        Region b = region_difference(domain, region_union(a, c));
        return strong_local_indist(ens, a, b, c);
      }
      case DecayMeasure::mixing_condition:
        return mixing_condition(whole, a, c);
      case DecayMeasure::mutual_information:
        return mutual_information(whole, a, c);
      case DecayMeasure::sli_epsilon: {
        Region b = region_difference(domain, region_union(a, c));
        IndistParts parts = indist_parts(ens, a, b, c, "decay_scan");
        return similarity_matrices(parts.omega, parts.tau).epsilon;
      }
      case DecayMeasure::mixing_epsilon: {
        std::vector<int> ac = support_union(a.vertices, c.vertices);
        DenseOperator sac = marginal(whole, ac);
        DenseOperator sa = partial_trace(sac, c.vertices);
        DenseOperator sc = partial_trace(sac, a.vertices);
        return similarity_matrices(sac.matrix, marginal_product(sa, sc, ac))
            .epsilon;
      }
    }
    throw argument_error("unreachable decay measure");
  };

  std::size_t count = geometry.points.size();
  std::vector<double> values(count, 0.0);
  int threads = threads_from_env();
  if (threads > 1 && count > 1) {
    std::vector<std::future<double>> futures;
    futures.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      futures.push_back(
          std::async(std::launch::async, [&point_value, i] { return point_value(i); }));
    }
    for (std::size_t i = 0; i < count; ++i) values[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < count; ++i) values[i] = point_value(i);
  }

  std::vector<ScanSample> samples;
  int boundary_a = boundary(g, a).size();
  for (std::size_t i = 0; i < count; ++i) {
    ScanSample sample;
    sample.l = geometry.points[i].first;
    sample.value = values[i];
    sample.boundary_a = boundary_a;
    sample.boundary_c = boundary(g, geometry.points[i].second).size();
    samples.push_back(sample);
  }
  return fit_exponential(std::move(samples));
}

DecayFit fit_exponential(std::vector<ScanSample> samples) {
  DecayFit fit;
  fit.samples = std::move(samples);

  bool all_tiny = true;
  for (const ScanSample& s : fit.samples) all_tiny = all_tiny && s.value < 1e-13;
  if (all_tiny) {
    fit.exact_zero = true;
    return fit;
  }

  std::vector<std::pair<int, double>> usable;
  for (const ScanSample& s : fit.samples) {
    if (s.value > 1e-12) usable.emplace_back(s.l, std::log(s.value));
  }
  if (usable.size() < 3) return fit;

  long n = static_cast<long>(usable.size());
  Eigen::MatrixXd design(n, 2);
  Eigen::VectorXd target(n);
  for (long i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = usable[i].first;
    target(i) = usable[i].second;
  }
  Eigen::Vector2d coeff =
      design.colPivHouseholderQr().solve(target);
  Eigen::VectorXd residual = target - design * coeff;
  double ss_res = residual.squaredNorm();
  double ss_tot = (target.array() - target.mean()).matrix().squaredNorm();
  double r2 = 0.0;
  if (ss_tot < 1e-30) {
    r2 = ss_res < 1e-30 ? 1.0 : 0.0;
  } else {
    r2 = 1.0 - ss_res / ss_tot;
  }
  fit.fitted = true;
  fit.rate = -coeff(1);
  fit.prefactor = std::exp(coeff(0));
  fit.r_squared = std::clamp(r2, 0.0, 1.0);
  fit.window_lo = usable.front().first;
  fit.window_hi = usable.back().first;
  return fit;
}

std::string scan_csv(const DecayFit& fit, DecayMeasure measure, double beta,
                     const std::string& model_hash) {
  std::string out = "l,value,boundary_A,boundary_C,measure,beta,model_hash\n";
  for (const ScanSample& s : fit.samples) {
    out += fmt::format("{},{:.17g},{},{},{},{:.17g},{}\n", s.l, s.value,
                       s.boundary_a, s.boundary_c, to_string(measure), beta,
                       model_hash);
  }
  return out;
}

}  // namespace rapidmix
