#include "rapidmix/hamiltonian.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace rapidmix {

namespace {

Matrix pauli_z() {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = -1.0;
  return m;
}

Matrix pauli_x() {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 1) = 1.0;
  m(1, 0) = 1.0;
  return m;
}

Matrix pauli_y() {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 1) = Complex(0.0, -1.0);
  m(1, 0) = Complex(0.0, 1.0);
  return m;
}

// measure whether all pairs of embedded terms commute
bool verify_commuting(const SpinGraph& g, const std::vector<DenseOperator>& terms) {
  for (std::size_t i = 0; i < terms.size(); ++i) {
    for (std::size_t j = i + 1; j < terms.size(); ++j) {
      std::vector<int> shared = support_intersection(terms[i].support, terms[j].support);
      if (shared.empty()) continue;  // disjoint supports always commute
      std::vector<int> joint = support_union(terms[i].support, terms[j].support);
      Matrix a = embed(terms[i], joint).matrix;
      Matrix b = embed(terms[j], joint).matrix;
      double scale = std::max(1.0, op_norm(a) * op_norm(b));
      if (op_norm(a * b - b * a) > 1e-10 * scale) return false;
    }
  }
  return true;
}

}  // namespace

Potential build_potential(const SpinGraph& g, const ModelSpec& spec) {
  Potential p;
  p.graph = g;
  p.kind = spec.kind;
  const int d = g.local_dim;

  switch (spec.kind) {
    case ModelKind::ising: {
      if (d != 2) throw config_error(fmt::format("ising needs local dimension 2, got {}", d));
      Matrix z = pauli_z(), id = Matrix::Identity(2, 2);
      for (auto [a, b] : g.edges) {
        Matrix h = spec.J * kron(z, z) + (spec.g / g.degree(a)) * kron(z, id) +
                   (spec.g / g.degree(b)) * kron(id, z);
        p.terms.emplace_back(std::move(h), std::vector<int>{a, b}, 2);
      }
      break;
    }
    case ModelKind::potts: {
      // diagonal ferromagnetic alignment term
      Matrix h = Matrix::Zero(d * d, d * d);
      for (int s = 0; s < d; ++s) h(s * d + s, s * d + s) = -spec.J;
      for (auto [a, b] : g.edges) {
        p.terms.emplace_back(h, std::vector<int>{a, b}, d);
      }
      break;
    }
    case ModelKind::random_commuting: {
      Rng rng(spec.seed);
      std::vector<Matrix> site_u;
      for (int v = 0; v < g.num_vertices(); ++v) site_u.push_back(random_unitary(d, rng));
      std::uniform_real_distribution<double> unif(-1.0, 1.0);
      for (auto [a, b] : g.edges) {
        RealVector diag(d * d);
        for (long k = 0; k < diag.size(); ++k) diag(k) = spec.J * unif(rng);
        Matrix u = kron(site_u[a], site_u[b]);
        Matrix h = u * diag.cast<Complex>().asDiagonal() * u.adjoint();
        p.terms.emplace_back(std::move(h), std::vector<int>{a, b}, d);
      }
      break;
    }
    case ModelKind::heisenberg: {
      if (d != 2) {
        throw config_error(fmt::format("heisenberg needs local dimension 2, got {}", d));
      }
      Matrix h = spec.Jx * kron(pauli_x(), pauli_x()) + spec.Jy * kron(pauli_y(), pauli_y()) +
                 spec.Jz * kron(pauli_z(), pauli_z());
      for (auto [a, b] : g.edges) {
        p.terms.emplace_back(h, std::vector<int>{a, b}, 2);
      }
      break;
    }
    case ModelKind::custom: {
      // collect terms per edge, summing duplicates
      std::map<std::pair<int, int>, Matrix> by_edge;
      for (const auto& t : spec.custom_terms) {
        if (t.support.size() != 2 || t.local_dim != d) {
          throw config_error("custom terms must live on single edges at the graph dimension");
        }
        std::pair<int, int> e{t.support[0], t.support[1]};
        if (!g.has_edge(e.first, e.second)) {
          throw config_error(
              fmt::format("custom term on ({},{}) which is not a graph edge", e.first, e.second));
        }
        double scale = std::max(1.0, t.matrix.norm());
        if ((t.matrix - t.matrix.adjoint()).norm() > 1e-12 * scale) {
          throw config_error("custom terms must be Hermitian");
        }
        auto [it, fresh] = by_edge.try_emplace(e, t.matrix);
        if (!fresh) it->second += t.matrix;
      }
      for (auto& [e, m] : by_edge) {
        p.terms.emplace_back(std::move(m), std::vector<int>{e.first, e.second}, d);
      }
      break;
    }
  }

  p.j_bound = 0.0;
  for (const auto& t : p.terms) p.j_bound = std::max(p.j_bound, op_norm(t.matrix));
  p.commuting = verify_commuting(g, p.terms);

  bool claims_commuting = spec.kind == ModelKind::ising || spec.kind == ModelKind::potts ||
                          spec.kind == ModelKind::random_commuting;
  if (claims_commuting && !p.commuting) {
    throw numeric_error("model family should commute but the measured commutators do not vanish");
  }
  return p;
}

DenseOperator hamiltonian_on(const Potential& p, const Region& a) {
  if (a.empty()) throw argument_error("hamiltonian_on: region must be nonempty");
  long dim = dense_dim(p.graph.local_dim, a.vertices.size());
  Matrix h = Matrix::Zero(dim, dim);
  for (const auto& t : p.terms) {
    if (contains_all(a.vertices, t.support)) {
      h += embed(t, a.vertices).matrix;
    }
  }
  return DenseOperator(std::move(h), a.vertices, p.graph.local_dim);
}

std::vector<std::pair<int, int>> crossing_edges(const SpinGraph& g, const Region& a,
                                                const Region& b) {
  std::vector<std::pair<int, int>> out;
  for (auto [x, y] : g.edges) {
    if ((a.contains(x) && b.contains(y)) || (a.contains(y) && b.contains(x))) {
      out.push_back({x, y});
    }
  }
  return out;
}

std::pair<QuantumState, double> gibbs_from_hamiltonian(const DenseOperator& h, double beta) {
  if (beta < 0.0) throw argument_error(fmt::format("inverse temperature {} must be >= 0", beta));
  Spectrum s = herm_eig(h.matrix);
  // log-sum-exp with the smallest exponent shifted to zero
  double shift = beta * s.eigenvalues.minCoeff();
  RealVector w(s.eigenvalues.size());
  for (long i = 0; i < w.size(); ++i) w(i) = std::exp(-(beta * s.eigenvalues(i) - shift));
  double z_shifted = w.sum();
  double log_z = std::log(z_shifted) - shift;
  Matrix rho = s.eigenvectors * (w / z_shifted).asDiagonal() * s.eigenvectors.adjoint();
  rho = 0.5 * (rho + rho.adjoint());
  rho /= rho.trace().real();
  return {QuantumState(DenseOperator(std::move(rho), h.support, h.local_dim)), log_z};
}

GibbsEnsemble::GibbsEnsemble(Potential p, double beta) : pot_(std::move(p)), beta_(beta) {
  if (beta < 0.0) throw argument_error(fmt::format("inverse temperature {} must be >= 0", beta));
}

const GibbsEnsemble::Entry& GibbsEnsemble::entry(const Region& a) const {
  std::lock_guard<std::mutex> guard(lock_);
  auto it = cache_.find(a.vertices);
  if (it == cache_.end()) {
    auto [state, log_z] = gibbs_from_hamiltonian(hamiltonian_on(pot_, a), beta_);
    it = cache_.emplace(a.vertices, Entry{std::move(state), log_z}).first;
  }
  return it->second;
}

const QuantumState& GibbsEnsemble::gibbs(const Region& a) const { return entry(a).state; }

double GibbsEnsemble::log_partition(const Region& a) const { return entry(a).log_z; }

namespace {

// shared assembly for the expansional and its inverse
DenseOperator expansional_impl(const GibbsEnsemble& e, const Region& a, const Region& b,
                               bool inverse) {
  if (!region_intersection(a, b).empty()) {
    throw argument_error("expansional: regions must be disjoint");
  }
  Region ab = region_union(a, b);
  const Potential& p = e.potential();
  Matrix h_ab = hamiltonian_on(p, ab).matrix;
  Matrix h_split = embed(hamiltonian_on(p, a), ab.vertices).matrix +
                   embed(hamiltonian_on(p, b), ab.vertices).matrix;
  double beta = e.beta();
  Matrix out;
  if (!inverse) {
    out = mat_exp(-beta * h_ab) * mat_exp(beta * h_split);
  } else {
    out = mat_exp(-beta * h_split) * mat_exp(beta * h_ab);
  }
  return DenseOperator(std::move(out), ab.vertices, p.graph.local_dim);
}

}  // namespace

DenseOperator expansional(const GibbsEnsemble& e, const Region& a, const Region& b) {
  return expansional_impl(e, a, b, false);
}

DenseOperator expansional_inverse(const GibbsEnsemble& e, const Region& a, const Region& b) {
  return expansional_impl(e, a, b, true);
}

LambdaResult lambda_abc(const GibbsEnsemble& e, const Region& a, const Region& b,
                        const Region& c) {
  if (!region_intersection(a, b).empty() || !region_intersection(b, c).empty() ||
      !region_intersection(a, c).empty()) {
    throw argument_error("lambda_abc: regions must be pairwise disjoint");
  }
  if (!crossing_edges(e.graph(), a, c).empty()) {
    throw argument_error("lambda_abc: B must shield A from C (direct A-C edge found)");
  }
  Region ab = region_union(a, b);
  Region bc = region_union(b, c);
  Region abc = region_union(ab, c);

  LambdaResult r;
  r.via_z = std::exp(e.log_partition(abc) + e.log_partition(b) - e.log_partition(ab) -
                     e.log_partition(bc));

  Matrix num_op = expansional_inverse(e, a, b).matrix;
  Complex num = (e.gibbs(ab).rho() * num_op).trace();
  Matrix den_op = expansional_inverse(e, a, bc).matrix;
  Complex den = (e.gibbs(abc).rho() * den_op).trace();
  r.via_trace = num.real() / den.real();
  return r;
}

}  // namespace rapidmix
