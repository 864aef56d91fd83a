#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "rapidmix/davies.hpp"

using namespace rapidmix;

namespace {

Matrix px() {
  Matrix m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

Matrix py() {
  Matrix m(2, 2);
  m << 0, Complex(0, -1), Complex(0, 1), 0;
  return m;
}

Matrix pz() {
  Matrix m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

ModelSpec ising(double j, double g = 0.0) {
  ModelSpec s;
  s.kind = ModelKind::ising;
  s.J = j;
  s.g = g;
  return s;
}

GibbsEnsemble chain_ensemble(int n, double beta, double j = 1.0, double g = 0.0) {
  SpinGraph graph = build_chain(n);
  return GibbsEnsemble(build_potential(graph, ising(j, g)), beta);
}

Matrix vec_of(const Matrix& x) { return Eigen::Map<const Matrix>(x.data(), x.size(), 1); }

// independent weighted conjugation: K = W L W^{-1}, W = kron(s^T, s), s = sigma^{1/4}
Matrix conjugated_dense(const Matrix& l_dense, const Matrix& sigma) {
  Matrix s4 = mat_pow(sigma, 0.25);
  Matrix s4i = mat_pow(sigma, -0.25);
  Matrix w = Eigen::kroneckerProduct(s4.transpose(), s4).eval();
  Matrix wi = Eigen::kroneckerProduct(s4i.transpose(), s4i).eval();
  return w * l_dense * wi;
}

}  // namespace

TEST_CASE("dense, apply, and picture flip of a structured generator agree") {
  GibbsEnsemble e = chain_ensemble(3, 0.6);
  DaviesGenerator gen = davies_generator(e, full_region(e.graph()), chi_function("glauber", 0.6));
  Matrix lh = gen.heisenberg.dense();
  Matrix ls = gen.schrodinger.dense();
  Rng rng(11);

  for (int t = 0; t < 5; ++t) {
    Matrix x = random_hermitian(8, rng);
    Matrix via_dense = Eigen::Map<const Matrix>(Matrix(lh * vec_of(x)).data(), 8, 8);
    CHECK((gen.heisenberg.apply(x) - via_dense).norm() <= 1e-10 * x.norm());
  }
  // the two pictures are adjoints of each other, and flipping realizes that
  CHECK((ls - lh.adjoint()).norm() <= 1e-12 * lh.norm());
  CHECK((gen.heisenberg.flipped().dense() - lh.adjoint()).norm() <= 1e-12 * lh.norm());

  Matrix id = Matrix::Identity(8, 8);
  CHECK(gen.heisenberg.apply(id).norm() <= 1e-10);
  for (int t = 0; t < 5; ++t) {
    Matrix rho = random_density(8, rng);
    CHECK(std::abs(gen.schrodinger.apply(rho).trace()) <= 1e-10);
  }

  CHECK_THROWS_AS(gen.heisenberg.apply(Matrix::Identity(4, 4)), argument_error);
  CHECK_THROWS_AS(
      Superoperator::from_apply({0}, 2, Picture::heisenberg, [](const Matrix& x) { return x; })
          .flipped(),
      argument_error);
}

TEST_CASE("energy-difference split: closed forms, merging, reconstruction") {
  Rng rng(5);

  // zero hamiltonian: everything sits at frequency zero
  Matrix s = random_hermitian(4, rng);
  auto flat = bohr_decompose(Matrix::Zero(4, 4), s);
  REQUIRE(flat.size() == 1);
  CHECK(flat[0].first == doctest::Approx(0.0));
  CHECK((flat[0].second - s).norm() <= 1e-12);

  // H = Z, S = X: raising and lowering parts at frequencies -2 and +2,
  // written out from the rank-one eigenprojectors of Z
  auto parts = bohr_decompose(pz(), px());
  REQUIRE(parts.size() == 2);
  Matrix lower(2, 2), raise(2, 2);
  lower << 0, 1, 0, 0;  // |0><1| : maps energy +1 content down, frequency -2
  raise << 0, 0, 1, 0;
  CHECK(parts[0].first == doctest::Approx(-2.0));
  CHECK((parts[0].second - lower).norm() <= 1e-12);
  CHECK(parts[1].first == doctest::Approx(2.0));
  CHECK((parts[1].second - raise).norm() <= 1e-12);

  // transitive merging of numerically split degeneracies
  Matrix h3 = Matrix::Zero(3, 3);
  h3(1, 1) = 1.0;
  h3(2, 2) = 1.0 + 1e-12;
  Matrix s3 = random_hermitian(3, rng);
  auto merged = bohr_decompose(h3, s3);
  CHECK(merged.size() == 3);

  // resolution of the identity: the pieces sum back to the operator
  Matrix h8 = random_hermitian(8, rng);
  Matrix s8 = random_hermitian(8, rng);
  auto pieces = bohr_decompose(h8, s8);
  Matrix total = Matrix::Zero(8, 8);
  for (auto& [omega, piece] : pieces) total += piece;
  CHECK((total - s8).norm() <= 1e-10 * s8.norm());
}

TEST_CASE("rate functions satisfy the balance identity") {
  for (const char* kind : {"glauber", "metropolis", "exp_half"}) {
    for (double beta : {0.0, 0.7, 2.0}) {
      ChiFunction chi = chi_function(kind, beta);
      for (double omega : {-3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 4.0}) {
        double lhs = chi(-omega);
        double rhs = std::exp(-beta * omega) * chi(omega);
        CHECK(std::abs(lhs - rhs) <= 1e-14 * (std::abs(lhs) + std::abs(rhs) + 1.0));
      }
    }
  }
  ChiFunction flat = chi_function(ChiKind::glauber, 0.0);
  CHECK(flat(-2.0) == doctest::Approx(0.5));
  CHECK(flat(3.7) == doctest::Approx(0.5));
  CHECK(chi_function(ChiKind::metropolis, 1.3)(0.0) == doctest::Approx(1.0));
  // scalar identity chi(-1) * (1 + e^2) = 1 at beta = 2
  CHECK(chi_function(ChiKind::glauber, 2.0)(-1.0) * (1.0 + std::exp(2.0)) ==
        doctest::Approx(1.0));
  CHECK_THROWS_AS(chi_function("boltzmann", 1.0), config_error);
  CHECK_THROWS_AS(chi_function(ChiKind::glauber, -0.1), argument_error);
}

TEST_CASE("single-qubit depolarizing generator at infinite temperature") {
  GibbsEnsemble e = chain_ensemble(1, 0.0);  // no edges: zero hamiltonian
  Region site(e.graph(), {0});
  DaviesGenerator gen = davies_generator(e, site, chi_function("glauber", 0.0));
  REQUIRE(gen.jumps.jumps.size() == 3);

  // oracle: on the Pauli basis L(s_a) = -4 r s_a with r = chi(0) = 1/2
  double r = 0.5;
  for (const Matrix& p : {px(), py(), pz()}) {
    CHECK((gen.heisenberg.apply(p) + 4.0 * r * p).norm() <= 1e-12);
  }
  CHECK(gen.heisenberg.apply(Matrix::Identity(2, 2)).norm() <= 1e-14);

  QuantumState sigma = e.gibbs(site);
  CHECK((sigma.rho() - 0.5 * Matrix::Identity(2, 2)).norm() <= 1e-12);

  GapResult gap = spectral_gap(gen.heisenberg, sigma);
  CHECK(gap.gap == doctest::Approx(4.0 * r).epsilon(1e-9));
  CHECK(gap.kernel_dim == 1);

  // metropolis at beta = 0 doubles every rate
  DaviesGenerator gen2 = davies_generator(e, site, chi_function("metropolis", 0.0));
  CHECK(spectral_gap(gen2.heisenberg, sigma).gap == doctest::Approx(4.0).epsilon(1e-9));

  // unique fixed point: the projection sends every state to sigma
  ConditionalExpectation ce = fixed_point_projection(gen.heisenberg, sigma);
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    Matrix rho = random_density(2, rng);
    CHECK(trace_norm(ce.schrodinger.apply(rho) - sigma.rho()) <= 1e-9);
  }

  // mixing-time bound from the gap: first time below 0.01 in trace distance
  Matrix ls = gen.schrodinger.dense();
  Matrix rho0 = Matrix::Zero(2, 2);
  rho0(0, 0) = 1.0;
  double eps = 0.01;
  double bound = (1.0 / gap.gap) * std::log(op_norm(mat_pow(sigma.rho(), -0.5)) / eps);
  double measured = -1.0;
  for (double t = 0.0; t <= 5.0; t += 0.01) {
    Matrix et = (t * ls).exp();
    Matrix rt = Eigen::Map<const Matrix>(Matrix(et * vec_of(rho0)).data(), 2, 2);
    if (trace_norm(rt - sigma.rho()) <= eps) {
      measured = t;
      break;
    }
  }
  REQUIRE(measured >= 0.0);
  CHECK(measured <= bound);
}

TEST_CASE("two-level generator with an energy splitting has a beta-free gap") {
  // H = Z on qubit 0 via a custom edge term; jumps only touch qubit 0
  SpinGraph g = build_chain(2);
  ModelSpec spec;
  spec.kind = ModelKind::custom;
  spec.custom_terms = {
      DenseOperator(Eigen::kroneckerProduct(pz(), Matrix::Identity(2, 2)), {0, 1}, 2)};
  double beta = 0.7;
  GibbsEnsemble e(build_potential(g, spec), beta);
  Region all = full_region(g);

  DaviesOptions opts;
  opts.jump_sites = {0};
  opts.couplings = {px()};
  DaviesGenerator gen = davies_generator(e, all, chi_function("glauber", beta), opts);

  // the X coupling splits into lowering/raising pieces at frequencies -2, +2
  REQUIRE(gen.jumps.jumps.size() == 2);
  ChiFunction chi = chi_function(ChiKind::glauber, beta);
  for (const Jump& j : gen.jumps.jumps) {
    CHECK(std::abs(std::abs(j.omega) - 2.0) <= 1e-9);
    CHECK(j.rate == doctest::Approx(chi(j.omega)).epsilon(1e-12));
  }
  // reconstruction of the coupling from the pieces
  Matrix sum = Matrix::Zero(4, 4);
  for (const Jump& j : gen.jumps.jumps) sum += embed(j.op, all.vertices).matrix;
  Matrix x0 = embed(DenseOperator(px(), {0}, 2), all.vertices).matrix;
  CHECK((sum - x0).norm() <= 1e-9 * x0.norm());
  // balance pairing: rate(-w) = e^{-beta w} rate(w), and glauber rates sum to 1
  CHECK(gen.jumps.jumps[0].rate + gen.jumps.jumps[1].rate == doctest::Approx(1.0));

  // oracle: gap = (chi(2) + chi(-2)) / 2 = 1/2 independent of beta; the
  // untouched qubit contributes a four-dimensional fixed-point space
  QuantumState sigma = e.gibbs(all);
  GapResult gap = spectral_gap(gen.heisenberg, sigma);
  CHECK(gap.gap == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(gap.kernel_dim == 4);

  ConditionalExpectation ce = fixed_point_projection(gen.heisenberg, sigma);
  REQUIRE(ce.fixed_basis.size() == 4);
  Rng rng(17);
  CeCheck res = check_conditional_expectation(ce, rng);
  CHECK(res.idempotence <= 1e-9);
  CHECK(res.unitality <= 1e-9);
  CHECK(res.state_preservation <= 1e-9);
  CHECK(res.choi_min_eig >= -1e-9);
  CHECK(res.modular_commutation <= 1e-8);
  CHECK(res.cross_adjoint <= 1e-9);

  // operators on the untouched qubit are fixed
  Matrix x1 = embed(DenseOperator(px(), {1}, 2), all.vertices).matrix;
  CHECK((ce.heisenberg.apply(x1) - x1).norm() <= 1e-9);
}

TEST_CASE("detailed balance holds for the right state and detects the wrong one") {
  GibbsEnsemble e = chain_ensemble(3, 0.5, 1.0, 0.4);
  Region all = full_region(e.graph());
  DaviesGenerator gen = davies_generator(e, all, chi_function("glauber", 0.5));
  QuantumState sigma = e.gibbs(all);

  CHECK(detailed_balance_residual(gen.heisenberg, sigma) <= 1e-9);
  CHECK(detailed_balance_residual(gen.schrodinger, sigma) <= 1e-9);

  // mismatched temperature must be flagged loudly
  GibbsEnsemble wrong = chain_ensemble(3, 0.8, 1.0, 0.4);
  CHECK(detailed_balance_residual(gen.heisenberg, wrong.gibbs(all)) > 1e-3);

  // zero generator
  Superoperator zero = Superoperator::lindblad({0, 1, 2}, 2, Picture::heisenberg,
                                               Matrix::Zero(8, 8), {});
  CHECK(detailed_balance_residual(zero, sigma) <= 1e-15);

  // GNS symmetry comes with KMS symmetry for the dissipative part
  Superoperator dis = gen.heisenberg.dissipative_part();
  Rng rng(23);
  double kms_resid = 0.0;
  for (int t = 0; t < 10; ++t) {
    Matrix x = random_hermitian(8, rng);
    Matrix y = random_hermitian(8, rng);
    x /= x.norm();
    y /= y.norm();
    Complex d = kms_inner(x, dis.apply(y), sigma.rho()) -
                kms_inner(dis.apply(x), y, sigma.rho());
    kms_resid = std::max(kms_resid, std::abs(d));
  }
  CHECK(kms_resid <= 1e-9);

  // non-commuting models go through the global frequency split and still
  // balance against their own gibbs state
  SpinGraph g2 = build_chain(2);
  ModelSpec heis;
  heis.kind = ModelKind::heisenberg;
  heis.Jx = 1.0;
  heis.Jy = 0.7;
  heis.Jz = 0.4;
  GibbsEnsemble e2(build_potential(g2, heis), 0.4);
  Region all2 = full_region(g2);
  DaviesGenerator gen2 = davies_generator(e2, all2, chi_function("glauber", 0.4));
  QuantumState sigma2 = e2.gibbs(all2);
  CHECK(detailed_balance_residual(gen2.heisenberg, sigma2) <= 1e-9);
  GapResult gap2 = spectral_gap(gen2.heisenberg, sigma2);
  CHECK(gap2.kernel_dim == 1);
  CHECK(gap2.gap > 0.0);
}

TEST_CASE("spectral gap against an independently conjugated dense matrix") {
  GibbsEnsemble e = chain_ensemble(4, 0.5);
  Region all = full_region(e.graph());
  DaviesGenerator gen = davies_generator(e, all, chi_function("glauber", 0.5));
  QuantumState sigma = e.gibbs(all);

  GapResult gap = spectral_gap(gen.heisenberg, sigma);
  CHECK(gap.kernel_dim == 1);

  // oracle: conjugate the dense dissipative generator by hand and eigensolve
  Matrix k = conjugated_dense(gen.heisenberg.dissipative_part().dense(), sigma.rho());
  CHECK((k - k.adjoint()).norm() <= 1e-8 * k.norm());
  k = 0.5 * (k + Matrix(k.adjoint()));
  Eigen::SelfAdjointEigenSolver<Matrix> es(k, Eigen::EigenvaluesOnly);
  RealVector lam = -es.eigenvalues();
  double scale = lam.cwiseAbs().maxCoeff();
  int kernel = 0;
  double gap_oracle = infinity();
  for (long i = 0; i < lam.size(); ++i) {
    if (lam(i) < 1e-10 * scale) {
      ++kernel;
    } else {
      gap_oracle = std::min(gap_oracle, lam(i));
    }
  }
  CHECK(kernel == 1);
  CHECK(gap.gap == doctest::Approx(gap_oracle).epsilon(1e-8));

  // iterative route on the same operator: largest decay rate, then the gap
  // with the stationary direction deflated
  long n2 = k.rows();
  auto apply_neg = [&](const Vector& v) { return Vector(-(k * v)); };
  double lam_max = lanczos_largest(apply_neg, n2, {}, nullptr, 1e-10);
  CHECK(lam_max == doctest::Approx(lam.maxCoeff()).epsilon(1e-7));
  Matrix half = mat_sqrt(sigma.rho());
  Vector kvec = Eigen::Map<const Vector>(half.data(), half.size());
  kvec.normalize();
  auto apply_shift = [&](const Vector& v) { return Vector(lam_max * v + k * v); };
  double mu = lanczos_largest(apply_shift, n2, {kvec}, nullptr, 1e-10);
  CHECK(lam_max - mu == doctest::Approx(gap_oracle).epsilon(1e-6));
}

TEST_CASE("fixed points: locality, frustration freeness, conditioning guard") {
  // locality: with a commuting potential the single-site term built from the
  // global energy split agrees with the one built from the radius-2 ball
  GibbsEnsemble e = chain_ensemble(5, 0.6);
  Region all = full_region(e.graph());
  DaviesOptions local_opts;
  local_opts.jump_sites = {2};
  DaviesGenerator local = davies_generator(e, all, chi_function("glauber", 0.6), local_opts);

  DaviesOptions global_opts = local_opts;
  global_opts.bohr_region = all;
  DaviesGenerator global = davies_generator(e, all, chi_function("glauber", 0.6), global_opts);

  DaviesOptions ball_opts = local_opts;
  Region b1 = closure(e.graph(), Region(e.graph(), {2}), 2);
  ball_opts.bohr_region = closure(e.graph(), b1, 2);
  DaviesGenerator ball = davies_generator(e, all, chi_function("glauber", 0.6), ball_opts);

  Rng rng(29);
  for (int t = 0; t < 5; ++t) {
    Matrix x = random_hermitian(32, rng);
    Matrix ref = global.heisenberg.apply(x);
    CHECK((local.heisenberg.apply(x) - ref).norm() <= 1e-9 * (ref.norm() + 1.0));
    CHECK((ball.heisenberg.apply(x) - ref).norm() <= 1e-9 * (ref.norm() + 1.0));
  }

  // frustration freeness: the global gibbs state is stationary for the
  // generator that only jumps inside a subregion
  GibbsEnsemble e4 = chain_ensemble(4, 0.5);
  Region all4 = full_region(e4.graph());
  DaviesOptions sub;
  sub.jump_sites = {0, 1};
  sub.include_hamiltonian = false;
  DaviesGenerator lsub = davies_generator(e4, all4, chi_function("glauber", 0.5), sub);
  CHECK(trace_norm(lsub.schrodinger.apply(e4.gibbs(all4).rho())) <= 1e-9);

  // fixed points of the full-region generator are fixed by the subregion one
  QuantumState sigma4 = e4.gibbs(all4);
  ConditionalExpectation full_ce =
      fixed_point_projection(davies_generator(e4, all4, chi_function("glauber", 0.5)).heisenberg,
                             sigma4);
  for (const Matrix& fp : full_ce.fixed_basis) {
    CHECK(lsub.heisenberg.apply(fp).norm() <= 1e-9 * (fp.norm() + 1.0));
  }

  // a non-primitive local generator still projects idempotently
  GibbsEnsemble e3 = chain_ensemble(3, 0.5);
  Region all3 = full_region(e3.graph());
  DaviesOptions one_site;
  one_site.jump_sites = {1};
  one_site.include_hamiltonian = false;
  DaviesGenerator lx = davies_generator(e3, all3, chi_function("glauber", 0.5), one_site);
  QuantumState sigma3 = e3.gibbs(all3);
  ConditionalExpectation ce = fixed_point_projection(lx.heisenberg, sigma3);
  CHECK(ce.fixed_basis.size() > 1);
  Rng rng3(31);
  CeCheck res = check_conditional_expectation(ce, rng3);
  CHECK(res.idempotence <= 1e-9);
  CHECK(res.unitality <= 1e-9);
  CHECK(res.state_preservation <= 1e-9);
  CHECK(res.choi_min_eig >= -1e-9);
  CHECK(res.modular_commutation <= 1e-8);

  // conditioning guard: a rate hierarchy that buries one decay direction
  // between the kernel threshold and a thousandth of the gap
  std::vector<std::pair<Matrix, double>> jumps;
  Matrix id2 = Matrix::Identity(2, 2);
  for (const Matrix& p : {px(), py(), pz()}) {
    jumps.emplace_back(Eigen::kroneckerProduct(p, id2).eval(), 1.0);
  }
  jumps.emplace_back(Eigen::kroneckerProduct(id2, px()).eval(), 1e-10);
  jumps.emplace_back(Eigen::kroneckerProduct(id2, py()).eval(), 1e-10);
  jumps.emplace_back(Eigen::kroneckerProduct(id2, pz()).eval(), 1e-7);
  Superoperator tricky = Superoperator::lindblad({0, 1}, 2, Picture::heisenberg,
                                                 Matrix::Zero(4, 4), jumps);
  QuantumState flat(0.25 * Matrix::Identity(4, 4), {0, 1}, 2);
  CHECK_THROWS_AS(fixed_point_projection(tricky, flat), conditioning_error);
}

TEST_CASE("the semigroup is completely positive and unital") {
  GibbsEnsemble e = chain_ensemble(2, 0.5);
  Region all = full_region(e.graph());
  DaviesGenerator gen = davies_generator(e, all, chi_function("glauber", 0.5));
  Matrix lh = gen.heisenberg.dense();
  Matrix id = Matrix::Identity(4, 4);
  for (double t : {0.1, 1.0, 10.0}) {
    Matrix et = (t * lh).exp();
    Superoperator semi = Superoperator::from_dense(all.vertices, 2, Picture::heisenberg, et);
    CHECK((semi.apply(id) - id).norm() <= 1e-9);
    Matrix c = choi_matrix(semi);
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (c + Matrix(c.adjoint())),
                                             Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("jump sets reconstruct couplings and pair their rates") {
  double beta = 0.8;
  GibbsEnsemble e = chain_ensemble(4, beta);
  Region all = full_region(e.graph());
  DaviesGenerator gen = davies_generator(e, all, chi_function("metropolis", beta));

  // group by (site, coupling); within a group all pieces share their support
  std::map<std::pair<int, int>, std::vector<const Jump*>> groups;
  for (const Jump& j : gen.jumps.jumps) {
    CHECK(j.rate > 0.0);
    groups[{j.site, j.coupling}].push_back(&j);
  }
  std::vector<Matrix> defaults = default_couplings(2);
  for (auto& [key, list] : groups) {
    const std::vector<int>& sup = list.front()->op.support;
    Matrix sum = Matrix::Zero(list.front()->op.dim(), list.front()->op.dim());
    for (const Jump* j : list) {
      REQUIRE(j->op.support == sup);
      sum += j->op.matrix;
    }
    Matrix target = embed(DenseOperator(defaults[key.second], {key.first}, 2), sup).matrix;
    CHECK((sum - target).norm() <= 1e-9 * target.norm());

    // every frequency has a balance partner with the matching rate
    for (const Jump* j : list) {
      bool found = false;
      for (const Jump* k : list) {
        if (std::abs(k->omega + j->omega) <= 1e-8) {
          found = true;
          CHECK(std::abs(k->rate - std::exp(-beta * j->omega) * j->rate) <=
                1e-10 * (1.0 + k->rate));
        }
      }
      CHECK(found);
    }
  }
}

TEST_CASE("construction guards: region, couplings, resource limits") {
  GibbsEnsemble e = chain_ensemble(3, 0.5);
  Region all = full_region(e.graph());
  ChiFunction chi = chi_function(ChiKind::glauber, 0.5);

  DaviesOptions bad_site;
  bad_site.jump_sites = {7};
  CHECK_THROWS_AS(davies_generator(e, all, chi, bad_site), argument_error);

  DaviesOptions bad_coupling;
  bad_coupling.couplings = {Matrix::Zero(3, 3)};
  CHECK_THROWS_AS(davies_generator(e, all, chi, bad_coupling), argument_error);

  Matrix skew(2, 2);
  skew << 0, 1, 0, 0;
  DaviesOptions non_herm;
  non_herm.couplings = {skew};
  CHECK_THROWS_AS(davies_generator(e, all, chi, non_herm), argument_error);

  // eight qubits pass only in apply-only mode
  GibbsEnsemble big = chain_ensemble(8, 0.3);
  Region ball(big.graph(), {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK_THROWS_AS(davies_generator(big, ball, chi_function(ChiKind::glauber, 0.3)),
                  resource_error);
  DaviesOptions apply_only;
  apply_only.apply_only = true;
  apply_only.jump_sites = {3};
  DaviesGenerator gen = davies_generator(big, ball, chi_function(ChiKind::glauber, 0.3),
                                         apply_only);
  CHECK_FALSE(gen.heisenberg.dense_available());
  CHECK(gen.heisenberg.apply(Matrix::Identity(256, 256)).norm() <= 1e-9);
  Rng rng(41);
  Matrix rho = random_density(256, rng);
  CHECK(std::abs(gen.schrodinger.apply(rho).trace()) <= 1e-10);
}
