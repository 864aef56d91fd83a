#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include <rapidmix/davies.hpp>
#include <rapidmix/entropy_dynamics.hpp>
#include <rapidmix/tensorization.hpp>

using namespace rapidmix;

namespace {

ModelSpec ising(double j, double g) {
  ModelSpec spec;
  spec.kind = ModelKind::ising;
  spec.J = j;
  spec.g = g;
  return spec;
}

GibbsEnsemble chain_ens(int n, double beta, double j = 1.0, double g = 0.0) {
  SpinGraph graph = build_chain(n);
  return GibbsEnsemble(build_potential(graph, ising(j, g)), beta);
}

std::vector<int> label0_sites(const SpinGraph& g, const Coloring& col) {
  std::vector<int> out;
  for (int v = 0; v < g.num_vertices(); ++v) {
    if (col.labels[v] == 0) out.push_back(v);
  }
  return out;
}

Region interval(const SpinGraph& g, int a, int b) {
  std::vector<int> v;
  for (int x = a; x <= b; ++x) v.push_back(x);
  return Region(g, v);
}

// replaces one site of an n-site state with a fixed single-site state:
// out = one_site (at the site) tensor tr_site(rho) (on the rest)
Matrix replace_site(const Matrix& rho, int site, const Matrix& one_site, int n, int d) {
  long dim = rho.rows();
  long below = 1;
  for (int s = site + 1; s < n; ++s) below *= d;
  Matrix out = Matrix::Zero(dim, dim);
  for (long r = 0; r < dim; ++r) {
    long rs = (r / below) % d, rhi = r / (below * d), rlo = r % below;
    for (long c = 0; c < dim; ++c) {
      long cs = (c / below) % d, chi = c / (below * d), clo = c % below;
      Complex acc = 0.0;
      for (long k = 0; k < d; ++k) {
        acc += rho((rhi * d + k) * below + rlo, (chi * d + k) * below + clo);
      }
      out(r, c) = one_site(rs, cs) * acc;
    }
  }
  return out;
}

double fit_rate(const std::vector<double>& ts, const std::vector<double>& vals, double lo,
                double hi, int min_points = 5) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (vals[i] > lo && vals[i] < hi) {
      xs.push_back(ts[i]);
      ys.push_back(std::log(vals[i]));
    }
  }
  long m = static_cast<long>(xs.size());
  REQUIRE(m >= min_points);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (long i = 0; i < m; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return -slope;
}

}  // namespace

TEST_CASE("omega of the gibbs state is the gibbs state") {
  GibbsEnsemble e = chain_ens(5, 0.6);
  Coloring col = two_coloring(e.graph());
  QuantumState sigma = e.gibbs(full_region(e.graph()));

  OmegaState om = omega_state(sigma, e, col);
  CHECK(trace_norm(Matrix(om.omega.rho() - sigma.rho())) <= 1e-9);
  CHECK(om.residual < 1e-9);
  CHECK(om.gamma0.vertices == std::vector<int>{0, 2, 4});
}

TEST_CASE("omega of a decoupled model replaces label-0 sites locally") {
  // fields only: the gibbs state is a product, so each replacement acts on
  // its own site alone
  double beta = 0.5, g = 0.7;
  GibbsEnsemble e = chain_ens(4, beta, 0.0, g);
  Coloring col = two_coloring(e.graph());

  Rng rng(11);
  Matrix rho = random_density(16, rng);

  // oracle first: independent local replacement with the single-site gibbs
  // state exp(-beta g Z)/z
  Matrix loc = Matrix::Zero(2, 2);
  loc(0, 0) = std::exp(-beta * g);
  loc(1, 1) = std::exp(beta * g);
  loc /= loc.trace();
  Matrix expected = replace_site(replace_site(rho, 0, loc, 4, 2), 2, loc, 4, 2);

  OmegaState om = omega_state(QuantumState(rho, {0, 1, 2, 3}, 2), e, col);
  CHECK(trace_norm(Matrix(om.omega.rho() - expected)) <= 1e-9);
}

TEST_CASE("omega is order independent and invariant under each site replacement") {
  GibbsEnsemble e = chain_ens(7, 0.5);
  Coloring col = two_coloring(e.graph());
  Rng rng(5);
  Matrix rho = random_density(128, rng);
  QuantumState state(rho, {0, 1, 2, 3, 4, 5, 6}, 2);

  OmegaState om = omega_state(state, e, col);

  // two shuffled application orders agree with the vertex-order result
  for (const std::vector<int>& order :
       {std::vector<int>{4, 0, 6, 2}, std::vector<int>{6, 4, 2, 0}}) {
    Matrix cur = rho;
    for (int x : order) {
      ConditionalExpectation ce = schmidt_condexp(e, Region(e.graph(), {x}));
      cur = ce.schrodinger.apply(cur);
    }
    CHECK(trace_norm(Matrix(cur - om.omega.rho())) < 1e-9);
  }

  // invariance under each single-site expectation
  for (int x : {0, 2, 4, 6}) {
    ConditionalExpectation ce = schmidt_condexp(e, Region(e.graph(), {x}));
    CHECK(trace_norm(Matrix(ce.schrodinger.apply(om.omega.rho()) - om.omega.rho())) < 1e-9);
  }
}

TEST_CASE("omega state validates its operands") {
  GibbsEnsemble e = chain_ens(3, 0.4);
  Coloring col = two_coloring(e.graph());
  Rng rng(3);
  QuantumState wrong(random_density(4, rng), {0, 1}, 2);
  CHECK_THROWS_AS(omega_state(wrong, e, col), argument_error);

  QuantumState ok(random_density(8, rng), {0, 1, 2}, 2);
  Coloring bad;
  bad.labels = {0, 1};
  CHECK_THROWS_AS(omega_state(ok, e, bad), argument_error);
}

TEST_CASE("d_r vanishes at the gibbs state and matches a single covering region") {
  GibbsEnsemble e = chain_ens(5, 0.5);
  Coloring col = two_coloring(e.graph());
  QuantumState sigma = e.gibbs(full_region(e.graph()));

  OmegaState at_sigma = omega_state(sigma, e, col);
  std::vector<Region> sets = coarse_grain_sets(e.graph(), col, 2);
  DrResult zero = d_r(at_sigma, sets, e);
  CHECK(zero.total <= 1e-9);
  CHECK(zero.terms.size() == sets.size());

  // a single region covering everything reproduces the full-region entropy
  Rng rng(19);
  Matrix rho = random_density(32, rng);
  OmegaState om = omega_state(QuantumState(rho, {0, 1, 2, 3, 4}, 2), e, col);
  Region full = full_region(e.graph());

  // oracle first: direct relative entropy to the full replacement
  ConditionalExpectation full_ce = schmidt_condexp(e, full);
  double direct = relative_entropy(om.omega.rho(), full_ce.schrodinger.apply(om.omega.rho()));

  DrResult one = d_r(om, {full}, e);
  CHECK(one.total == doctest::Approx(direct).epsilon(1e-9));

  // adding regions never decreases the sum
  DrResult two = d_r(om, {full, sets[0]}, e);
  CHECK(two.total >= one.total - 1e-12);
  for (double t : two.terms) CHECK(t >= -1e-10);
}

TEST_CASE("d_r rejects regions whose boundary touches the label-0 sublattice") {
  GibbsEnsemble e = chain_ens(7, 0.5);
  Coloring col = two_coloring(e.graph());
  QuantumState sigma = e.gibbs(full_region(e.graph()));
  OmegaState om = omega_state(sigma, e, col);

  // boundary of [0,3] is {4}, a label-0 site
  CHECK_THROWS_AS(d_r(om, {interval(e.graph(), 0, 3)}, e), geometry_error);
}

TEST_CASE("d_r is additive up to the straddling boundary terms") {
  GibbsEnsemble e = chain_ens(9, 0.4);
  Coloring col = two_coloring(e.graph());
  Rng rng(23);
  Matrix rho = random_density(512, rng);
  OmegaState om = omega_state(QuantumState(rho, {0, 1, 2, 3, 4, 5, 6, 7, 8}, 2), e, col);

  std::vector<Region> sets = coarse_grain_sets(e.graph(), col, 2);
  Region a = interval(e.graph(), 0, 2), b = interval(e.graph(), 3, 6);
  Region ab = region_union(a, b);

  auto contained = [&](const Region& host) {
    std::vector<Region> out;
    for (const Region& r : sets) {
      if (contains_all(host.vertices, r.vertices)) out.push_back(r);
    }
    return out;
  };
  std::vector<Region> in_ab = contained(ab), in_a = contained(a), in_b = contained(b);
  std::vector<Region> straddle;
  for (const Region& r : in_ab) {
    bool meets_a = !region_intersection(r, a).empty();
    bool meets_b = !region_intersection(r, b).empty();
    if (meets_a && meets_b) straddle.push_back(r);
  }
  REQUIRE(in_ab.size() == 3);
  REQUIRE(straddle.size() == 2);

  double lhs = d_r(om, in_ab, e).total;
  double rhs = d_r(om, in_a, e).total + d_r(om, in_b, e).total + d_r(om, straddle, e).total;
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  CHECK(lhs > 1e-6);  // the splitting is exercised on a nontrivial state
}

TEST_CASE("exact tensorization over the label-0 singletons") {
  GibbsEnsemble e = chain_ens(5, 0.5);
  Coloring col = two_coloring(e.graph());
  Region gamma0(e.graph(), label0_sites(e.graph(), col));
  ConditionalExpectation joint = schmidt_condexp(e, gamma0);

  Rng rng(31);
  for (int t = 0; t < 3; ++t) {
    Matrix rho = random_density(32, rng);
    double lhs = relative_entropy(rho, joint.schrodinger.apply(rho));
    double rhs = 0.0;
    for (int x : gamma0.vertices) {
      ConditionalExpectation ce = schmidt_condexp(e, Region(e.graph(), {x}));
      rhs += relative_entropy(rho, ce.schrodinger.apply(rho));
    }
    CHECK(lhs <= rhs + 1e-9);
  }
}

TEST_CASE("projection before a coarse replacement never increases the entropy") {
  GibbsEnsemble e = chain_ens(7, 0.5);
  Coloring col = two_coloring(e.graph());
  std::vector<Region> sets = coarse_grain_sets(e.graph(), col, 2);

  Rng rng(37);
  Matrix rho = random_density(128, rng);
  OmegaState om = omega_state(QuantumState(rho, {0, 1, 2, 3, 4, 5, 6}, 2), e, col);

  for (const Region& r : sets) {
    ConditionalExpectation ce = schmidt_condexp(e, r);
    double after = relative_entropy(om.omega.rho(), ce.schrodinger.apply(om.omega.rho()));
    double before = relative_entropy(rho, ce.schrodinger.apply(rho));
    CHECK(after <= before + 1e-9);
  }
}

TEST_CASE("tensorization check passes trivially at the gibbs state") {
  GibbsEnsemble e = chain_ens(7, 0.4);
  Coloring col = two_coloring(e.graph());
  QuantumState sigma = e.gibbs(full_region(e.graph()));
  OmegaState om = omega_state(sigma, e, col);

  TensorizationReport rep =
      approx_tensorization_check(om, interval(e.graph(), 0, 2), interval(e.graph(), 2, 6), e);
  CHECK(rep.pass);
  CHECK(std::abs(rep.lhs) <= 1e-9);
  CHECK(std::abs(rep.rhs_c) <= 1e-9);
  CHECK(std::abs(rep.rhs_d) <= 1e-9);
  CHECK(rep.eta < 0.5);
  CHECK(rep.separation == 2);
}

TEST_CASE("mid-overlap split of a nine-site chain passes with positive slack") {
  GibbsEnsemble e = chain_ens(9, 0.4);
  Coloring col = two_coloring(e.graph());
  Rng rng(41);
  Matrix rho = random_density(512, rng);
  OmegaState om = omega_state(QuantumState(rho, {0, 1, 2, 3, 4, 5, 6, 7, 8}, 2), e, col);

  Region c = interval(e.graph(), 0, 4), d = interval(e.graph(), 2, 8);
  TensorizationReport rep = approx_tensorization_check(om, c, d, e);

  // oracle first: recompute both sides through the replacement expectations
  ConditionalExpectation ec = schmidt_condexp(e, c);
  ConditionalExpectation ed = schmidt_condexp(e, d);
  ConditionalExpectation eu = schmidt_condexp(e, region_union(c, d));
  double lhs = relative_entropy(om.omega.rho(), eu.schrodinger.apply(om.omega.rho()));
  double rhs_c = relative_entropy(om.omega.rho(), ec.schrodinger.apply(om.omega.rho()));
  double rhs_d = relative_entropy(om.omega.rho(), ed.schrodinger.apply(om.omega.rho()));

  CHECK(rep.lhs == doctest::Approx(lhs).epsilon(1e-9));
  CHECK(rep.rhs_c == doctest::Approx(rhs_c).epsilon(1e-9));
  CHECK(rep.rhs_d == doctest::Approx(rhs_d).epsilon(1e-9));
  CHECK(rep.separation == 4);
  CHECK(rep.eta < 0.5);
  CHECK(rep.eta == doctest::Approx(rep.clustering.max_value));
  CHECK(rep.slack > 0.0);
  CHECK(rep.pass);
  CHECK(rep.slack ==
        doctest::Approx((rhs_c + rhs_d) / (1.0 - 2.0 * rep.eta) - lhs).epsilon(1e-8));
}

TEST_CASE("at infinite temperature the check reduces to exact tensorization") {
  GibbsEnsemble e = chain_ens(7, 0.0);
  Coloring col = two_coloring(e.graph());
  Rng rng(43);
  Matrix rho = random_density(128, rng);
  OmegaState om = omega_state(QuantumState(rho, {0, 1, 2, 3, 4, 5, 6}, 2), e, col);

  TensorizationReport rep =
      approx_tensorization_check(om, interval(e.graph(), 0, 4), interval(e.graph(), 2, 6), e);
  CHECK(rep.eta <= 1e-9);
  CHECK(rep.pass);
  CHECK(rep.lhs <= rep.rhs_c + rep.rhs_d + 1e-8);
}

TEST_CASE("tensorization check names the violated hypothesis") {
  GibbsEnsemble e = chain_ens(9, 0.3);
  Coloring col = two_coloring(e.graph());
  QuantumState sigma = e.gibbs(full_region(e.graph()));
  OmegaState om = omega_state(sigma, e, col);
  const SpinGraph& g = e.graph();

  // non-convex C
  CHECK_THROWS_WITH_AS(
      approx_tensorization_check(om, Region(g, {0, 1, 4}), interval(g, 2, 8), e),
      doctest::Contains("C"), geometry_error);
  // boundary of C hits site 4, a label-0 vertex
  CHECK_THROWS_WITH_AS(approx_tensorization_check(om, interval(g, 0, 3), interval(g, 2, 8), e),
                       doctest::Contains("boundary of C"), geometry_error);
  // boundary of D hits site 2
  CHECK_THROWS_WITH_AS(approx_tensorization_check(om, interval(g, 0, 4), interval(g, 3, 8), e),
                       doctest::Contains("boundary of D"), geometry_error);
  // adjacent but non-overlapping parts: separation 1
  CHECK_THROWS_WITH_AS(approx_tensorization_check(om, interval(g, 0, 2), interval(g, 3, 8), e),
                       doctest::Contains("separation"), geometry_error);
}

TEST_CASE("high temperature reports all pass and serialize to json") {
  GibbsEnsemble e = chain_ens(7, 0.15);
  Coloring col = two_coloring(e.graph());
  Rng rng(47);
  Matrix rho = random_density(128, rng);
  OmegaState om = omega_state(QuantumState(rho, {0, 1, 2, 3, 4, 5, 6}, 2), e, col);

  const SpinGraph& g = e.graph();
  std::vector<CoveringPair> pairs = {{interval(g, 0, 2), interval(g, 2, 6)},
                                     {interval(g, 0, 4), interval(g, 4, 6)},
                                     {interval(g, 0, 4), interval(g, 2, 6)}};
  std::vector<TensorizationReport> reports = tensorization_reports(om, pairs, e);
  REQUIRE(reports.size() == 3);
  for (const TensorizationReport& rep : reports) {
    CHECK(rep.eta < 0.5);
    CHECK(rep.pass);
  }

  // batch output is deterministic under the threaded path
  std::vector<TensorizationReport> again = tensorization_reports(om, pairs, e);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    CHECK(reports[i].lhs == again[i].lhs);
    CHECK(reports[i].eta == again[i].eta);
    CHECK(reports[i].slack == again[i].slack);
  }

  nlohmann::json j = reports_to_json(reports);
  REQUIRE(j.is_array());
  REQUIRE(j.size() == 3);
  CHECK(j[0]["pair"]["c"] == std::vector<int>{0, 1, 2});
  CHECK(j[0]["pair"]["d"] == std::vector<int>{2, 3, 4, 5, 6});
  CHECK(j[0].contains("lhs"));
  CHECK(j[0].contains("slack"));
  CHECK(j[0]["pass"].get<bool>());
  REQUIRE(j[0]["blocks"].is_array());
  CHECK(j[0]["blocks"].size() == reports[0].clustering.blocks.size());
  for (const auto& blk : j[0]["blocks"]) {
    CHECK(blk.contains("label"));
    CHECK(blk.contains("value"));
  }
}

TEST_CASE("growth estimate is one for a single coarse set") {
  GibbsEnsemble e = chain_ens(9, 0.3);
  ClStage stage;
  stage.scale = 1;
  stage.segments = {interval(e.graph(), 0, 1)};

  std::vector<ClPoint> curve = c_of_l_estimate(e, {stage});
  REQUIRE(curve.size() == 1);
  CHECK(curve[0].c_hat == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(curve[0].usable > 0);
}

TEST_CASE("growth estimate stays bounded on a high temperature chain") {
  GibbsEnsemble e = chain_ens(9, 0.25);
  const SpinGraph& g = e.graph();
  std::vector<ClStage> schedule = {{2, {interval(g, 0, 2)}},
                                   {4, {interval(g, 0, 4)}},
                                   {8, {interval(g, 0, 8)}}};

  std::vector<ClPoint> curve = c_of_l_estimate(e, schedule);
  REQUIRE(curve.size() == 3);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].c_hat >= curve[i - 1].c_hat);
  for (const ClPoint& p : curve) {
    CHECK(p.usable > 0);
    CHECK(p.c_hat >= p.stage_max - 1e-12);
  }
  // boundedness at small beta: the largest scale stays within a constant
  // factor of the smallest
  CHECK(curve[2].c_hat <= 4.0 * std::max(curve[0].c_hat, 1.0));
}

TEST_CASE("growth estimate on binary trees grows at most linearly in height") {
  SpinGraph tree = build_bary_tree(2, 4);
  GibbsEnsemble e(build_potential(tree, ising(1.0, 0.0)), 0.25);

  // height-2 subtree below the root, and the same shape rooted at depth 2
  Region top = closure(tree, Region(tree, {0}), 3);  // root plus two levels
  REQUIRE(top.size() == 7);
  std::vector<int> deep = {3};
  for (int v : {7, 8, 15, 16, 17, 18}) deep.push_back(v);
  Region lower(tree, deep);

  std::vector<ClStage> schedule = {{2, {top}}, {4, {top, lower}}};
  ClOptions opts;
  opts.random_states = 8;
  std::vector<ClPoint> curve = c_of_l_estimate(e, schedule, opts);
  REQUIRE(curve.size() == 2);
  CHECK(curve[1].c_hat >= curve[0].c_hat);
  // linear growth margin: doubling the height at most doubles the constant
  CHECK(curve[1].c_hat <= 2.0 * curve[0].c_hat + 1e-9);
}

TEST_CASE("growth estimate flags a degenerate ensemble") {
  SpinGraph solo = build_custom(1, {});
  GibbsEnsemble e(build_potential(solo, ising(1.0, 0.0)), 0.5);
  ClStage stage;
  stage.scale = 0;
  stage.segments = {Region(solo, {0})};
  CHECK_THROWS_AS(c_of_l_estimate(e, {stage}), conditioning_error);
}

TEST_CASE("assembly formula and input validation") {
  CHECK(mlsi_assembly(1.0, 1.0, 1.0, 1) == doctest::Approx(0.5));
  CHECK(mlsi_assembly(0.8, 1.3, 2.0, 3) == doctest::Approx(0.8 / 12.0));
  // doubling the growth constant halves the bound
  CHECK(mlsi_assembly(1.0, 2.0, 4.0, 2) ==
        doctest::Approx(0.5 * mlsi_assembly(1.0, 2.0, 2.0, 2)));

  CHECK_THROWS_AS(mlsi_assembly(0.0, 1.0, 1.0, 1), argument_error);
  CHECK_THROWS_AS(mlsi_assembly(1.0, -0.1, 1.0, 1), argument_error);
  CHECK_THROWS_AS(mlsi_assembly(1.0, 1.0, 0.0, 1), argument_error);
  CHECK_THROWS_AS(mlsi_assembly(1.0, 1.0, 1.0, 0), argument_error);
}

TEST_CASE("assembled bound is dominated by every measured trajectory decay") {
  // full pipeline on a five-site chain: local ratio estimates, growth
  // constant, cover multiplicity, then trajectories of the global dynamics
  GibbsEnsemble e = chain_ens(5, 0.3);
  const SpinGraph& g = e.graph();
  Coloring col = two_coloring(g);
  QuantumState sigma = e.gibbs(full_region(g));

  std::vector<Region> sets = coarse_grain_sets(g, col, 2);
  int m = cover_multiplicity(g, sets);
  REQUIRE(m >= 1);

  auto local_estimate = [&](const Region& jump_region) {
    DaviesGenerator gen =
        davies_generator(e, closure(g, jump_region), chi_function("glauber", e.beta()));
    ConditionalExpectation ce = fixed_point_projection(gen.heisenberg, sigma);
    MlsiEstimate est = cmlsi_probe(gen.schrodinger, ce, 2, 700, 9);
    CHECK(est.ratio > 0.0);
    return est.ratio;
  };

  double alpha0 = infinity();
  for (int x : label0_sites(g, col)) {
    alpha0 = std::min(alpha0, local_estimate(Region(g, {x})));
  }
  double alpha1 = infinity();
  for (const Region& r : sets) alpha1 = std::min(alpha1, local_estimate(r));

  std::vector<ClStage> schedule = {{2, {interval(g, 0, 2)}}, {4, {interval(g, 0, 4)}}};
  std::vector<ClPoint> curve = c_of_l_estimate(e, schedule);
  double c_hat = curve.back().c_hat;
  REQUIRE(c_hat > 0.0);

  double bound = mlsi_assembly(alpha0, alpha1, c_hat, m);
  CHECK(bound > 0.0);

  // trajectories of the full davies dynamics from three starts
  DaviesGenerator full = davies_generator(e, full_region(g), chi_function("glauber", e.beta()));
  Rng rng(53);
  std::vector<Matrix> starts;
  Matrix basis = Matrix::Zero(32, 32);
  basis(0, 0) = 1.0;
  starts.push_back(basis);
  starts.push_back(random_density(32, rng));
  starts.push_back(Matrix(0.5 * random_density(32, rng) + 0.5 * sigma.rho()));

  std::vector<double> times;
  for (int k = 0; k <= 120; ++k) times.push_back(0.25 * k);
  for (const Matrix& rho0 : starts) {
    EvolveOptions opts;
    opts.sigma = sigma;
    Trajectory traj = evolve(full.schrodinger, QuantumState(rho0, {0, 1, 2, 3, 4}, 2), times, opts);
    double rate = fit_rate(traj.times, traj.rel_entropy, 1e-8, 1e-1);
    CHECK(bound <= rate + 1e-9);
  }
}

TEST_CASE("clustering scale probe reports decaying norms and the threshold scale") {
  GibbsEnsemble e = chain_ens(9, 0.35);
  ClusteringScaleResult res = min_clustering_scale(e, full_region(e.graph()), 6);

  REQUIRE(!res.separations.empty());
  for (std::size_t i = 0; i < res.separations.size(); ++i) {
    CHECK(res.separations[i] % 2 == 0);
    CHECK(res.etas[i] >= 0.0);
  }
  // at this temperature the norm is already below one half at the first
  // probed separation
  CHECK(res.l_min == res.separations.front());
  // larger separations do not cluster worse, up to solver noise
  for (std::size_t i = 1; i < res.etas.size(); ++i) {
    CHECK(res.etas[i] <= res.etas[i - 1] * 1.5 + 1e-8);
  }
}
