#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rapidmix/entropy_dynamics.hpp"
#include "rapidmix/schmidt.hpp"

namespace rapidmix {

// A source state projected with every single-site replacement expectation on
// the label-0 sublattice. The result is invariant under each of those
// expectations, and independent of the application order because expectations
// of sites at mutual distance two commute.
struct OmegaState {
  QuantumState source;  // input state on the ensemble's graph
  Region gamma0;        // label-0 vertices whose expectations were applied
  QuantumState omega;   // projected state
  double residual = 0.0;  // worst invariance defect over the label-0 sites
};

// Applies the single-site replacement expectations of all label-0 vertices in
// vertex order and verifies the invariance of the result (defect < 1e-9).
// The model must be commuting; errors from the replacement machinery
// propagate.
OmegaState omega_state(const QuantumState& rho, const GibbsEnsemble& ens,
                       const Coloring& coloring);

// Sum of relative entropies between omega and its per-region replacements.
struct DrResult {
  double total = 0.0;
  std::vector<double> terms;  // one per region, input order
};

// D_R = sum_k D(omega || E_{R_k*}(omega)) over the given coarse regions.
// Every region's exterior boundary must avoid the label-0 sublattice, so that
// its replacement commutes with the label-0 projection; violations raise a
// geometry error naming the region.
DrResult d_r(const OmegaState& om, const std::vector<Region>& regions,
             const GibbsEnsemble& ens);

// Outcome of one approximate-tensorization check on an overlapping region
// pair: D(omega||E_{CuD*}) <= [D(omega||E_{C*}) + D(omega||E_{D*})]/(1-2 eta).
struct TensorizationReport {
  Region c;
  Region d;
  int separation = 0;       // dist(C \ D, D \ C)
  double lhs = 0.0;         // D(omega || E_{CuD*}(omega))
  double rhs_c = 0.0;       // D(omega || E_{C*}(omega))
  double rhs_d = 0.0;       // D(omega || E_{D*}(omega))
  double eta = 0.0;         // measured clustering norm of the pair
  double slack = 0.0;       // (rhs_c + rhs_d)/(1 - 2 eta) - lhs
  bool pass = false;        // slack >= -1e-8 and eta < 1/2
  QNormResult clustering;   // per-block clustering values behind eta
};

// Checks the inequality hypotheses (C, D convex; the exterior boundaries of
// C, D, and C u D avoid the label-0 sublattice; separation > 1), measures the
// clustering norm, and evaluates both sides. Hypothesis violations raise a
// geometry error naming the violated set.
TensorizationReport approx_tensorization_check(const OmegaState& om, const Region& c,
                                               const Region& d, const GibbsEnsemble& ens);

// Batch of checks over covering pairs; independent pairs run in parallel.
std::vector<TensorizationReport> tensorization_reports(const OmegaState& om,
                                                       const std::vector<CoveringPair>& pairs,
                                                       const GibbsEnsemble& ens);

// Reports as a JSON array keyed by region pair, with per-block clustering
// values keyed by their block label.
nlohmann::json reports_to_json(const std::vector<TensorizationReport>& reports);

// One stage of a growth schedule: regions probed at a nominal scale. Larger
// scales may be represented by several embedded segments when the full region
// exceeds dense limits.
struct ClStage {
  int scale = 0;
  std::vector<Region> segments;
};

// Estimate at one schedule stage.
struct ClPoint {
  int scale = 0;
  double c_hat = 0.0;     // running maximum over stages up to this one
  double stage_max = 0.0; // largest ratio within this stage alone
  int usable = 0;         // ensemble members with denominators >= 1e-10
  int skipped = 0;        // members skipped for vanishing denominators
};

struct ClOptions {
  int random_states = 16;
  unsigned long seed = 7;
  int l0 = 2;  // coarse-graining radius; even so set boundaries avoid label 0
};

// Empirical growth curve of the smallest constant C with
// D(omega||E_{Gamma*}(omega)) <= C * D_Gamma(omega). Each segment is treated
// as its own open-boundary model built from the ensemble's interactions; the
// ratio is maximized over computational basis states plus random states, so
// the curve is a lower bound on the true constant. Reported as a running
// maximum across stages, mirroring the definition's supremum over all regions
// up to a scale. If every member of a stage has a vanishing denominator the
// ensemble is degenerate and a conditioning error is raised.
std::vector<ClPoint> c_of_l_estimate(const GibbsEnsemble& ens,
                                     const std::vector<ClStage>& schedule,
                                     const ClOptions& opts = {});

// min(alpha0, alpha1) / (2 m c): the decay bound assembled from the two local
// ratio estimates, the growth constant c, and the cover multiplicity m. All
// inputs must be positive.
double mlsi_assembly(double alpha0, double alpha1, double c, int m);

// Clustering-norm decay probe along a path-shaped target: for each even
// separation l, splits the path into an overlapping prefix/suffix pair whose
// parts end at label-0 vertices and measures the pair's clustering norm.
// l_min is the smallest probed separation with eta < 1/2, or -1 if none.
struct ClusteringScaleResult {
  std::vector<int> separations;
  std::vector<double> etas;
  int l_min = -1;
};

ClusteringScaleResult min_clustering_scale(const GibbsEnsemble& ens, const Region& target,
                                           int l_max);

}  // namespace rapidmix
