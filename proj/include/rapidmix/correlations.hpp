#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rapidmix/hamiltonian.hpp"
#include "rapidmix/operator_core.hpp"

namespace rapidmix {

enum class InnerKind { gns, kms };

InnerKind inner_kind_from_string(const std::string& name);

// Outcome of comparing two positive operators through the multiplicative
// similarity relation: epsilon = ||w^{1/2} t^+ w^{1/2} - P||_inf on the
// support of t, together with the max-relative entropies in both directions.
struct SimilarityResult {
  double epsilon = 0.0;
  double dmax = 0.0;          // D_max(omega || tau)
  double dmax_reverse = 0.0;  // D_max(tau || omega)
  bool support_equal = true;
};

// Alternating-maximization estimate of sup Cov over unit-norm self-adjoint
// observables, with the trace-distance certificate ||s_AC - s_A x s_C||_1.
// The certificate is an exact upper bound for the GNS covariance.
struct CovarianceBound {
  double value = 0.0;
  double certificate = 0.0;
  int iterations = 0;
};

struct ScanSample {
  int l = 0;
  double value = 0.0;
  int boundary_a = 0;
  int boundary_c = 0;
};

// Exponential fit log(value) = log(prefactor) - rate * l over the strictly
// positive samples. exact_zero flags scans where every value sits below the
// numerical floor; fitted is false when fewer than 3 usable points remain.
struct DecayFit {
  std::vector<ScanSample> samples;
  double rate = 0.0;
  double prefactor = 0.0;
  double r_squared = 0.0;
  int window_lo = 0;
  int window_hi = 0;
  bool fitted = false;
  bool exact_zero = false;
};

// Fits the exponential model to an existing sample list and returns the
// completed fit (rate, prefactor, r_squared, window); used by decay_scan and
// by any caller with its own (l, value) series.
DecayFit fit_exponential(std::vector<ScanSample> samples);

enum class DecayMeasure {
  covariance_sup,
  l2_clustering,
  local_indist,
  strong_local_indist,
  mixing_condition,
  mutual_information,
  sli_epsilon,     // similarity epsilon between the two marginals of the SLI
  mixing_epsilon,  // similarity epsilon between s_AC and s_A x s_C
};

DecayMeasure decay_measure_from_string(const std::string& name);
std::string to_string(DecayMeasure m);

// Covariance of two self-adjoint observables under the chosen weighted inner
// product, centered at their means; returns the real part.
double covariance(const QuantumState& sigma, const DenseOperator& f,
                  const DenseOperator& g, InnerKind kind = InnerKind::gns);

// sup over self-adjoint f on a, g on c with ||f||,||g|| <= 1. Each half-step
// is exact (the optimizer is the sign unitary of the partial-traced effective
// operator); restarts many random initial observables.
CovarianceBound covariance_sup(const QuantumState& sigma, const Region& a,
                               const Region& c, InnerKind kind = InnerKind::gns,
                               int restarts = 8, unsigned seed = 0);

// sup Cov(f,g) / (||f||_{2,s} ||g||_{2,s}) over self-adjoint observables,
// evaluated exactly as the top generalized singular value of the centered
// cross-Gram in coefficient space (GNS weighting).
double l2_clustering_value(const QuantumState& sigma, const Region& a,
                           const Region& c);

// || tr_BC s^{ABC} - tr_B s^{AB} ||_1; b must shield a from c.
double local_indist(const GibbsEnsemble& ens, const Region& a, const Region& b,
                    const Region& c);

// || (tr_B s^{AB})^{-1/2} tr_BC s^{ABC} (tr_B s^{AB})^{-1/2} - 1 ||_inf with
// generalized inverses. one_sided asks for || w t^+ - P ||_inf instead.
double strong_local_indist(const GibbsEnsemble& ens, const Region& a,
                           const Region& b, const Region& c,
                           bool one_sided = false);

// || s_AC (s_A x s_C)^{-1} - 1 ||_inf; singular marginals raise domain errors.
double mixing_condition(const QuantumState& sigma, const Region& a,
                        const Region& c);

// I(A:C) = D(s_AC || s_A x s_C) and its max-relative-entropy analogue.
double mutual_information(const QuantumState& sigma, const Region& a,
                          const Region& c);
double max_mutual_information(const QuantumState& sigma, const Region& a,
                              const Region& c);

// Similarity of two positive semidefinite matrices on the same space.
SimilarityResult similarity_matrices(const Matrix& omega, const Matrix& tau);

// Similarity of two states; the states must share support sites.
SimilarityResult similarity(const QuantumState& omega, const QuantumState& tau);

// Hermitian product-operator basis on a region excluding the identity string
// (tensor strings of the generalized Gell-Mann basis; Pauli strings for
// qubits). Size d^{2|r|} - 1.
std::vector<DenseOperator> observable_basis(const Region& r, int local_dim);

struct RelationCheckOptions {
  long dim = 6;              // matrix size for the sampled positive operators
  int samples = 24;          // draws per property
  unsigned seed = 7;
  double max_epsilon = 0.3;  // sampled relation strengths lie in (0, max]
  int chain_length = 4;      // K for the chained-composition bound
  long dim_left = 3;         // tensor-factor sizes for partial-trace checks
  long dim_right = 4;
};

struct RelationPropertyResult {
  std::string property;
  int samples = 0;
  double worst_excess = 0.0;  // max over samples of measured - stated bound
  bool pass = true;
};

struct RelationReport {
  std::vector<RelationPropertyResult> properties;
  std::vector<std::string> failures;
  bool all_pass = true;
};

// Samples random positive-operator families and measures each algebraic
// property of the similarity relation (symmetry, transitivity, tensoring,
// projected partial traces, normalization, chained composition) against its
// stated bound. Failures are recorded per property, never thrown.
RelationReport relation_properties_check(const RelationCheckOptions& opt = {});

// Scan layout: fixed region a, one probe region per distance.
struct ScanGeometry {
  Region domain;
  Region a;
  std::vector<std::pair<int, Region>> points;  // (l, c-region)
};

// Builds a scan where c consists of the first c_size vertices at distance
// exactly l from a, for each l in [l_min, l_max].
ScanGeometry sliding_scan_geometry(const SpinGraph& g, const Region& domain,
                                   const Region& a, int c_size, int l_min,
                                   int l_max);

// Evaluates one decay measure across the scan geometry and fits the decay
// rate. Points run in parallel when RAPIDMIX_THREADS allows, with a
// deterministic seed per point.
DecayFit decay_scan(const GibbsEnsemble& ens, DecayMeasure measure,
                    const ScanGeometry& geometry, unsigned seed = 0);

// CSV rows (with header) for a completed scan.
std::string scan_csv(const DecayFit& fit, DecayMeasure measure, double beta,
                     const std::string& model_hash);

}  // namespace rapidmix
