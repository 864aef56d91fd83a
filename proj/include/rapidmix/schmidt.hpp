#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rapidmix/davies.hpp"
#include "rapidmix/hamiltonian.hpp"
#include "rapidmix/lattice.hpp"
#include "rapidmix/operator_core.hpp"

namespace rapidmix {

// Schmidt factorization of one edge interaction weight exp(-beta h_e) as
// sum_s left[s] (x) right[s] with Hilbert-Schmidt-orthogonal factors scaled so
// that ||left[s]||_F = ||right[s]||_F = sqrt(singular_values[s]).
struct EdgeFactorization {
  std::pair<int, int> edge{0, 0};
  std::vector<Matrix> left;              // factors on the smaller endpoint
  std::vector<Matrix> right;             // factors on the larger endpoint
  std::vector<double> singular_values;   // positive, descending
  int rank() const { return static_cast<int>(singular_values.size()); }
};

// Realignment-SVD factorization of the interaction weight on one graph edge.
EdgeFactorization edge_schmidt_decompose(const GibbsEnsemble& ens, std::pair<int, int> edge);

// Joint block structure of the edge factor algebras meeting one boundary site:
// projectors onto the minimal central blocks, and per block an isometry whose
// columns realize the tensor factorization of the block (one factor per listed
// neighbor, then a trailing commutant core factor; first factor most
// significant in the column index).
struct SiteBlocks {
  int site = 0;
  std::vector<int> neighbors;                 // across non-inert edges, ascending
  std::vector<bool> inner;                    // neighbor lies inside the region
  std::vector<Matrix> projectors;             // orthogonal, sum to the identity
  std::vector<Matrix> isometries;             // local_dim x block rank
  std::vector<std::vector<int>> factor_dims;  // per block: neighbor dims + core dim
  int num_blocks() const { return static_cast<int>(projectors.size()); }
};

// Block data for every effective boundary site of a region. Edges whose
// interaction weight is proportional to the identity carry no boundary algebra
// and are pruned; a site joins the boundary only through its remaining edges.
struct BoundaryBlocks {
  Region region;                  // the replaced region
  Region shell;                   // region plus its effective boundary
  std::vector<SiteBlocks> sites;  // one entry per boundary site, ascending
  long num_conditions() const;    // product of per-site block counts
};

// Builds the boundary block structure; requires a commuting potential.
BoundaryBlocks build_boundary_blocks(const GibbsEnsemble& ens, const Region& a);

// One fixed boundary condition: a block index per boundary site. The isometry
// maps the (inner x outer) factor space into the shell space with inner factor
// indices most significant; tau is the state induced on the inner factor space
// by the local shell Gibbs state, and weight its probability under that state.
struct ShellCondition {
  std::vector<int> alpha;
  Matrix isometry;   // shell_dim x (din * dout)
  Matrix tau;        // din x din, unit trace; empty when degenerate
  double weight = 0.0;
  long din = 1;
  long dout = 1;
  bool degenerate = false;
};

// Enumerates all boundary conditions of the block structure in lexicographic
// order of alpha (last site fastest).
std::vector<ShellCondition> shell_conditions(const GibbsEnsemble& ens,
                                             const BoundaryBlocks& blocks);

// The state tau^{(alpha)} of one boundary condition, embedded in the shell as
// isometry (tau (x) 1/dout) isometry^dagger. Throws on a degenerate condition.
QuantumState tau_state(const GibbsEnsemble& ens, const Region& a, const std::vector<int>& alpha);

enum class SchmidtMethod { kms_projection, block_formula };

SchmidtMethod schmidt_method_from_string(const std::string& name);
std::string to_string(SchmidtMethod method);

// Conditional expectation replacing region a inside the global Gibbs state:
// either the KMS-orthogonal projection onto the invariant subalgebra
// (kms_projection; small systems) or the assembled per-condition block formula
// (block_formula; scales to larger graphs). Both act on the whole graph.
ConditionalExpectation schmidt_condexp(const GibbsEnsemble& ens, const Region& a,
                                       SchmidtMethod method = SchmidtMethod::block_formula);

// Linear basis of the invariant subalgebra fixed by the replacement of region
// a: identity on a, outer edge factor algebras at the boundary, everything
// beyond the shell free. The basis is KMS-orthonormal for the global Gibbs
// state. Small systems only.
struct SchmidtAlgebra {
  Region region;
  std::vector<Matrix> basis;
};

SchmidtAlgebra build_schmidt_algebra(const GibbsEnsemble& ens, const Region& a);

// Heisenberg-picture generator sum_{x in a} (E_x - id) of single-site
// replacements; dense when the dimension allows, apply-backed beyond.
Superoperator schmidt_lindbladian(const GibbsEnsemble& ens, const Region& a);

enum class RegionRelation { separated, nested, adjacent };

// Composition residuals of the replacement expectations of two regions,
// measured as sup over random probes of operator-norm differences relative to
// the probe norm. vs_union compares E1 E2 with the union expectation
// (separated regions); vs_outer compares E_big E_small with E_big (nested).
struct CommutationCheck {
  RegionRelation relation = RegionRelation::separated;
  double commutator = 0.0;
  double vs_union = 0.0;
  double vs_outer = 0.0;
};

CommutationCheck condexp_commutation_check(const GibbsEnsemble& ens, const Region& a1,
                                           const Region& a2, int probes = 6,
                                           unsigned long seed = 17);

// Relative entropies of rho with respect to its images under the Davies
// expectation on x, the Schmidt expectation on x, and the Davies expectation
// on the padded region closure(x). Throws when the sandwich ordering
// d_davies <= d_schmidt <= d_davies_padded fails beyond tolerance.
struct SandwichResult {
  double d_davies = 0.0;
  double d_schmidt = 0.0;
  double d_davies_padded = 0.0;
};

SandwichResult sandwich_check(const GibbsEnsemble& ens, const Region& x, const QuantumState& rho);

// Clustering norm of E_c E_d - E_{c union d} on one boundary condition of the
// union region, as a map from the trace-normalized positive cone into the
// operator norm. Degenerate conditions are skipped and noted.
struct BlockNormValue {
  std::vector<int> alpha;
  double value = 0.0;
  double weight = 0.0;
  bool skipped = false;
  int iterations = 0;
};

struct QNormResult {
  std::vector<BlockNormValue> blocks;
  double max_value = 0.0;
  std::vector<std::string> notes;
};

// Alternating maximization over positive rank-one inputs with deterministic
// restarts; c and d must overlap.
QNormResult q_l1_linf_norm(const GibbsEnsemble& ens, const Region& c, const Region& d,
                           int restarts = 16, unsigned long seed = 5);

// Exhaustive deterministic seed grid (basis vectors, pair superpositions, tau
// eigenvectors), each polished by the alternating iteration. Small blocks only.
QNormResult q_l1_linf_grid_oracle(const GibbsEnsemble& ens, const Region& c, const Region& d);

// Block structure dump: per site the projector ranks and factor dimensions.
nlohmann::json blocks_to_json(const BoundaryBlocks& blocks);

}  // namespace rapidmix
