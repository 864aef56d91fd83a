#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rapidmix/davies.hpp"
#include "rapidmix/lattice.hpp"
#include "rapidmix/operator_core.hpp"

namespace rapidmix {

// Weight a density operator may carry outside the reference support before
// the relative entropy is declared infinite.
inline constexpr double kSupportSentinel = 1e-12;

// Eigenvalue floor applied when a logarithm of a singular state is needed.
inline constexpr double kEntropyFloor = 1e-12;

// Per-step local error target of the adaptive integrator.
inline constexpr double kOdeLocalTol = 1e-9;

// Raw trace drift at which an integrated trajectory is rejected.
inline constexpr double kTraceDriftTol = 1e-8;

// Width of the final mixing-time bracket, in time units.
inline constexpr double kBisectTimeTol = 1e-3;

// Default evolution horizon, as a multiple of the inverse spectral gap.
inline constexpr double kHorizonGapMultiple = 20.0;

// Largest Hilbert-space dimension for which dense superoperator propagation
// and the entropy-ratio optimizer are allowed.
inline constexpr long kDynamicsDimLimit = 64;

// Umegaki relative entropy D(rho || tau) = Tr[rho (log rho - log tau)],
// evaluated spectrally on the support of tau; returns +inf when rho has more
// than kSupportSentinel weight outside that support.
double relative_entropy(const Matrix& rho, const Matrix& tau);

inline double relative_entropy(const QuantumState& rho, const QuantumState& tau) {
  return relative_entropy(rho.rho(), tau.rho());
}

// D_max(rho || tau) = log || tau^{-1/2} rho tau^{-1/2} ||_inf with
// generalized inverses, +inf on support violation.
double max_relative_entropy(const Matrix& rho, const Matrix& tau);

// log(m) with eigenvalues floored at kEntropyFloor; sets *floored when any
// eigenvalue had to be lifted to the floor.
Matrix floored_log(const Matrix& m, bool* floored = nullptr);

// Residual |D(rho||sigma) - D(rho||E_*(rho)) - D(E_*(rho)||sigma)| of the
// conditional-expectation chain rule. Requires E_*(sigma) = sigma.
double chain_rule_check(const QuantumState& rho, const ConditionalExpectation& e,
                        const QuantumState& sigma);

struct EntropyProduction {
  double value = 0.0;        // -Tr[L_*(rho) (log rho - log E_*(rho))]
  double rel_entropy = 0.0;  // D(rho || E_*(rho)) with the same floor
  bool floored = false;      // rho (or its projection) needed the eigenvalue floor
};

// Entropy production of the Schroedinger-picture generator l at rho, relative
// to its fixed-point conditional expectation e.
EntropyProduction entropy_production(const Superoperator& l, const QuantumState& rho,
                                     const ConditionalExpectation& e);

struct MlsiEstimate {
  double ratio = 0.0;          // smallest sampled EP/D: an upper bound on alpha
  Matrix minimizer;            // density matrix attaining the ratio
  double entropy_production = 0.0;
  double rel_entropy = 0.0;
  long samples = 0;            // objective evaluations spent
  std::vector<double> trace;   // best ratio after each optimizer improvement
};

// Minimizes EP/D over density matrices by projected gradient descent on a
// square-root parameterization, seeded with computational basis states, pure
// product states and random states; seeds closer than 1e-10 in relative
// entropy to their projection are excluded. budget caps objective
// evaluations across all seeds.
MlsiEstimate mlsi_upper_estimate(const Superoperator& l, const ConditionalExpectation& e,
                                 long budget, unsigned seed = 1);

// Same estimate for l tensored with an identity on an n_ancilla-dimensional
// ancilla (n_ancilla in {2, 4}); when base is given, its minimizer is lifted
// to an extra seed so the extended estimate never exceeds the base one.
MlsiEstimate cmlsi_probe(const Superoperator& l, const ConditionalExpectation& e,
                         int n_ancilla, long budget, unsigned seed = 1,
                         const MlsiEstimate* base = nullptr);

struct Trajectory {
  std::vector<double> times;
  std::vector<QuantumState> states;
  std::vector<double> trace_distance;  // ||rho_t - sigma||_1, empty without a reference
  std::vector<double> rel_entropy;     // D(rho_t || sigma), empty without a reference
  std::vector<Region> regions;         // regions carrying local diagnostics
  std::vector<std::vector<double>> local_entropy;  // [region][time]
  bool floored = false;  // some state needed spectral clipping when recorded
};

enum class EvolveMode {
  automatic,  // spectral or exponential when feasible, integrator otherwise
  dense,      // require a dense/spectral propagator, error when unavailable
  integrate,  // force the adaptive integrator
};

struct EvolveOptions {
  std::optional<QuantumState> sigma;  // reference state for diagnostics
  std::vector<Region> regions;        // regions for local relative entropies
  EvolveMode mode = EvolveMode::automatic;
};

// Propagates rho0 under the Schroedinger-picture generator l and records the
// state and diagnostics at the requested times (ascending, nonnegative).
Trajectory evolve(const Superoperator& l, const QuantumState& rho0,
                  const std::vector<double>& times, const EvolveOptions& opts = {});

// CSV rendering of a trajectory: t, trace_distance, rel_entropy, one column
// per tracked region.
std::string trajectory_csv(const Trajectory& t);

struct MixingEstimate {
  double t_mix = 0.0;              // max over initial states
  std::vector<double> per_state;   // first time each initial state is eps-close
  double eps = 0.0;
  double gap = 0.0;                // spectral gap of the generator
  double gap_bound = 0.0;          // (1/gap) log(||sigma^{-1/2}|| / eps)
  double horizon = 0.0;
};

struct MixingOptions {
  std::vector<Matrix> initial_states;  // empty: basis states + 32 random pure
  double horizon = 0.0;                // 0: kHorizonGapMultiple / gap
  int grid_points = 48;                // coarse scan resolution before bisection
  bool with_bound = true;              // compute the spectral gap and its bound
  unsigned seed = 11;
};

// Smallest grid time with ||rho_t - sigma||_1 <= eps, refined by bisection to
// kBisectTimeTol, over the given set of initial states.
MixingEstimate mixing_time(const Superoperator& l, const QuantumState& sigma, double eps,
                           const MixingOptions& opts = {});

struct LocalMixingCurve {
  std::vector<double> times;
  std::vector<double> local_curve;   // D(tr_{A^c}[rho_t] || tr_{A^c}[sigma])
  std::vector<double> global_curve;  // D(rho_t || sigma)
};

// Local relative entropy of the region-A marginal along the trajectory,
// together with the global curve; enforces local <= global at every time.
LocalMixingCurve local_mixing_curve(const Superoperator& l, const QuantumState& sigma,
                                    const Region& a, const QuantumState& rho0,
                                    const std::vector<double>& times);

struct DensityCurve {
  std::vector<double> times;
  std::vector<double> density;   // D(rho_t || sigma) / volume
  double initial_value = 0.0;    // D(rho_0 || sigma)
  double initial_bound = 0.0;    // -Tr[rho_0 log sigma] = log Z + beta Tr[rho_0 H]
  int volume = 0;                // number of sites carrying the dynamics
};

// Relative entropy per site along the trajectory; checks the initial value
// against the log-partition bound implied by the reference state.
DensityCurve entropy_density_decay(const Superoperator& l, const QuantumState& sigma,
                                   const QuantumState& rho0, const std::vector<double>& times);

}  // namespace rapidmix
