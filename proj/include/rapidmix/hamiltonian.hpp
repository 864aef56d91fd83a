#pragma once

#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "rapidmix/lattice.hpp"
#include "rapidmix/operator_core.hpp"

namespace rapidmix {

enum class ModelKind { ising, potts, random_commuting, heisenberg, custom };

struct ModelSpec {
  ModelKind kind = ModelKind::ising;
  double J = 1.0;
  double g = 0.0;  // transverse-free field strength (ising)
  double Jx = 1.0, Jy = 1.0, Jz = 1.0;  // heisenberg couplings
  unsigned long seed = 0;  // random_commuting
  // custom: one Hermitian term per listed edge, support = the edge pair
  std::vector<DenseOperator> custom_terms;
};

// Edge potential on a spin graph. terms[i] lives on graph.edges[i]; on-site
// fields are folded into incident edges with degree shares. The commuting
// flag is measured at construction, never assumed.
struct Potential {
  SpinGraph graph;
  ModelKind kind = ModelKind::custom;
  std::vector<DenseOperator> terms;
  double j_bound = 0.0;  // max operator norm over terms
  bool commuting = false;
};

Potential build_potential(const SpinGraph& g, const ModelSpec& spec);

// Sum of the embedded terms supported inside A, as an operator on all of A.
DenseOperator hamiltonian_on(const Potential& p, const Region& a);

// List of graph edges with one endpoint in each region.
std::vector<std::pair<int, int>> crossing_edges(const SpinGraph& g, const Region& a,
                                                const Region& b);

// e^{-beta h} / Z with the log partition function, overflow-safe.
std::pair<QuantumState, double> gibbs_from_hamiltonian(const DenseOperator& h, double beta);

// Gibbs states of subregions at a fixed inverse temperature, cached per
// region. The cache is append-only behind a lock; returned references stay
// valid for the ensemble's lifetime.
class GibbsEnsemble {
 public:
  GibbsEnsemble(Potential p, double beta);

  const Potential& potential() const { return pot_; }
  const SpinGraph& graph() const { return pot_.graph; }
  double beta() const { return beta_; }

  const QuantumState& gibbs(const Region& a) const;
  double log_partition(const Region& a) const;

 private:
  struct Entry {
    QuantumState state;
    double log_z;
  };
  const Entry& entry(const Region& a) const;

  Potential pot_;
  double beta_;
  mutable std::mutex lock_;
  mutable std::map<std::vector<int>, Entry> cache_;
};

// Araki expansional E_{A,B} = e^{-beta H_AB} e^{beta(H_A + H_B)} on A u B.
DenseOperator expansional(const GibbsEnsemble& e, const Region& a, const Region& b);

// Same product with the factors inverted, the exact inverse of expansional.
DenseOperator expansional_inverse(const GibbsEnsemble& e, const Region& a, const Region& b);

// Partition-function ratio Z_ABC Z_B / (Z_AB Z_BC), evaluated two ways:
// directly from log partition functions and through expansional traces.
struct LambdaResult {
  double via_z = 0.0;
  double via_trace = 0.0;
};

LambdaResult lambda_abc(const GibbsEnsemble& e, const Region& a, const Region& b,
                        const Region& c);

}  // namespace rapidmix
