#ifndef TREEHMC_MODEL_HPP
#define TREEHMC_MODEL_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "treehmc/data.hpp"
#include "treehmc/topology.hpp"

namespace treehmc {

enum class SplitVariant { DF, DFI };

// Continuous/discrete parameters keyed to one topology. DF carries one
// split index per internal node; DFI carries a simplex of input weights.
// Regression adds per-leaf means and one shared noise scale.
struct TreeParams {
  SplitVariant variant = SplitVariant::DF;
  std::map<NodeId, int> split_index;                    // kappa, 0-based dim
  std::map<NodeId, std::vector<double>> split_simplex;  // Delta
  std::map<NodeId, double> split_threshold;             // tau in (0,1)
  std::map<NodeId, double> leaf_mean;                   // mu (regression)
  double noise_sd = 1.0;                                // sigma (regression)

  // keys match the topology's internal/leaf sets exactly
  bool keyed_to(const TreeTopology& topo, TaskKind task) const;
};

struct SoftnessParam {
  double h = 1.0;  // split sharpness; hard routing as h -> 0
};

struct PriorConfig {
  // node split probability alpha * (1 + depth)^-beta
  double alpha_split = 0.45;
  double beta_split = 2.5;
  // symmetric Dirichlet on class probabilities unless per-class values given
  double class_alpha = 1.0;
  std::vector<double> dirichlet_alpha;
  // leaf mean ~ Normal(mu_mean, mu_var)
  double mu_mean = 0.0;
  double mu_var = 1.0;
  // noise sd ~ InverseGamma(sigma_shape, sigma_scale)
  double sigma_shape = 1.5;
  double sigma_scale = 1.5;
  // categorical over input dims; empty = uniform
  std::vector<double> index_probs;
  // symmetric Dirichlet concentration for split simplexes
  double simplex_alpha = 1.0;

  std::vector<double> resolved_class_alpha(int num_classes) const;
  std::vector<double> resolved_index_probs(int num_inputs) const;
  void validate(int num_inputs) const;
};

// Path probabilities phi_{i,k}; rows are datapoints, columns follow
// leaf_order (ascending node id).
struct LeafWeights {
  int rows = 0;
  int cols = 0;
  std::vector<NodeId> leaf_order;
  std::vector<double> phi;

  double at(int i, int k) const {
    return phi[static_cast<size_t>(i) * cols + k];
  }
};

// One sampled coordinate of the unconstrained vector.
enum class CoordKind : uint8_t { SplitWeight, Threshold, LeafMean, NoiseSd };

struct CoordKey {
  CoordKind kind = CoordKind::Threshold;
  NodeId node = kNoNode;
  int sub = 0;  // simplex component for SplitWeight

  auto operator<=>(const CoordKey&) const = default;
};

// Ordered coordinate list for one (topology, variant, task). Per internal
// node (ascending id): simplex coords then threshold; then per leaf
// (ascending id) the mean, then the shared noise scale.
struct ParamLayout {
  std::vector<CoordKey> coords;

  int size() const { return static_cast<int>(coords.size()); }

  static ParamLayout build(const TreeTopology& topo, SplitVariant variant,
                           TaskKind task, int num_inputs,
                           bool include_leaf_params = true);
};

// Soft-split tree model over one dataset: path probabilities, likelihoods,
// priors, and analytical gradients in unconstrained space.
class TreeModel {
 public:
  struct Options {
    bool prior_only = false;  // replace the likelihood with a constant
  };

  TreeModel(const Dataset& data, SplitVariant variant, PriorConfig prior,
            Options options = {});

  const Dataset& data() const { return *data_; }
  SplitVariant variant() const { return variant_; }
  TaskKind task() const { return data_->task; }
  const PriorConfig& prior() const { return prior_; }
  bool prior_only() const { return options_.prior_only; }

  // Probability of stepping right at `node` for one input row.
  double psi(std::span<const double> x, NodeId node, const TreeParams& params,
             SoftnessParam h) const;

  LeafWeights leaf_weights(const TreeTopology& topo, const TreeParams& params,
                           SoftnessParam h) const;

  double loglik(const TreeTopology& topo, const TreeParams& params,
                SoftnessParam h) const;
  double logprior(const TreeTopology& topo, const TreeParams& params) const;
  double logprior_topology(const TreeTopology& topo) const;
  // loglik + logprior, densities in constrained space.
  double log_posterior(const TreeTopology& topo, const TreeParams& params,
                       SoftnessParam h) const;

  // Parameters drawn from the prior for a given topology.
  TreeParams sample_params(const TreeTopology& topo, Rng& rng) const;

 private:
  const Dataset* data_;
  SplitVariant variant_;
  PriorConfig prior_;
  Options options_;
  std::vector<double> class_alpha_;  // resolved, classification only
  double class_alpha_total_ = 0.0;
  std::vector<double> index_probs_;  // resolved

  friend class UnconstrainedTarget;
};

// The HMC view of the model: fixed topology, unconstrained coordinates,
// log target including constraint-map Jacobians, analytical gradient.
class UnconstrainedTarget {
 public:
  UnconstrainedTarget(const TreeModel& model, const TreeTopology& topo,
                      const TreeParams& reference, ParamLayout layout,
                      SoftnessParam h);

  const ParamLayout& layout() const { return layout_; }
  void set_softness(SoftnessParam h) { h_ = h; }
  SoftnessParam softness() const { return h_; }

  // log posterior + log |Jacobian| at u.
  double value(std::span<const double> u) const;
  // Same, also filling the gradient (closed forms, no autodiff).
  double value_grad(std::span<const double> u, std::span<double> grad) const;

  TreeParams to_params(std::span<const double> u) const;
  std::vector<double> from_params(const TreeParams& params) const;

 private:
  struct Flat;  // flattened topology + scratch

  const TreeModel* model_;
  const TreeTopology* topo_;
  TreeParams reference_;
  ParamLayout layout_;
  SoftnessParam h_;
  std::shared_ptr<Flat> flat_;

  double eval(std::span<const double> u, std::span<double> grad,
              bool want_grad) const;
};

// Digamma via upward recurrence + asymptotic series.
double digamma(double x);

}  // namespace treehmc

#endif  // TREEHMC_MODEL_HPP
