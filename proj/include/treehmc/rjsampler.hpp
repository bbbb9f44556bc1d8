#ifndef TREEHMC_RJSAMPLER_HPP
#define TREEHMC_RJSAMPLER_HPP

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "treehmc/model.hpp"
#include "treehmc/nuts.hpp"

namespace treehmc {

enum class MoveKind { Grow, Prune, Stay };
enum class Phase { Burnin, Sampling };

struct TreeState {
  TreeTopology topo;
  TreeParams params;
  SoftnessParam h;
  double logpost = 0.0;  // log posterior at (topo, params, h)
};

struct MoveConfig {
  double p_grow = 0.35;
  double p_prune = 0.35;
  double p_stay = 0.30;
  int hmc_steps = 5;  // k steps on each side of the topology move

  void validate() const;
};

// One transdimensional proposal with its auxiliary draws. For a prune the
// u-values are the discarded parameters (the draws of the reverse grow).
struct RjProposal {
  MoveKind move = MoveKind::Stay;
  NodeId edited_node = kNoNode;
  double u_threshold = 0.0;
  int u_index = -1;
  std::vector<double> u_weights;
  double u_leaf_mean = 0.0;
  bool has_leaf_mean = false;
  double log_proposal_ratio = 0.0;  // log q_nm - log q_mn
};

struct ChainSample {
  int iteration = 0;
  Phase phase = Phase::Burnin;
  MoveKind move = MoveKind::Stay;
  bool accepted = false;
  bool divergent = false;
  double logpost = 0.0;  // at h_final
  TreeTopology topo;
  TreeParams params;
};

struct SamplerConfig {
  SplitVariant variant = SplitVariant::DF;
  MoveConfig moves;
  PriorConfig prior;
  double h_init = 0.1;
  double h_final = 0.1;
  int iterations = 1000;
  int burnin = 500;
  NutsOptions nuts;
  double init_step_size = 0.1;
  bool adapt = true;       // step-size/metric adaptation during burn-in
  bool prior_only = false; // constant likelihood (verification runs)
  uint64_t seed = 1;

  void validate() const;
};

// Three-part transdimensional kernel: HMC block, grow/prune/stay move with
// dimension matching, second HMC block, then the burn-in or full acceptance
// rule. One instance drives one chain.
class RjSampler {
 public:
  RjSampler(const Dataset& data, SamplerConfig config);

  const TreeModel& model() const { return model_; }
  const SamplerConfig& config() const { return config_; }

  // Runs the whole chain; the callback (when given) sees each sample as it
  // is recorded.
  std::vector<ChainSample> run(
      const std::function<void(const ChainSample&)>& on_sample = nullptr);

  // Pieces below are the building blocks of run(), exposed for direct use.
  TreeState initial_state(Rng& rng) const;
  // DF: one split-index MH sweep then k NUTS steps; DFI: k NUTS steps.
  TreeState hmc_block(const TreeState& state, int steps, Rng& rng,
                      bool* divergent = nullptr);
  std::pair<TreeState, RjProposal> propose_topology(const TreeState& state,
                                                    Rng& rng) const;
  // log of the Eq.-style double-sided acceptance ratio (before min with 0).
  double accept_full_log(const TreeState& initial, const TreeState& moved,
                         const TreeState& jumped, const TreeState& final,
                         const RjProposal& proposal) const;
  double accept_burnin_log(const TreeState& initial, const TreeState& final,
                           const RjProposal& proposal) const;

  // Split sharpness in force at an outer iteration.
  double softness_at(int iteration) const;

  // Frozen step size after warm-up (for diagnostics).
  double frozen_step_size() const { return frozen_step_size_; }

 private:
  const Dataset* data_;
  SamplerConfig config_;
  TreeModel model_;
  std::optional<WarmupWindows> windows_;

  // adaptation state, keyed per coordinate so it survives topology edits
  DualAveraging step_adapt_;
  std::map<CoordKey, double> inv_mass_;
  std::map<CoordKey, Welford> variance_acc_;
  bool warmup_active_ = false;
  bool in_slow_window_ = false;
  double frozen_step_size_ = 0.0;

  double current_step_size() const;
  std::vector<double> assemble_inv_mass(const ParamLayout& layout) const;
  void observe_position(const ParamLayout& layout,
                        std::span<const double> position);
  void end_iteration(int iteration);
  void kappa_sweep(TreeState& state, Rng& rng) const;

  double target_logpost(const TreeState& state) const;  // at h_final
};

const char* to_string(MoveKind move);
const char* to_string(Phase phase);

}  // namespace treehmc

#endif  // TREEHMC_RJSAMPLER_HPP
