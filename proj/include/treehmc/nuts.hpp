#ifndef TREEHMC_NUTS_HPP
#define TREEHMC_NUTS_HPP

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "treehmc/errors.hpp"
#include "treehmc/random.hpp"

namespace treehmc {

// Log target and gradient in one call; fills `grad` and returns the value.
using LogpostGradFn =
    std::function<double(std::span<const double>, std::span<double>)>;

struct HmcState {
  std::vector<double> position;
  double logpost = 0.0;
  std::vector<double> grad;
};

struct NutsOptions {
  int max_depth = 10;
  double divergence_threshold = 1000.0;
  double target_accept = 0.8;
};

struct NutsDiagnostics {
  int tree_depth = 0;
  bool divergent = false;
  double accept_stat = 0.0;  // mean Metropolis probability over the trajectory
  double energy = 0.0;       // H at the selected point
  int n_leapfrog = 0;
};

// Multinomial no-u-turn transitions over a fixed-dimension unconstrained
// target with a diagonal metric. One instance per chain; the target callback
// must be pure.
class NutsEngine {
 public:
  NutsEngine(LogpostGradFn target, NutsOptions options = {});

  const NutsOptions& options() const { return options_; }

  HmcState make_state(std::vector<double> position) const;

  // One half-kick / drift / half-kick step; eps may be negative.
  // Returns false when the gradient or value turns non-finite.
  bool leapfrog(HmcState& state, std::vector<double>& momentum, double eps,
                std::span<const double> inv_mass) const;

  std::pair<HmcState, NutsDiagnostics> step(const HmcState& start, double eps,
                                            std::span<const double> inv_mass,
                                            Rng& rng) const;

  // Step-size heuristic: doubles/halves until the one-step Metropolis
  // probability crosses 1/2.
  double find_reasonable_epsilon(const HmcState& start,
                                 std::span<const double> inv_mass,
                                 Rng& rng) const;

 private:
  struct Subtree;

  LogpostGradFn target_;
  NutsOptions options_;

  bool build_tree(int depth, double eps, double h0, Subtree& out,
                  Rng& rng) const;
};

// Nesterov dual averaging on log step size (Hoffman-Gelman defaults).
class DualAveraging {
 public:
  explicit DualAveraging(double epsilon_init, double target_accept = 0.8,
                         double t0 = 10.0, double gamma = 0.05,
                         double kappa = 0.75);

  void update(double accept_stat);
  // Restart around a new center, keeping tuning constants.
  void restart(double epsilon_init);

  double current() const { return std::exp(log_eps_); }
  double averaged() const { return std::exp(log_eps_bar_); }

 private:
  double log_eps_;
  double log_eps_bar_;
  double h_bar_ = 0.0;
  double mu_;
  double count_ = 1.0;
  double target_;
  double t0_;
  double gamma_;
  double kappa_;
};

// Warm-up layout: initial fast interval, doubling slow windows, final fast
// interval; scaled down proportionally for short warm-ups.
struct WarmupWindows {
  int num_warmup = 0;
  int first_fast_end = 0;             // w1
  std::vector<int> slow_window_ends;  // iterations where the metric updates
  int final_fast_start = 0;           // w-2

  static WarmupWindows build(int num_warmup);

  bool in_slow(int iter) const {
    return iter >= first_fast_end && iter < final_fast_start;
  }
  bool is_slow_end(int iter) const;
};

// Split-sharpness value for warm-up iteration j: h_init before the first
// window, then a linear ramp over [w1, w-2 - 100] with slope
// (h_final - h_init) / (w-2 - w1 + 100), then h_final. Offsets shrink
// proportionally when the warm-up is shorter than the nominal 500.
double anneal_softness(int iter, const WarmupWindows& windows, double h_init,
                       double h_final);

// Streaming mean/variance.
struct Welford {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    count += 1.0;
    const double d = x - mean;
    mean += d / count;
    m2 += d * (x - mean);
  }
  double variance() const { return count > 1.0 ? m2 / (count - 1.0) : 0.0; }
  // Shrunk toward unit scale the way the reference samplers do.
  double regularized_variance() const {
    if (count < 3.0) return 1.0;
    const double w = count / (count + 5.0);
    return w * variance() + (1.0 - w) * 1e-3;
  }
};

struct AdaptationSchedule {
  double step_size = 0.1;
  std::vector<double> inv_mass;
  double target_accept = 0.8;
  WarmupWindows windows;
  double h_init = 1.0;
  double h_final = 1.0;
};

// Fixed-dimension warm-up driver: dual averaging plus windowed variance
// adaptation. Returns the frozen schedule and leaves `state` at the last
// warm-up draw.
AdaptationSchedule warmup_adapt(const NutsEngine& engine, HmcState& state,
                                int num_warmup, double h_init, double h_final,
                                Rng& rng, double init_step_size = 0.1);

}  // namespace treehmc

#endif  // TREEHMC_NUTS_HPP
