#include "treehmc/nuts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace treehmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double kinetic(std::span<const double> momentum,
               std::span<const double> inv_mass) {
  double k = 0.0;
  for (size_t d = 0; d < momentum.size(); ++d) {
    k += 0.5 * inv_mass[d] * momentum[d] * momentum[d];
  }
  return k;
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

struct Edge {
  std::vector<double> pos;
  std::vector<double> mom;
  std::vector<double> grad;
  double logpost = 0.0;
};

// dq = sign * (end - begin) orders the endpoints along forward time.
bool no_uturn(const Edge& begin, const Edge& end, double sign,
              std::span<const double> inv_mass) {
  double dot_begin = 0.0;
  double dot_end = 0.0;
  for (size_t d = 0; d < begin.pos.size(); ++d) {
    const double dq = sign * (end.pos[d] - begin.pos[d]);
    dot_begin += dq * inv_mass[d] * begin.mom[d];
    dot_end += dq * inv_mass[d] * end.mom[d];
  }
  return dot_begin >= 0.0 && dot_end >= 0.0;
}

}  // namespace

struct NutsEngine::Subtree {
  Edge begin;
  Edge end;
  std::vector<double> prop_pos;
  std::vector<double> prop_grad;
  double prop_logpost = 0.0;
  double log_sum_wt = kNegInf;
  double sum_accept = 0.0;
  int n_points = 0;
  int n_leapfrog = 0;
  bool divergent = false;

  // carried by build_tree to avoid threading extras through the recursion
  std::span<const double> inv_mass;
  double sign = 1.0;
};

NutsEngine::NutsEngine(LogpostGradFn target, NutsOptions options)
    : target_(std::move(target)), options_(options) {}

HmcState NutsEngine::make_state(std::vector<double> position) const {
  HmcState state;
  state.grad.assign(position.size(), 0.0);
  state.logpost = target_(position, state.grad);
  state.position = std::move(position);
  return state;
}

bool NutsEngine::leapfrog(HmcState& state, std::vector<double>& momentum,
                          double eps, std::span<const double> inv_mass) const {
  const size_t dim = state.position.size();
  for (size_t d = 0; d < dim; ++d) {
    momentum[d] += 0.5 * eps * state.grad[d];
  }
  for (size_t d = 0; d < dim; ++d) {
    state.position[d] += eps * inv_mass[d] * momentum[d];
  }
  state.logpost = target_(state.position, state.grad);
  if (!std::isfinite(state.logpost) || !all_finite(state.grad)) return false;
  for (size_t d = 0; d < dim; ++d) {
    momentum[d] += 0.5 * eps * state.grad[d];
  }
  return true;
}

bool NutsEngine::build_tree(int depth, double eps, double h0, Subtree& out,
                            Rng& rng) const {
  // base case integrates one step from out.end (the moving edge)
  if (depth == 0) {
    HmcState step_state;
    step_state.position = out.end.pos;
    step_state.grad = out.end.grad;
    step_state.logpost = out.end.logpost;
    std::vector<double> momentum = out.end.mom;

    const bool finite = leapfrog(step_state, momentum, eps, out.inv_mass);
    out.n_leapfrog += 1;
    out.n_points += 1;

    double h = std::numeric_limits<double>::infinity();
    if (finite) h = -step_state.logpost + kinetic(momentum, out.inv_mass);
    const double log_wt = h0 - h;
    out.sum_accept += std::isfinite(log_wt) ? std::min(1.0, std::exp(log_wt))
                                            : 0.0;
    if (!(log_wt > -options_.divergence_threshold)) {
      out.divergent = true;
      return false;
    }
    Edge e;
    e.pos = std::move(step_state.position);
    e.grad = std::move(step_state.grad);
    e.logpost = step_state.logpost;
    e.mom = momentum;
    out.begin = e;
    out.end = std::move(e);
    out.prop_pos = out.end.pos;
    out.prop_grad = out.end.grad;
    out.prop_logpost = out.end.logpost;
    out.log_sum_wt = log_wt;
    return true;
  }

  // first half continues from the moving edge
  Subtree first;
  first.inv_mass = out.inv_mass;
  first.sign = out.sign;
  first.end = out.end;
  const bool ok_first = build_tree(depth - 1, eps, h0, first, rng);
  out.n_leapfrog += first.n_leapfrog;
  out.n_points += first.n_points;
  out.sum_accept += first.sum_accept;
  out.divergent |= first.divergent;
  if (!ok_first) return false;

  Subtree second;
  second.inv_mass = out.inv_mass;
  second.sign = out.sign;
  second.end = first.end;
  const bool ok_second = build_tree(depth - 1, eps, h0, second, rng);
  out.n_leapfrog += second.n_leapfrog;
  out.n_points += second.n_points;
  out.sum_accept += second.sum_accept;
  out.divergent |= second.divergent;
  if (!ok_second) return false;

  const double total = log_sum_exp(first.log_sum_wt, second.log_sum_wt);
  const bool take_second =
      std::log(rng.uniform_pos()) < second.log_sum_wt - total;
  if (take_second) {
    out.prop_pos = std::move(second.prop_pos);
    out.prop_grad = std::move(second.prop_grad);
    out.prop_logpost = second.prop_logpost;
  } else {
    out.prop_pos = std::move(first.prop_pos);
    out.prop_grad = std::move(first.prop_grad);
    out.prop_logpost = first.prop_logpost;
  }
  out.log_sum_wt = total;
  out.begin = std::move(first.begin);
  out.end = std::move(second.end);
  return no_uturn(out.begin, out.end, out.sign, out.inv_mass);
}

std::pair<HmcState, NutsDiagnostics> NutsEngine::step(
    const HmcState& start, double eps, std::span<const double> inv_mass,
    Rng& rng) const {
  const size_t dim = start.position.size();
  NutsDiagnostics diag;
  if (dim == 0) {
    diag.accept_stat = 1.0;
    diag.energy = -start.logpost;
    return {start, diag};
  }

  std::vector<double> momentum(dim);
  for (size_t d = 0; d < dim; ++d) {
    momentum[d] = rng.normal() / std::sqrt(inv_mass[d]);
  }
  const double h0 = -start.logpost + kinetic(momentum, inv_mass);

  Edge fwd{start.position, momentum, start.grad, start.logpost};
  Edge bwd = fwd;

  std::vector<double> selected_pos = start.position;
  std::vector<double> selected_grad = start.grad;
  double selected_logpost = start.logpost;
  double log_sum_wt = 0.0;  // start point carries weight exp(h0 - h0) = 1

  double sum_accept = 0.0;
  int n_points = 0;

  int depth = 0;
  // at least one doubling runs even when max_depth == 0, so the degenerate
  // setting reduces to a single-leapfrog proposal
  do {
    const bool forward = rng.uniform() < 0.5;
    Subtree subtree;
    subtree.inv_mass = inv_mass;
    subtree.sign = forward ? 1.0 : -1.0;
    subtree.end = forward ? fwd : bwd;
    const double signed_eps = forward ? eps : -eps;
    const bool ok = build_tree(depth, signed_eps, h0, subtree, rng);
    diag.n_leapfrog += subtree.n_leapfrog;
    sum_accept += subtree.sum_accept;
    n_points += subtree.n_points;
    diag.divergent |= subtree.divergent;
    if (!ok) break;

    // biased progressive sampling toward the fresh subtree
    if (std::log(rng.uniform_pos()) < subtree.log_sum_wt - log_sum_wt) {
      selected_pos = subtree.prop_pos;
      selected_grad = subtree.prop_grad;
      selected_logpost = subtree.prop_logpost;
    }
    log_sum_wt = log_sum_exp(log_sum_wt, subtree.log_sum_wt);
    if (forward) {
      fwd = std::move(subtree.end);
    } else {
      bwd = std::move(subtree.end);
    }
    ++depth;
    if (!no_uturn(bwd, fwd, 1.0, inv_mass)) break;
  } while (depth < options_.max_depth);

  diag.tree_depth = depth;
  diag.accept_stat = n_points > 0 ? sum_accept / n_points : 1.0;

  HmcState next;
  next.position = std::move(selected_pos);
  next.grad = std::move(selected_grad);
  next.logpost = selected_logpost;
  diag.energy = -next.logpost;
  return {std::move(next), diag};
}

double NutsEngine::find_reasonable_epsilon(const HmcState& start,
                                           std::span<const double> inv_mass,
                                           Rng& rng) const {
  const size_t dim = start.position.size();
  if (dim == 0) return 1.0;
  double eps = 1.0;
  std::vector<double> momentum(dim);
  for (size_t d = 0; d < dim; ++d) {
    momentum[d] = rng.normal() / std::sqrt(inv_mass[d]);
  }
  const double h0 = -start.logpost + kinetic(momentum, inv_mass);

  auto log_ratio_at = [&](double e) {
    HmcState state = start;
    std::vector<double> p = momentum;
    if (!leapfrog(state, p, e, inv_mass)) return kNegInf;
    return h0 - (-state.logpost + kinetic(p, inv_mass));
  };

  double lr = log_ratio_at(eps);
  const double dir = lr > std::log(0.5) ? 1.0 : -1.0;
  for (int iter = 0; iter < 50; ++iter) {
    if (dir * lr <= dir * std::log(0.5)) break;
    eps *= std::pow(2.0, dir);
    lr = log_ratio_at(eps);
  }
  return eps;
}

DualAveraging::DualAveraging(double epsilon_init, double target_accept,
                             double t0, double gamma, double kappa)
    : log_eps_(std::log(epsilon_init)),
      log_eps_bar_(std::log(epsilon_init)),
      mu_(std::log(10.0 * epsilon_init)),
      target_(target_accept),
      t0_(t0),
      gamma_(gamma),
      kappa_(kappa) {}

void DualAveraging::update(double accept_stat) {
  if (std::isnan(accept_stat)) accept_stat = 0.0;
  const double frac = 1.0 / (count_ + t0_);
  h_bar_ = (1.0 - frac) * h_bar_ + frac * (target_ - accept_stat);
  log_eps_ = mu_ - std::sqrt(count_) / gamma_ * h_bar_;
  const double w = std::pow(count_, -kappa_);
  log_eps_bar_ = w * log_eps_ + (1.0 - w) * log_eps_bar_;
  count_ += 1.0;
}

void DualAveraging::restart(double epsilon_init) {
  log_eps_ = std::log(epsilon_init);
  log_eps_bar_ = std::log(epsilon_init);
  h_bar_ = 0.0;
  mu_ = std::log(10.0 * epsilon_init);
  count_ = 1.0;
}

WarmupWindows WarmupWindows::build(int num_warmup) {
  if (num_warmup < 2) {
    throw ConfigError("warm-up needs at least 2 iterations to form windows");
  }
  WarmupWindows w;
  w.num_warmup = num_warmup;

  int init_buffer = 75;
  int term_buffer = 50;
  int base_window = 25;
  if (num_warmup < init_buffer + term_buffer + base_window) {
    init_buffer = static_cast<int>(0.15 * num_warmup);
    term_buffer = static_cast<int>(0.10 * num_warmup);
    base_window = num_warmup - init_buffer - term_buffer;
    init_buffer = std::max(init_buffer, 1);
    term_buffer = std::max(term_buffer, 1);
    base_window = std::max(base_window, 0);
  }
  w.first_fast_end = init_buffer;
  w.final_fast_start = num_warmup - term_buffer;

  int window = base_window;
  int pos = w.first_fast_end;
  while (pos < w.final_fast_start && window > 0) {
    int end = pos + window;
    // absorb a remainder too small for the next doubling
    if (end + 2 * window > w.final_fast_start) end = w.final_fast_start;
    end = std::min(end, w.final_fast_start);
    w.slow_window_ends.push_back(end);
    pos = end;
    window *= 2;
  }
  return w;
}

bool WarmupWindows::is_slow_end(int iter) const {
  return std::find(slow_window_ends.begin(), slow_window_ends.end(),
                   iter + 1) != slow_window_ends.end();
}

double anneal_softness(int iter, const WarmupWindows& windows, double h_init,
                       double h_final) {
  if (h_init == h_final) return h_final;
  const int w1 = windows.first_fast_end;
  const int w2 = windows.final_fast_start;
  const int offset = std::min(100, std::max(0, w2 - w1));
  const int ramp_end = w2 - offset;
  const double span = static_cast<double>(w2 - w1 + offset);
  if (iter < w1) return h_init;
  if (iter > ramp_end) return h_final;
  return h_init + static_cast<double>(iter) * (h_final - h_init) / span;
}

AdaptationSchedule warmup_adapt(const NutsEngine& engine, HmcState& state,
                                int num_warmup, double h_init, double h_final,
                                Rng& rng, double init_step_size) {
  AdaptationSchedule schedule;
  schedule.windows = WarmupWindows::build(num_warmup);
  schedule.h_init = h_init;
  schedule.h_final = h_final;
  schedule.target_accept = engine.options().target_accept;

  const size_t dim = state.position.size();
  schedule.inv_mass.assign(dim, 1.0);
  if (dim == 0) return schedule;

  DualAveraging da(init_step_size, engine.options().target_accept);
  std::vector<Welford> acc(dim);

  for (int j = 0; j < num_warmup; ++j) {
    auto [next, diag] = engine.step(state, da.current(), schedule.inv_mass, rng);
    state = std::move(next);
    da.update(diag.accept_stat);
    if (schedule.windows.in_slow(j)) {
      for (size_t d = 0; d < dim; ++d) acc[d].add(state.position[d]);
    }
    if (schedule.windows.is_slow_end(j)) {
      for (size_t d = 0; d < dim; ++d) {
        schedule.inv_mass[d] = acc[d].regularized_variance();
        acc[d] = Welford{};
      }
      da.restart(da.current());
    }
  }
  schedule.step_size = da.averaged();
  return schedule;
}

}  // namespace treehmc
