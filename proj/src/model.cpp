#include "treehmc/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "treehmc/transforms.hpp"

namespace treehmc {

namespace tf = transforms;

double digamma(double x) {
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0));
  return result;
}

bool TreeParams::keyed_to(const TreeTopology& topo, TaskKind task) const {
  const auto internals = topo.internal_ids();
  const auto& thresholds = split_threshold;
  if (thresholds.size() != internals.size()) return false;
  for (NodeId id : internals) {
    if (!thresholds.count(id)) return false;
    if (variant == SplitVariant::DF && !split_index.count(id)) return false;
    if (variant == SplitVariant::DFI && !split_simplex.count(id)) return false;
  }
  if (task == TaskKind::Regression) {
    const auto leaves = topo.leaf_ids();
    if (leaf_mean.size() != leaves.size()) return false;
    for (NodeId id : leaves) {
      if (!leaf_mean.count(id)) return false;
    }
    if (!(noise_sd > 0.0)) return false;
  }
  return true;
}

std::vector<double> PriorConfig::resolved_class_alpha(int num_classes) const {
  if (!dirichlet_alpha.empty()) {
    if (static_cast<int>(dirichlet_alpha.size()) != num_classes) {
      throw ConfigError("dirichlet_alpha size does not match class count");
    }
    return dirichlet_alpha;
  }
  return std::vector<double>(static_cast<size_t>(num_classes), class_alpha);
}

std::vector<double> PriorConfig::resolved_index_probs(int num_inputs) const {
  if (!index_probs.empty()) {
    if (static_cast<int>(index_probs.size()) != num_inputs) {
      throw ConfigError("index_probs size does not match input count");
    }
    return index_probs;
  }
  return std::vector<double>(static_cast<size_t>(num_inputs),
                             1.0 / num_inputs);
}

void PriorConfig::validate(int num_inputs) const {
  if (!(alpha_split > 0.0) || !(alpha_split < 1.0)) {
    throw ConfigError("alpha_split must lie in (0,1)");
  }
  if (beta_split < 0.0) throw ConfigError("beta_split must be >= 0");
  if (!(class_alpha > 0.0) || !(mu_var > 0.0) || !(sigma_shape > 0.0) ||
      !(sigma_scale > 0.0) || !(simplex_alpha > 0.0)) {
    throw ConfigError("prior shape/scale parameters must be positive");
  }
  for (double a : dirichlet_alpha) {
    if (!(a > 0.0)) throw ConfigError("dirichlet_alpha entries must be > 0");
  }
  if (!index_probs.empty()) {
    double total = 0.0;
    for (double p : index_probs) {
      if (p < 0.0) throw ConfigError("index_probs entries must be >= 0");
      total += p;
    }
    if (std::fabs(total - 1.0) > 1e-9) {
      throw ConfigError("index_probs must sum to 1");
    }
    if (static_cast<int>(index_probs.size()) != num_inputs) {
      throw ConfigError("index_probs size does not match input count");
    }
  }
}

ParamLayout ParamLayout::build(const TreeTopology& topo, SplitVariant variant,
                               TaskKind task, int num_inputs,
                               bool include_leaf_params) {
  ParamLayout layout;
  for (NodeId id : topo.internal_ids()) {
    if (variant == SplitVariant::DFI) {
      for (int s = 0; s < num_inputs - 1; ++s) {
        layout.coords.push_back({CoordKind::SplitWeight, id, s});
      }
    }
    layout.coords.push_back({CoordKind::Threshold, id, 0});
  }
  if (task == TaskKind::Regression && include_leaf_params) {
    for (NodeId id : topo.leaf_ids()) {
      layout.coords.push_back({CoordKind::LeafMean, id, 0});
    }
    layout.coords.push_back({CoordKind::NoiseSd, kNoNode, 0});
  }
  return layout;
}

TreeModel::TreeModel(const Dataset& data, SplitVariant variant,
                     PriorConfig prior, Options options)
    : data_(&data),
      variant_(variant),
      prior_(std::move(prior)),
      options_(options) {
  prior_.validate(data.num_inputs);
  if (data.task == TaskKind::Classification) {
    class_alpha_ = prior_.resolved_class_alpha(data.num_classes);
    class_alpha_total_ =
        std::accumulate(class_alpha_.begin(), class_alpha_.end(), 0.0);
  }
  index_probs_ = prior_.resolved_index_probs(data.num_inputs);
}

double TreeModel::psi(std::span<const double> x, NodeId node,
                      const TreeParams& params, SoftnessParam h) const {
  const double tau = params.split_threshold.at(node);
  double gate;
  if (variant_ == SplitVariant::DF) {
    gate = x[static_cast<size_t>(params.split_index.at(node))];
  } else {
    const auto& weights = params.split_simplex.at(node);
    gate = 0.0;
    for (size_t d = 0; d < weights.size(); ++d) gate += x[d] * weights[d];
  }
  return tf::logistic((gate - tau) / h.h);
}

LeafWeights TreeModel::leaf_weights(const TreeTopology& topo,
                                    const TreeParams& params,
                                    SoftnessParam h) const {
  LeafWeights out;
  out.leaf_order = topo.leaf_ids();
  out.rows = data_->num_points;
  out.cols = static_cast<int>(out.leaf_order.size());
  out.phi.assign(static_cast<size_t>(out.rows) * out.cols, 1.0);

  std::vector<PathInfo> paths;
  paths.reserve(out.leaf_order.size());
  for (NodeId leaf : out.leaf_order) paths.push_back(topo.path_info(leaf));

  for (int i = 0; i < out.rows; ++i) {
    std::span<const double> x(&data_->inputs[static_cast<size_t>(i) *
                                             data_->num_inputs],
                              static_cast<size_t>(data_->num_inputs));
    for (int k = 0; k < out.cols; ++k) {
      double prod = 1.0;
      const PathInfo& path = paths[static_cast<size_t>(k)];
      for (size_t a = 0; a < path.ancestors.size(); ++a) {
        const double p = psi(x, path.ancestors[a], params, h);
        prod *= path.directions[a] ? p : 1.0 - p;
      }
      out.phi[static_cast<size_t>(i) * out.cols + k] = prod;
    }
  }
  return out;
}

double TreeModel::logprior_topology(const TreeTopology& topo) const {
  double total = 0.0;
  for (NodeId id : topo.internal_ids()) {
    const double p = prior_.alpha_split *
                     std::pow(1.0 + topo.node(id).depth, -prior_.beta_split);
    total += std::log(p);
  }
  for (NodeId id : topo.leaf_ids()) {
    const double p = prior_.alpha_split *
                     std::pow(1.0 + topo.node(id).depth, -prior_.beta_split);
    total += std::log1p(-p);
  }
  return total;
}

double TreeModel::logprior(const TreeTopology& topo,
                           const TreeParams& params) const {
  double total = logprior_topology(topo);
  // tau ~ Beta(1,1): log density 0
  for (NodeId id : topo.internal_ids()) {
    if (variant_ == SplitVariant::DF) {
      total += std::log(index_probs_[static_cast<size_t>(
          params.split_index.at(id))]);
    } else {
      const auto& simplex = params.split_simplex.at(id);
      const int k = static_cast<int>(simplex.size());
      const double a = prior_.simplex_alpha;
      total += std::lgamma(a * k) - k * std::lgamma(a);
      for (double v : simplex) total += (a - 1.0) * std::log(v);
    }
  }
  if (data_->task == TaskKind::Regression) {
    for (NodeId id : topo.leaf_ids()) {
      const double mu = params.leaf_mean.at(id);
      const double d = mu - prior_.mu_mean;
      total += -0.5 * std::log(2.0 * M_PI * prior_.mu_var) -
               d * d / (2.0 * prior_.mu_var);
    }
    const double sigma = params.noise_sd;
    total += prior_.sigma_shape * std::log(prior_.sigma_scale) -
             std::lgamma(prior_.sigma_shape) -
             (prior_.sigma_shape + 1.0) * std::log(sigma) -
             prior_.sigma_scale / sigma;
  }
  return total;
}

TreeParams TreeModel::sample_params(const TreeTopology& topo, Rng& rng) const {
  TreeParams params;
  params.variant = variant_;
  for (NodeId id : topo.internal_ids()) {
    if (variant_ == SplitVariant::DF) {
      params.split_index[id] = rng.categorical(index_probs_);
    } else {
      params.split_simplex[id] =
          rng.dirichlet_symmetric(prior_.simplex_alpha, data_->num_inputs);
    }
    params.split_threshold[id] = rng.uniform_pos();
  }
  if (data_->task == TaskKind::Regression) {
    for (NodeId id : topo.leaf_ids()) {
      params.leaf_mean[id] =
          rng.normal(prior_.mu_mean, std::sqrt(prior_.mu_var));
    }
    params.noise_sd =
        rng.inverse_gamma(prior_.sigma_shape, prior_.sigma_scale);
  }
  return params;
}

// ---------------------------------------------------------------------------
// Unconstrained target
// ---------------------------------------------------------------------------

struct UnconstrainedTarget::Flat {
  int n_internal = 0;
  int n_leaf = 0;
  int n_inputs = 0;
  std::vector<NodeId> internal_ids;
  std::vector<NodeId> leaf_ids;
  // slot encoding: internal a -> a, leaf k -> n_internal + k
  std::vector<int> left_slot, right_slot;  // per internal index
  std::vector<int> pre_order;              // internal idxs, parents first
  std::vector<int> post_order;             // internal idxs, children first
  std::vector<int> leaf_depth;

  // coordinate positions in u (-1 when absent from the layout)
  std::vector<int> tau_pos;
  std::vector<int> delta_pos;  // first simplex coordinate
  std::vector<int> mu_pos;
  int sigma_pos = -1;

  // DF gate inputs, per internal index: column of x values (precomputed)
  std::vector<std::vector<double>> df_gate;

  // scratch, reused across evaluations
  std::vector<double> tau, mu;
  std::vector<std::vector<double>> delta;
  std::vector<tf::StickBreak> delta_sb;
  std::vector<double> psi_row;    // per internal
  std::vector<double> prod;       // per slot
  std::vector<double> agg;        // per slot, subtree sums
  std::vector<double> phi_mat;    // N x n_leaf (classification gradient)
  std::vector<double> psi_mat;    // N x n_internal (classification gradient)
  std::vector<double> counts;     // M x n_leaf soft class counts
  std::vector<double> d_tau, d_mu;
  std::vector<std::vector<double>> d_delta;
};

UnconstrainedTarget::UnconstrainedTarget(const TreeModel& model,
                                         const TreeTopology& topo,
                                         const TreeParams& reference,
                                         ParamLayout layout, SoftnessParam h)
    : model_(&model),
      topo_(&topo),
      reference_(reference),
      layout_(std::move(layout)),
      h_(h),
      flat_(std::make_shared<Flat>()) {
  Flat& f = *flat_;
  f.internal_ids = topo.internal_ids();
  f.leaf_ids = topo.leaf_ids();
  f.n_internal = static_cast<int>(f.internal_ids.size());
  f.n_leaf = static_cast<int>(f.leaf_ids.size());
  f.n_inputs = model.data().num_inputs;

  std::map<NodeId, int> internal_pos, leaf_pos;
  for (int a = 0; a < f.n_internal; ++a) internal_pos[f.internal_ids[a]] = a;
  for (int k = 0; k < f.n_leaf; ++k) leaf_pos[f.leaf_ids[k]] = k;

  f.left_slot.resize(f.n_internal);
  f.right_slot.resize(f.n_internal);
  auto slot_of = [&](NodeId id) {
    auto it = internal_pos.find(id);
    if (it != internal_pos.end()) return it->second;
    return f.n_internal + leaf_pos.at(id);
  };
  for (int a = 0; a < f.n_internal; ++a) {
    const NodeRecord& rec = topo.node(f.internal_ids[a]);
    f.left_slot[a] = slot_of(rec.left);
    f.right_slot[a] = slot_of(rec.right);
  }
  f.leaf_depth.resize(f.n_leaf);
  for (int k = 0; k < f.n_leaf; ++k) {
    f.leaf_depth[k] = topo.node(f.leaf_ids[k]).depth;
  }

  // parents-first order by walking from the root
  if (f.n_internal > 0) {
    std::vector<int> stack = {internal_pos.at(topo.root())};
    while (!stack.empty()) {
      const int a = stack.back();
      stack.pop_back();
      f.pre_order.push_back(a);
      for (int s : {f.left_slot[a], f.right_slot[a]}) {
        if (s < f.n_internal) stack.push_back(s);
      }
    }
    f.post_order = f.pre_order;
    std::reverse(f.post_order.begin(), f.post_order.end());
  }

  f.tau_pos.assign(static_cast<size_t>(f.n_internal), -1);
  f.delta_pos.assign(static_cast<size_t>(f.n_internal), -1);
  f.mu_pos.assign(static_cast<size_t>(f.n_leaf), -1);
  for (int c = 0; c < layout_.size(); ++c) {
    const CoordKey& key = layout_.coords[static_cast<size_t>(c)];
    switch (key.kind) {
      case CoordKind::Threshold:
        f.tau_pos[static_cast<size_t>(internal_pos.at(key.node))] = c;
        break;
      case CoordKind::SplitWeight:
        if (key.sub == 0) {
          f.delta_pos[static_cast<size_t>(internal_pos.at(key.node))] = c;
        }
        break;
      case CoordKind::LeafMean:
        f.mu_pos[static_cast<size_t>(leaf_pos.at(key.node))] = c;
        break;
      case CoordKind::NoiseSd:
        f.sigma_pos = c;
        break;
    }
  }

  // DF gate columns
  if (model.variant() == SplitVariant::DF) {
    const Dataset& data = model.data();
    f.df_gate.resize(static_cast<size_t>(f.n_internal));
    for (int a = 0; a < f.n_internal; ++a) {
      const int dim = reference_.split_index.at(f.internal_ids[a]);
      auto& col = f.df_gate[static_cast<size_t>(a)];
      col.resize(static_cast<size_t>(data.num_points));
      for (int i = 0; i < data.num_points; ++i) col[static_cast<size_t>(i)] = data.input(i, dim);
    }
  }

  f.tau.resize(static_cast<size_t>(f.n_internal));
  f.mu.resize(static_cast<size_t>(f.n_leaf));
  f.delta.resize(static_cast<size_t>(f.n_internal));
  f.delta_sb.resize(static_cast<size_t>(f.n_internal));
  f.psi_row.resize(static_cast<size_t>(f.n_internal));
  f.prod.resize(static_cast<size_t>(f.n_internal + f.n_leaf));
  f.agg.resize(static_cast<size_t>(f.n_internal + f.n_leaf));
  f.d_tau.resize(static_cast<size_t>(f.n_internal));
  f.d_mu.resize(static_cast<size_t>(f.n_leaf));
  f.d_delta.resize(static_cast<size_t>(f.n_internal));
}

TreeParams UnconstrainedTarget::to_params(std::span<const double> u) const {
  TreeParams params = reference_;
  const Flat& f = *flat_;
  for (int a = 0; a < f.n_internal; ++a) {
    const NodeId id = f.internal_ids[static_cast<size_t>(a)];
    if (f.tau_pos[static_cast<size_t>(a)] >= 0) {
      params.split_threshold[id] =
          tf::logistic(u[static_cast<size_t>(f.tau_pos[static_cast<size_t>(a)])]);
    }
    if (f.delta_pos[static_cast<size_t>(a)] >= 0) {
      std::span<const double> block(
          u.data() + f.delta_pos[static_cast<size_t>(a)],
          static_cast<size_t>(f.n_inputs - 1));
      params.split_simplex[id] = tf::stickbreak_constrain(block).simplex;
    }
  }
  for (int k = 0; k < f.n_leaf; ++k) {
    if (f.mu_pos[static_cast<size_t>(k)] >= 0) {
      params.leaf_mean[f.leaf_ids[static_cast<size_t>(k)]] =
          u[static_cast<size_t>(f.mu_pos[static_cast<size_t>(k)])];
    }
  }
  if (f.sigma_pos >= 0) {
    params.noise_sd = std::exp(u[static_cast<size_t>(f.sigma_pos)]);
  }
  return params;
}

std::vector<double> UnconstrainedTarget::from_params(
    const TreeParams& params) const {
  std::vector<double> u(static_cast<size_t>(layout_.size()), 0.0);
  for (int c = 0; c < layout_.size(); ++c) {
    const CoordKey& key = layout_.coords[static_cast<size_t>(c)];
    switch (key.kind) {
      case CoordKind::Threshold:
        u[static_cast<size_t>(c)] =
            tf::logistic_unconstrain(params.split_threshold.at(key.node));
        break;
      case CoordKind::SplitWeight: {
        if (key.sub == 0) {
          const auto block =
              tf::stickbreak_unconstrain(params.split_simplex.at(key.node));
          for (size_t s = 0; s < block.size(); ++s) {
            u[static_cast<size_t>(c) + s] = block[s];
          }
        }
        break;
      }
      case CoordKind::LeafMean:
        u[static_cast<size_t>(c)] = params.leaf_mean.at(key.node);
        break;
      case CoordKind::NoiseSd:
        u[static_cast<size_t>(c)] = tf::exp_unconstrain(params.noise_sd);
        break;
    }
  }
  return u;
}

double UnconstrainedTarget::value(std::span<const double> u) const {
  return eval(u, {}, false);
}

double UnconstrainedTarget::value_grad(std::span<const double> u,
                                       std::span<double> grad) const {
  return eval(u, grad, true);
}

double UnconstrainedTarget::eval(std::span<const double> u,
                                 std::span<double> grad,
                                 bool want_grad) const {
  Flat& f = *flat_;
  const TreeModel& model = *model_;
  const Dataset& data = model.data();
  const double h = h_.h;
  const int N = data.num_points;
  const bool regression = data.task == TaskKind::Regression;
  const bool dfi = model.variant() == SplitVariant::DFI;

  // decode coordinates (falling back to the reference for fixed ones)
  for (int a = 0; a < f.n_internal; ++a) {
    const NodeId id = f.internal_ids[static_cast<size_t>(a)];
    const int tp = f.tau_pos[static_cast<size_t>(a)];
    f.tau[static_cast<size_t>(a)] =
        tp >= 0 ? tf::logistic(u[static_cast<size_t>(tp)])
                : reference_.split_threshold.at(id);
    if (dfi) {
      const int dp = f.delta_pos[static_cast<size_t>(a)];
      if (dp >= 0) {
        std::span<const double> block(u.data() + dp,
                                      static_cast<size_t>(f.n_inputs - 1));
        f.delta_sb[static_cast<size_t>(a)] = tf::stickbreak_constrain(block);
        f.delta[static_cast<size_t>(a)] =
            f.delta_sb[static_cast<size_t>(a)].simplex;
      } else {
        f.delta[static_cast<size_t>(a)] = reference_.split_simplex.at(id);
      }
    }
  }
  double sigma = reference_.noise_sd;
  if (f.sigma_pos >= 0) sigma = std::exp(u[static_cast<size_t>(f.sigma_pos)]);
  for (int k = 0; k < f.n_leaf; ++k) {
    const int mp = f.mu_pos[static_cast<size_t>(k)];
    f.mu[static_cast<size_t>(k)] =
        mp >= 0 ? u[static_cast<size_t>(mp)]
                : (regression
                       ? reference_.leaf_mean.at(f.leaf_ids[static_cast<size_t>(k)])
                       : 0.0);
  }

  if (want_grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(f.d_tau.begin(), f.d_tau.end(), 0.0);
    std::fill(f.d_mu.begin(), f.d_mu.end(), 0.0);
    for (auto& v : f.d_delta) v.assign(static_cast<size_t>(f.n_inputs), 0.0);
  }

  double loglik = 0.0;
  double d_sigma_lik = 0.0;  // dloglik/dsigma (constrained)
  const bool skip_data = model.prior_only();

  if (!skip_data && regression) {
    const double inv_var = 1.0 / (sigma * sigma);
    double sum_sq = 0.0;
    for (int i = 0; i < N; ++i) {
      // gates
      for (int a = 0; a < f.n_internal; ++a) {
        double gate;
        if (dfi) {
          gate = 0.0;
          const auto& w = f.delta[static_cast<size_t>(a)];
          for (int d = 0; d < f.n_inputs; ++d) {
            gate += data.input(i, d) * w[static_cast<size_t>(d)];
          }
        } else {
          gate = f.df_gate[static_cast<size_t>(a)][static_cast<size_t>(i)];
        }
        f.psi_row[static_cast<size_t>(a)] =
            tf::logistic((gate - f.tau[static_cast<size_t>(a)]) / h);
      }
      // path products, parents first
      if (f.n_internal == 0) {
        f.prod[0] = 1.0;
      } else {
        f.prod[static_cast<size_t>(f.pre_order[0])] = 1.0;
        for (int a : f.pre_order) {
          const double p = f.psi_row[static_cast<size_t>(a)];
          const double base = f.prod[static_cast<size_t>(a)];
          f.prod[static_cast<size_t>(f.left_slot[static_cast<size_t>(a)])] =
              base * (1.0 - p);
          f.prod[static_cast<size_t>(f.right_slot[static_cast<size_t>(a)])] =
              base * p;
        }
      }
      const double y = data.reals[static_cast<size_t>(i)];
      double r = 0.0;
      for (int k = 0; k < f.n_leaf; ++k) {
        r += f.prod[static_cast<size_t>(f.n_internal + k)] *
             (f.mu[static_cast<size_t>(k)] - y);
      }
      sum_sq += r * r;

      if (want_grad) {
        // agg holds sums over subtree leaves of dL/dphi * phi
        for (int k = 0; k < f.n_leaf; ++k) {
          const double phi = f.prod[static_cast<size_t>(f.n_internal + k)];
          const double resid = f.mu[static_cast<size_t>(k)] - y;
          f.agg[static_cast<size_t>(f.n_internal + k)] =
              -inv_var * r * resid * phi;
          f.d_mu[static_cast<size_t>(k)] += -inv_var * r * phi;
        }
        for (int a : f.post_order) {
          f.agg[static_cast<size_t>(a)] =
              f.agg[static_cast<size_t>(f.left_slot[static_cast<size_t>(a)])] +
              f.agg[static_cast<size_t>(f.right_slot[static_cast<size_t>(a)])];
        }
        for (int a = 0; a < f.n_internal; ++a) {
          const double p = f.psi_row[static_cast<size_t>(a)];
          // d loglik / d z_a for this datapoint
          const double g =
              (1.0 - p) *
                  f.agg[static_cast<size_t>(f.right_slot[static_cast<size_t>(a)])] -
              p * f.agg[static_cast<size_t>(f.left_slot[static_cast<size_t>(a)])];
          f.d_tau[static_cast<size_t>(a)] += -g / h;
          if (dfi) {
            auto& dd = f.d_delta[static_cast<size_t>(a)];
            for (int d = 0; d < f.n_inputs; ++d) {
              dd[static_cast<size_t>(d)] += g * data.input(i, d) / h;
            }
          }
        }
      }
    }
    loglik = -0.5 * N * std::log(2.0 * M_PI * sigma * sigma) -
             0.5 * inv_var * sum_sq;
    d_sigma_lik = -N / sigma + sum_sq / (sigma * sigma * sigma);
  } else if (!skip_data) {
    // classification: first pass builds phi and the per-class soft counts
    const int M = data.num_classes;
    const auto& alpha = model.class_alpha_;
    const double alpha_total = model.class_alpha_total_;
    f.phi_mat.assign(static_cast<size_t>(N) * f.n_leaf, 0.0);
    if (want_grad) {
      f.psi_mat.assign(static_cast<size_t>(N) * std::max(f.n_internal, 1), 0.0);
    }
    f.counts.assign(static_cast<size_t>(M) * f.n_leaf, 0.0);

    for (int i = 0; i < N; ++i) {
      for (int a = 0; a < f.n_internal; ++a) {
        double gate;
        if (dfi) {
          gate = 0.0;
          const auto& w = f.delta[static_cast<size_t>(a)];
          for (int d = 0; d < f.n_inputs; ++d) {
            gate += data.input(i, d) * w[static_cast<size_t>(d)];
          }
        } else {
          gate = f.df_gate[static_cast<size_t>(a)][static_cast<size_t>(i)];
        }
        const double p =
            tf::logistic((gate - f.tau[static_cast<size_t>(a)]) / h);
        f.psi_row[static_cast<size_t>(a)] = p;
        if (want_grad) {
          f.psi_mat[static_cast<size_t>(i) * f.n_internal + a] = p;
        }
      }
      if (f.n_internal == 0) {
        f.prod[0] = 1.0;
      } else {
        f.prod[static_cast<size_t>(f.pre_order[0])] = 1.0;
        for (int a : f.pre_order) {
          const double p = f.psi_row[static_cast<size_t>(a)];
          const double base = f.prod[static_cast<size_t>(a)];
          f.prod[static_cast<size_t>(f.left_slot[static_cast<size_t>(a)])] =
              base * (1.0 - p);
          f.prod[static_cast<size_t>(f.right_slot[static_cast<size_t>(a)])] =
              base * p;
        }
      }
      const int m = data.labels[static_cast<size_t>(i)] - 1;
      for (int k = 0; k < f.n_leaf; ++k) {
        const double phi = f.prod[static_cast<size_t>(f.n_internal + k)];
        f.phi_mat[static_cast<size_t>(i) * f.n_leaf + k] = phi;
        f.counts[static_cast<size_t>(m) * f.n_leaf + k] += phi;
      }
    }

    for (int k = 0; k < f.n_leaf; ++k) {
      double leaf_total = 0.0;
      for (int m = 0; m < M; ++m) {
        const double cnt = f.counts[static_cast<size_t>(m) * f.n_leaf + k];
        leaf_total += cnt;
        loglik += std::lgamma(cnt + alpha[static_cast<size_t>(m)]) -
                  std::lgamma(alpha[static_cast<size_t>(m)]);
      }
      loglik += std::lgamma(alpha_total) - std::lgamma(leaf_total + alpha_total);
    }

    if (want_grad && f.n_internal > 0) {
      // digamma factors shared by every datapoint
      std::vector<double> dig_class(static_cast<size_t>(M) * f.n_leaf);
      std::vector<double> dig_total(static_cast<size_t>(f.n_leaf));
      for (int k = 0; k < f.n_leaf; ++k) {
        double leaf_total = 0.0;
        for (int m = 0; m < M; ++m) {
          const double cnt = f.counts[static_cast<size_t>(m) * f.n_leaf + k];
          leaf_total += cnt;
          dig_class[static_cast<size_t>(m) * f.n_leaf + k] =
              digamma(cnt + alpha[static_cast<size_t>(m)]);
        }
        dig_total[static_cast<size_t>(k)] = digamma(leaf_total + alpha_total);
      }
      for (int i = 0; i < N; ++i) {
        const int m = data.labels[static_cast<size_t>(i)] - 1;
        for (int k = 0; k < f.n_leaf; ++k) {
          const double phi = f.phi_mat[static_cast<size_t>(i) * f.n_leaf + k];
          f.agg[static_cast<size_t>(f.n_internal + k)] =
              phi * (dig_class[static_cast<size_t>(m) * f.n_leaf + k] -
                     dig_total[static_cast<size_t>(k)]);
        }
        for (int a : f.post_order) {
          f.agg[static_cast<size_t>(a)] =
              f.agg[static_cast<size_t>(f.left_slot[static_cast<size_t>(a)])] +
              f.agg[static_cast<size_t>(f.right_slot[static_cast<size_t>(a)])];
        }
        for (int a = 0; a < f.n_internal; ++a) {
          const double p = f.psi_mat[static_cast<size_t>(i) * f.n_internal + a];
          const double g =
              (1.0 - p) *
                  f.agg[static_cast<size_t>(f.right_slot[static_cast<size_t>(a)])] -
              p * f.agg[static_cast<size_t>(f.left_slot[static_cast<size_t>(a)])];
          f.d_tau[static_cast<size_t>(a)] += -g / h;
          if (dfi) {
            auto& dd = f.d_delta[static_cast<size_t>(a)];
            for (int d = 0; d < f.n_inputs; ++d) {
              dd[static_cast<size_t>(d)] += g * data.input(i, d) / h;
            }
          }
        }
      }
    }
  }

  // priors in constrained space + constraint-map Jacobians of sampled coords
  const PriorConfig& prior = model.prior();
  double logp = loglik + model.logprior_topology(*topo_);

  for (int a = 0; a < f.n_internal; ++a) {
    const NodeId id = f.internal_ids[static_cast<size_t>(a)];
    const int tp = f.tau_pos[static_cast<size_t>(a)];
    if (tp >= 0) {
      const double ut = u[static_cast<size_t>(tp)];
      logp += tf::log_logistic_deriv(ut);  // tau prior itself is flat
      if (want_grad) {
        grad[static_cast<size_t>(tp)] =
            f.d_tau[static_cast<size_t>(a)] * tf::logistic_deriv(ut) +
            tf::log_logistic_deriv_grad(ut);
      }
    }
    if (!dfi) {
      logp += std::log(model.index_probs_[static_cast<size_t>(
          reference_.split_index.at(id))]);
      continue;
    }
    // Dirichlet prior on the simplex + stick-breaking Jacobian
    const auto& simplex = f.delta[static_cast<size_t>(a)];
    const int K = f.n_inputs;
    const double a0 = prior.simplex_alpha;
    logp += std::lgamma(a0 * K) - K * std::lgamma(a0);
    for (double v : simplex) logp += (a0 - 1.0) * std::log(v);

    const int dp = f.delta_pos[static_cast<size_t>(a)];
    if (dp >= 0) {
      std::span<const double> block(u.data() + dp,
                                    static_cast<size_t>(K - 1));
      logp += tf::stickbreak_log_jacobian(block);
      if (want_grad) {
        auto total_simplex_grad = f.d_delta[static_cast<size_t>(a)];
        if (total_simplex_grad.empty()) {
          total_simplex_grad.assign(static_cast<size_t>(K), 0.0);
        }
        for (int d = 0; d < K; ++d) {
          total_simplex_grad[static_cast<size_t>(d)] +=
              (a0 - 1.0) / simplex[static_cast<size_t>(d)];
        }
        const auto pulled =
            f.delta_sb[static_cast<size_t>(a)].vjp(total_simplex_grad);
        const auto jac_grad = tf::stickbreak_log_jacobian_grad(block);
        for (int s = 0; s < K - 1; ++s) {
          grad[static_cast<size_t>(dp + s)] =
              pulled[static_cast<size_t>(s)] + jac_grad[static_cast<size_t>(s)];
        }
      }
    }
  }

  if (regression) {
    for (int k = 0; k < f.n_leaf; ++k) {
      const double mu = f.mu[static_cast<size_t>(k)];
      const double d = mu - prior.mu_mean;
      logp += -0.5 * std::log(2.0 * M_PI * prior.mu_var) -
              d * d / (2.0 * prior.mu_var);
      const int mp = f.mu_pos[static_cast<size_t>(k)];
      if (mp >= 0 && want_grad) {
        grad[static_cast<size_t>(mp)] =
            f.d_mu[static_cast<size_t>(k)] - d / prior.mu_var;
      }
    }
    logp += prior.sigma_shape * std::log(prior.sigma_scale) -
            std::lgamma(prior.sigma_shape) -
            (prior.sigma_shape + 1.0) * std::log(sigma) -
            prior.sigma_scale / sigma;
    if (f.sigma_pos >= 0) {
      logp += u[static_cast<size_t>(f.sigma_pos)];  // log dsigma/du = u
      if (want_grad) {
        grad[static_cast<size_t>(f.sigma_pos)] =
            d_sigma_lik * sigma - prior.sigma_shape +
            prior.sigma_scale / sigma;
      }
    }
  }

  return logp;
}

double TreeModel::loglik(const TreeTopology& topo, const TreeParams& params,
                         SoftnessParam h) const {
  if (options_.prior_only) return 0.0;
  const LeafWeights weights = leaf_weights(topo, params, h);
  const int N = weights.rows;
  const int L = weights.cols;

  if (data_->task == TaskKind::Regression) {
    const double sigma = params.noise_sd;
    double sum_sq = 0.0;
    for (int i = 0; i < N; ++i) {
      const double y = data_->reals[static_cast<size_t>(i)];
      double r = 0.0;
      for (int k = 0; k < L; ++k) {
        r += weights.at(i, k) *
             (params.leaf_mean.at(weights.leaf_order[static_cast<size_t>(k)]) -
              y);
      }
      sum_sq += r * r;
    }
    return -0.5 * N * std::log(2.0 * M_PI * sigma * sigma) -
           0.5 * sum_sq / (sigma * sigma);
  }

  const int M = data_->num_classes;
  std::vector<double> counts(static_cast<size_t>(M) * L, 0.0);
  for (int i = 0; i < N; ++i) {
    const int m = data_->labels[static_cast<size_t>(i)] - 1;
    for (int k = 0; k < L; ++k) {
      counts[static_cast<size_t>(m) * L + k] += weights.at(i, k);
    }
  }
  double total = 0.0;
  for (int k = 0; k < L; ++k) {
    double leaf_total = 0.0;
    for (int m = 0; m < M; ++m) {
      const double cnt = counts[static_cast<size_t>(m) * L + k];
      leaf_total += cnt;
      total += std::lgamma(cnt + class_alpha_[static_cast<size_t>(m)]) -
               std::lgamma(class_alpha_[static_cast<size_t>(m)]);
    }
    total +=
        std::lgamma(class_alpha_total_) - std::lgamma(leaf_total + class_alpha_total_);
  }
  return total;
}

double TreeModel::log_posterior(const TreeTopology& topo,
                                const TreeParams& params,
                                SoftnessParam h) const {
  return loglik(topo, params, h) + logprior(topo, params);
}

}  // namespace treehmc
