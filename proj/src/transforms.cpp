#include "treehmc/transforms.hpp"

#include <cmath>
#include <string>

namespace treehmc::transforms {

double logistic(double u) {
  if (u >= 0.0) {
    return 1.0 / (1.0 + std::exp(-u));
  }
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double logit(double x) { return std::log(x) - std::log1p(-x); }

double logistic_deriv(double u) {
  const double e = std::exp(-std::fabs(u));
  const double denom = 1.0 + e;
  return e / (denom * denom);
}

namespace {
// log(1 + exp(a)) without overflow.
double log1p_exp(double a) {
  if (a > 0.0) return a + std::log1p(std::exp(-a));
  return std::log1p(std::exp(a));
}
}  // namespace

double log_logistic_deriv(double u) {
  // log f'(u) = -|u| - 2 log(1 + exp(-|u|))
  const double a = -std::fabs(u);
  return a - 2.0 * std::log1p(std::exp(a));
}

double log_logistic_deriv_grad(double u) { return 1.0 - 2.0 * logistic(u); }

ValueDeriv logistic_constrain(double u) {
  return {logistic(u), logistic_deriv(u)};
}

double logistic_unconstrain(double x) {
  if (!(x > 0.0) || !(x < 1.0)) {
    throw DomainError("unit-interval value out of (0,1): " + std::to_string(x));
  }
  return logit(x);
}

ValueDeriv exp_constrain(double u) {
  const double e = std::exp(u);
  return {e, e};
}

double exp_unconstrain(double x) {
  if (!(x > 0.0)) {
    throw DomainError("positive value required, got " + std::to_string(x));
  }
  return std::log(x);
}

StickBreak stickbreak_constrain(std::span<const double> u) {
  const size_t k1 = u.size();  // K - 1
  StickBreak out;
  out.simplex.resize(k1 + 1);
  out.breaks.resize(k1);
  double stick = 1.0;
  for (size_t k = 0; k < k1; ++k) {
    const double z = logistic(u[k] - std::log(static_cast<double>(k1 - k)));
    out.breaks[k] = z;
    out.simplex[k] = stick * z;
    stick -= out.simplex[k];
  }
  out.simplex[k1] = stick;
  return out;
}

std::vector<double> StickBreak::vjp(std::span<const double> simplex_grad) const {
  // x_k = z_k * prod_{i<k} (1 - z_i), so for j < k: dx_k/du_j = -x_k z_j,
  // and dx_j/du_j = (s_j - x_j) z_j (1 - z_j) / (1 - z_j) ... collapsed:
  //   (J^T w)_j = z_j * [ w_j (s_j - x_j) - sum_{k>j} w_k x_k ]
  // with s_j the stick remaining before break j.
  const size_t k1 = breaks.size();
  std::vector<double> out(k1, 0.0);
  double tail = simplex_grad[k1] * simplex[k1];  // sum_{k>j} w_k x_k
  double stick_after = 1.0;
  for (size_t i = 0; i < k1; ++i) stick_after -= simplex[i];
  // walk j from last break to first, maintaining tail and stick
  for (size_t j = k1; j-- > 0;) {
    const double s_after_j = stick_after;  // s_j - x_j = stick after break j
    out[j] = breaks[j] * (simplex_grad[j] * s_after_j - tail);
    tail += simplex_grad[j] * simplex[j];
    stick_after += simplex[j];
  }
  return out;
}

std::vector<double> stickbreak_unconstrain(std::span<const double> simplex) {
  const size_t k = simplex.size();
  if (k < 2) throw DomainError("simplex needs at least 2 components");
  std::vector<double> u(k - 1);
  double stick = 1.0;
  for (size_t i = 0; i + 1 < k; ++i) {
    if (!(simplex[i] > 0.0) || !(stick > simplex[i])) {
      throw DomainError("simplex component at boundary");
    }
    const double z = simplex[i] / stick;
    u[i] = logit(z) + std::log(static_cast<double>(k - 1 - i));
    stick -= simplex[i];
  }
  return u;
}

double stickbreak_log_jacobian(std::span<const double> u) {
  const size_t k1 = u.size();
  double total = 0.0;
  double log_stick = 0.0;
  for (size_t k = 0; k < k1; ++k) {
    const double a = u[k] - std::log(static_cast<double>(k1 - k));
    // log z + log(1-z) = -log1pexp(-a) - log1pexp(a)
    total += log_stick - log1p_exp(-a) - log1p_exp(a);
    log_stick += -log1p_exp(a);  // log(1 - z_k)
  }
  return total;
}

std::vector<double> stickbreak_log_jacobian_grad(std::span<const double> u) {
  // d/du_j [ sum_k log z_k + log(1-z_k) + log s_k ]
  //   = (1 - 2 z_j) - (#slots after j) * z_j
  const size_t k1 = u.size();
  std::vector<double> g(k1);
  for (size_t j = 0; j < k1; ++j) {
    const double z = logistic(u[j] - std::log(static_cast<double>(k1 - j)));
    g[j] = 1.0 - 2.0 * z - static_cast<double>(k1 - 1 - j) * z;
  }
  return g;
}

UnconstrainedValue unconstrain(const ConstrainedValue& x) {
  UnconstrainedValue out;
  switch (x.kind) {
    case ConstraintKind::UnitInterval:
      out.value = {logistic_unconstrain(x.value.at(0))};
      break;
    case ConstraintKind::Positive:
      out.value = {exp_unconstrain(x.value.at(0))};
      break;
    case ConstraintKind::Simplex:
      out.value = stickbreak_unconstrain(x.value);
      break;
  }
  return out;
}

ConstrainedValue constrain(ConstraintKind kind, const UnconstrainedValue& u) {
  ConstrainedValue out;
  out.kind = kind;
  switch (kind) {
    case ConstraintKind::UnitInterval:
      out.value = {logistic(u.value.at(0))};
      break;
    case ConstraintKind::Positive:
      out.value = {std::exp(u.value.at(0))};
      break;
    case ConstraintKind::Simplex:
      out.value = stickbreak_constrain(u.value).simplex;
      break;
  }
  return out;
}

}  // namespace treehmc::transforms
