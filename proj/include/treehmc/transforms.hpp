#ifndef TREEHMC_TRANSFORMS_HPP
#define TREEHMC_TRANSFORMS_HPP

#include <span>
#include <vector>

#include "treehmc/errors.hpp"

namespace treehmc::transforms {

// Numerically stable logistic and companions. The negative branch avoids
// exp overflow for large |u|.
double logistic(double u);
double logit(double x);
// d logistic / du = exp(-u) / (1+exp(-u))^2, the factor in front of every
// threshold gradient.
double logistic_deriv(double u);
// log logistic'(u), the change-of-variables term for unit-interval coords.
double log_logistic_deriv(double u);
// d/du log logistic'(u) = 1 - 2*logistic(u).
double log_logistic_deriv_grad(double u);

struct ValueDeriv {
  double value;
  double deriv;
};

// (0,1) <-> R via the logistic map.
ValueDeriv logistic_constrain(double u);
double logistic_unconstrain(double x);

// (0,inf) <-> R via exp.
ValueDeriv exp_constrain(double u);
double exp_unconstrain(double x);

// Stick-breaking simplex transform. K-simplex from K-1 unconstrained
// coordinates; the log(K-1-k) offsets center the zero vector on the uniform
// simplex.
struct StickBreak {
  std::vector<double> simplex;  // length K
  std::vector<double> breaks;   // z_k, length K-1

  // Pullback of a gradient w.r.t. the simplex coordinates: returns J^T w.
  std::vector<double> vjp(std::span<const double> simplex_grad) const;
};

StickBreak stickbreak_constrain(std::span<const double> u);
std::vector<double> stickbreak_unconstrain(std::span<const double> simplex);
double stickbreak_log_jacobian(std::span<const double> u);
std::vector<double> stickbreak_log_jacobian_grad(std::span<const double> u);

// Generic tagged values for callers that work over mixed parameter blocks.
enum class ConstraintKind { UnitInterval, Positive, Simplex };

struct ConstrainedValue {
  ConstraintKind kind;
  std::vector<double> value;  // scalars stored as a 1-vector
};

struct UnconstrainedValue {
  std::vector<double> value;
};

UnconstrainedValue unconstrain(const ConstrainedValue& x);
ConstrainedValue constrain(ConstraintKind kind, const UnconstrainedValue& u);

}  // namespace treehmc::transforms

#endif  // TREEHMC_TRANSFORMS_HPP
