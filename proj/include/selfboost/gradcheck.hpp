#pragma once

#include <functional>
#include <string>
#include <vector>

#include "selfboost/autodiff.hpp"

namespace selfboost {

/// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

struct GradcheckItem {
  std::string name;
  double worst = 0.0;       // worst relative error over all coordinates
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  bool passed() const { return worst < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckItem> items;
  double seconds = 0.0;

  bool passed() const;
  double worst() const;
  /// One aligned line per item plus a summary line.
  std::string table() const;
};

/// Builds a scalar on `tape` from the given input variables.
using Objective = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Reverse-mode gradient of `f` at `inputs` against central differences.
GradcheckItem check_gradient(const std::string& name, const Objective& f, const std::vector<Tensor<double>>& inputs,
                             double tolerance = 1e-4, double h = 1e-5);

/// Gradient of <grad f, u> (a Hessian-vector product through the tape) against
/// central differences of grad f along a random direction u.
GradcheckItem check_second_order(const std::string& name, const Objective& f,
                                 const std::vector<Tensor<double>>& inputs, std::uint64_t seed,
                                 double tolerance = 1e-3, double h = 1e-5);

enum class GradcheckScope { ops, losses, hypergrad };
GradcheckScope parse_gradcheck_scope(const std::string& name);

/// Every differentiable op, first and second order (tolerances 1e-4 / 1e-3).
GradcheckReport gradcheck_ops(std::uint64_t seed);
/// Every loss on small random instances (tolerance 1e-4).
GradcheckReport gradcheck_losses(std::uint64_t seed);
/// Meta-gradient on the tiny instance (K=2, widths [2,4], batch 4, C=3)
/// against differences of the post-step test loss (tolerance 1e-3).
GradcheckReport gradcheck_hypergrad(std::uint64_t seed);

/// The named suite; `inject_fault` adds an op whose backward is deliberately wrong.
GradcheckReport run_gradcheck(GradcheckScope scope, std::uint64_t seed, bool inject_fault);

/// The corrupted op used by fault injection: forward x^2, backward 3x.
Var<double> corrupted_square(const Var<double>& x);

}  // namespace selfboost
