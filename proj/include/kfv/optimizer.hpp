#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "kfv/common.hpp"

namespace kfv {

enum class OptimizerKind { GradientDescent, Adam };

OptimizerKind parse_optimizer_kind(std::string_view name);  // sgd | adam
std::string_view optimizer_kind_name(OptimizerKind kind);

// A flat view of one parameter tensor and its gradient.
struct ParamView {
  double* value;
  const double* grad;
  Eigen::Index size;
};

template <typename Derived, typename GradDerived>
ParamView param_view(Eigen::PlainObjectBase<Derived>& value,
                     const Eigen::PlainObjectBase<GradDerived>& grad) {
  if (value.size() != grad.size()) throw ContractViolation("parameter/gradient size mismatch");
  return {value.data(), grad.data(), value.size()};
}

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  // The parameter list must keep the same order and shapes across calls.
  void step(std::span<const ParamView> params);

  long steps() const { return t_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<Vec> m_;
  std::vector<Vec> v_;
};

}  // namespace kfv
