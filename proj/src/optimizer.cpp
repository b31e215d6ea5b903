#include "kfv/optimizer.hpp"

#include <cmath>
#include <string>

namespace kfv {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd" || name == "gd") return OptimizerKind::GradientDescent;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd, adam)");
}

std::string_view optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

void Optimizer::step(std::span<const ParamView> params) {
  ++t_;
  if (kind_ == OptimizerKind::GradientDescent) {
    for (const auto& p : params)
      for (Eigen::Index i = 0; i < p.size; ++i) p.value[i] -= lr_ * p.grad[i];
    return;
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Vec::Zero(p.size));
      v_.push_back(Vec::Zero(p.size));
    }
  }
  if (m_.size() != params.size()) throw ContractViolation("optimizer parameter list changed");
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    Vec& m = m_[k];
    Vec& v = v_[k];
    if (m.size() != p.size) throw ContractViolation("optimizer parameter shape changed");
    for (Eigen::Index i = 0; i < p.size; ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

}  // namespace kfv
