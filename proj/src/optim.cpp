#include "stein_cv/optim.hpp"

#include <cmath>

#include "stein_cv/error.hpp"

namespace steincv {

Adam::Adam(int num_params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(Vector::Zero(num_params)), v_(Vector::Zero(num_params)) {
  Require(lr > 0.0, ErrorCode::kInvalidArgument, "learning rate must be positive");
}

Vector Adam::Step(const VectorRef& params, const VectorRef& grad) {
  Require(params.size() == m_.size() && grad.size() == m_.size(),
          ErrorCode::kDimension, "optimizer state has the wrong size");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  Vector step =
      ((lr_ / c1) * m_.array() / ((v_.array() / c2).sqrt() + eps_)).matrix();
  if (mask_.size() == step.size()) step = step.cwiseProduct(mask_);
  return params - step;
}

}  // namespace steincv
