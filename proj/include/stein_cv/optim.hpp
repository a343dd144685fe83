#ifndef STEIN_CV_OPTIM_HPP_
#define STEIN_CV_OPTIM_HPP_

#include "stein_cv/diffnet.hpp"

namespace steincv {

// Adaptive-moment optimizer over a flat parameter vector (minimizes).
class Adam {
 public:
  Adam(int num_params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  // Returns the updated parameters.
  Vector Step(const VectorRef& params, const VectorRef& grad);
  // Coordinates with mask(i) == 0 are never moved.
  void set_mask(const Vector& mask) { mask_ = mask; }

  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  Vector m_, v_, mask_;
  long t_ = 0;
};

}  // namespace steincv

#endif  // STEIN_CV_OPTIM_HPP_
