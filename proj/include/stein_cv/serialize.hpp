#ifndef STEIN_CV_SERIALIZE_HPP_
#define STEIN_CV_SERIALIZE_HPP_

#include <string>

#include "stein_cv/baseline.hpp"
#include "stein_cv/policy.hpp"

namespace steincv {

// Line-oriented text with a header naming dims, layer shapes, activations and
// the flattening version, followed by the flat parameter vector (%.17g, so
// the round trip is exact).
std::string SerializePolicy(const GaussianPolicy& policy);
GaussianPolicy DeserializePolicy(const std::string& text);

std::string SerializeBaseline(const Baseline& baseline);
Baseline DeserializeBaseline(const std::string& text);

}  // namespace steincv

#endif  // STEIN_CV_SERIALIZE_HPP_
