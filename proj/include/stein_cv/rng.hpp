#ifndef STEIN_CV_RNG_HPP_
#define STEIN_CV_RNG_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace steincv {

// Seeded generator addressed by (seed, stream). Child streams are derived by
// hashing, so a draw is reproducible from its address alone, independent of
// how many draws other streams consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  // Child stream keyed by a path of integers, e.g. {iteration, episode}.
  Rng Child(std::initializer_list<std::uint64_t> path) const;

  double Normal();
  double Uniform(double lo, double hi);
  std::uint64_t NextU64();
  Eigen::VectorXd NormalVector(int n);

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

std::uint64_t MixBits(std::uint64_t x);

}  // namespace steincv

#endif  // STEIN_CV_RNG_HPP_
