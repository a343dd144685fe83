#include "stein_cv/rng.hpp"

namespace steincv {

std::uint64_t MixBits(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::mt19937_64 MakeEngine(std::uint64_t key) {
  std::seed_seq seq{static_cast<std::uint32_t>(key),
                    static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(MixBits(key)),
                    static_cast<std::uint32_t>(MixBits(key) >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_(MixBits(MixBits(seed) ^ (stream * 0xd1342543de82ef95ULL + 1))),
      engine_(MakeEngine(key_)) {}

Rng Rng::Child(std::initializer_list<std::uint64_t> path) const {
  std::uint64_t k = key_;
  for (std::uint64_t p : path) k = MixBits(k ^ MixBits(p + 0x632be59bd9b4e019ULL));
  return Rng(k, 0x5851f42d4c957f2dULL);
}

double Rng::Normal() { return normal_(engine_); }

double Rng::Uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

std::uint64_t Rng::NextU64() { return engine_(); }

Eigen::VectorXd Rng::NormalVector(int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = Normal();
  return v;
}

}  // namespace steincv
