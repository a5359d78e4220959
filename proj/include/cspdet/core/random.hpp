#pragma once

// Seeded randomness. Every stochastic component owns an Rng forked from
// the run seed with a fixed stream id, so parallel or reordered use of
// one component cannot perturb another.

#include <algorithm>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace cspdet {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  Rng fork(std::uint64_t stream) { return Rng(mix_seed(eng_(), stream)); }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(eng_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(eng_); }

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, eng_);
  }

  // Draws k distinct indices from [0, n) in selection order.
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    k = std::min(k, n);
    for (int i = 0; i < k; ++i) std::swap(idx[i], idx[uniform_int(i, n - 1)]);
    idx.resize(k);
    return idx;
  }

  std::string save_state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }
  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (is.fail()) throw std::invalid_argument("malformed rng state");
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace cspdet
