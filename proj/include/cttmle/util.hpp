#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cttmle {

// ---- error taxonomy -------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define CTTMLE_ERROR(Name)                                  \
  struct Name : Error {                                     \
    explicit Name(const std::string& msg) : Error(msg) {}   \
  }

CTTMLE_ERROR(TieError);
CTTMLE_ERROR(PostTerminalEvent);
CTTMLE_ERROR(OutOfRange);
CTTMLE_ERROR(UnknownFeature);
CTTMLE_ERROR(ConfigError);
CTTMLE_ERROR(EmptyRiskSet);
CTTMLE_ERROR(DegenerateDesign);
CTTMLE_ERROR(FoldTooSmall);
CTTMLE_ERROR(NoConvergence);
CTTMLE_ERROR(TooLarge);
CTTMLE_ERROR(ZeroDenominator);
CTTMLE_ERROR(UnfittedModel);
CTTMLE_ERROR(MisalignedCohorts);
CTTMLE_ERROR(SparseTimePoint);
CTTMLE_ERROR(IoError);

#undef CTTMLE_ERROR

// ---- numerics --------------------------------------------------------------

inline double expit(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

// Linear predictors are truncated at +/-30 before applying the inverse link;
// this keeps inverse-probability factors finite under separation.
constexpr double kLinPredClamp = 30.0;
constexpr double kHazardCeil = 1.0 - 1e-8;

inline double clamped_expit(double lp) { return expit(clamp(lp, -kLinPredClamp, kLinPredClamp)); }

// ---- RNG -------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// xoshiro256**; explicit so streams are identical across platforms/compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : s_) {
      x = splitmix64(x);
      word = x;
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }
  bool bernoulli(double p) { return uniform() < p; }
  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  double normal() {
    // Box-Muller; one value per call keeps draw counts predictable.
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1 + 1e-300)) * std::cos(6.283185307179586 * u2);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
};

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
}

// ---- deterministic parallel map --------------------------------------------

// Runs fn(i) for i in [0, n). Results must be written to preallocated
// per-index slots inside fn; the schedule never affects output.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<std::size_t>(jobs, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace cttmle
