#pragma once

#include "dsm/types.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>

namespace dsm {

using Engine = std::mt19937_64;

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);

/// Child seed for a named purpose; stable across runs and platforms.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);
/// Child seed for an indexed item (e.g. per-patch degradation noise).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// One engine per purpose ("data", "init", "diffusion-noise", "timestep", ...)
/// all derived from a single root seed. Drawing from one stream never shifts
/// another, so changing e.g. the batch size leaves initialization untouched.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed) : seed_(seed) {}

  Engine& stream(std::string_view name);
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, Engine, std::less<>> streams_;
};

void fill_normal(Mat& m, Engine& eng);
Vec normal_vector(Eigen::Index n, Engine& eng);
double uniform01(Engine& eng);

}  // namespace dsm
