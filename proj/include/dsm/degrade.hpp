#pragma once

#include "dsm/types.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dsm {

/// Grayscale patch, row-major, pixel values in [0, 1].
struct Patch {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Patch() = default;
  Patch(int h, int w, double fill = 0.0);

  double& at(int r, int c) { return pixels[static_cast<std::size_t>(r * width + c)]; }
  double at(int r, int c) const { return pixels[static_cast<std::size_t>(r * width + c)]; }
  std::size_t size() const { return pixels.size(); }

  Vec flatten() const;
  static Patch from_vector(const Vec& v, int h, int w);

  bool operator==(const Patch&) const = default;
};

struct DegradationConfig {
  double blur_sigma = 1.0;
  int kernel_radius = 3;
  int downsample_factor = 2;
  double noise_sigma = 0.05;
  int jpeg_quality = 50;
  std::uint64_t rng_seed = 0;
  bool second_order = false;  // one more blur/noise/JPEG round without resize

  void validate() const;
};

Patch gaussian_blur(const Patch& p, double sigma, int radius);
Patch downsample(const Patch& p, int factor);
Patch upsample_nearest(const Patch& p, int factor);
Patch add_noise(const Patch& p, double sigma, std::uint64_t seed);
Patch jpeg_like(const Patch& p, int quality);

/// Quantization table for the given quality (standard luminance table scaled
/// libjpeg-style), row-major 8x8.
std::vector<int> jpeg_quant_table(int quality);

/// blur -> downsample -> noise -> jpeg_like.
Patch degrade(const Patch& p, const DegradationConfig& cfg);

Patch clamp01(Patch p);

void write_pgm(const std::filesystem::path& path, const Patch& p);
Patch read_pgm(const std::filesystem::path& path);

}  // namespace dsm
