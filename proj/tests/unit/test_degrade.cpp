#include "dsm/degrade.hpp"
#include "dsm/metrics.hpp"
#include "dsm/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace dsm;

namespace {

Patch random_patch(int h, int w, std::uint64_t seed) {
  Engine eng(seed);
  Patch p(h, w);
  for (double& v : p.pixels) v = uniform01(eng);
  return p;
}

Patch smooth_patch(int n) {
  Patch p(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) p.at(r, c) = 0.5 + 0.3 * std::sin(0.2 * r) * std::cos(0.15 * c);
  }
  return p;
}

// Direct 2-D convolution with an explicitly mirrored index.
Patch blur_oracle(const Patch& p, double sigma, int radius) {
  auto mirror = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += std::exp(-0.5 * i * i / (sigma * sigma));
  Patch out(p.height, p.width);
  for (int r = 0; r < p.height; ++r) {
    for (int c = 0; c < p.width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        for (int j = -radius; j <= radius; ++j) {
          const double k = std::exp(-0.5 * (i * i + j * j) / (sigma * sigma)) / (norm * norm);
          acc += k * p.at(mirror(r + i, p.height), mirror(c + j, p.width));
        }
      }
      out.at(r, c) = std::clamp(acc, 0.0, 1.0);
    }
  }
  return out;
}

// Block DCT round trip written from the textbook DCT-II definition.
Patch jpeg_oracle(const Patch& p, int quality) {
  const auto q = jpeg_quant_table(quality);
  auto C = [](int u) { return u == 0 ? 1.0 / std::sqrt(2.0) : 1.0; };
  Patch out(p.height, p.width);
  for (int br = 0; br < p.height; br += 8) {
    for (int bc = 0; bc < p.width; bc += 8) {
      double F[8][8];
      for (int u = 0; u < 8; ++u) {
        for (int v = 0; v < 8; ++v) {
          double s = 0.0;
          for (int x = 0; x < 8; ++x) {
            for (int y = 0; y < 8; ++y) {
              s += (p.at(br + x, bc + y) * 255.0 - 128.0) * std::cos((2 * x + 1) * u * std::numbers::pi / 16) *
                   std::cos((2 * y + 1) * v * std::numbers::pi / 16);
            }
          }
          const double step = q[std::size_t(u * 8 + v)];
          F[u][v] = std::round(0.25 * C(u) * C(v) * s / step) * step;
        }
      }
      for (int x = 0; x < 8; ++x) {
        for (int y = 0; y < 8; ++y) {
          double s = 0.0;
          for (int u = 0; u < 8; ++u) {
            for (int v = 0; v < 8; ++v) {
              s += C(u) * C(v) * F[u][v] * std::cos((2 * x + 1) * u * std::numbers::pi / 16) *
                   std::cos((2 * y + 1) * v * std::numbers::pi / 16);
            }
          }
          out.at(br + x, bc + y) = std::clamp((0.25 * s + 128.0) / 255.0, 0.0, 1.0);
        }
      }
    }
  }
  return out;
}

double max_abs_diff(const Patch& a, const Patch& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

}  // namespace

TEST_CASE("quantization table") {
  const auto q50 = jpeg_quant_table(50);
  CHECK(q50[0] == 16);
  CHECK(q50[63] == 99);
  for (int v : jpeg_quant_table(100)) CHECK(v == 1);
  const auto q10 = jpeg_quant_table(10);
  CHECK(q10[0] == 80);
  CHECK(q10[63] == 255);
  CHECK_THROWS_AS(jpeg_quant_table(0), std::invalid_argument);
}

TEST_CASE("gaussian blur matches direct 2-D convolution") {
  const Patch p = random_patch(12, 9, 1);
  for (auto [sigma, radius] : {std::pair{1.0, 3}, std::pair{0.6, 2}, std::pair{2.0, 6}}) {
    CHECK(max_abs_diff(gaussian_blur(p, sigma, radius), blur_oracle(p, sigma, radius)) < 1e-12);
  }
  const Patch flat(8, 8, 0.37);
  CHECK(max_abs_diff(gaussian_blur(flat, 1.5, 5), flat) < 1e-15);
  CHECK(gaussian_blur(p, 0.0, 3) == p);
}

TEST_CASE("resize") {
  Patch p(4, 4);
  for (int i = 0; i < 16; ++i) p.pixels[std::size_t(i)] = i / 16.0;
  const Patch d = downsample(p, 2);
  CHECK(d.height == 2);
  CHECK(d.at(0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 64.0));
  CHECK(d.at(1, 1) == doctest::Approx((10 + 11 + 14 + 15) / 64.0));
  const Patch u = upsample_nearest(d, 2);
  CHECK(u.at(3, 3) == d.at(1, 1));
  CHECK(u.at(0, 1) == d.at(0, 0));
  CHECK_THROWS_AS(downsample(Patch(5, 4), 2), std::invalid_argument);
}

TEST_CASE("noise is seeded and clamped") {
  const Patch p(16, 16, 0.5);
  const Patch a = add_noise(p, 0.1, 7), b = add_noise(p, 0.1, 7), c = add_noise(p, 0.1, 8);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  const Patch big = add_noise(p, 5.0, 3);
  for (double v : big.pixels) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("jpeg_like matches the textbook block DCT") {
  const Patch p = random_patch(16, 16, 3);
  for (int q : {10, 50, 90}) CHECK(max_abs_diff(jpeg_like(p, q), jpeg_oracle(p, q)) < 1e-10);
}

TEST_CASE("quality 100 on smooth content is nearly lossless") {
  const Patch s = smooth_patch(32);
  CHECK(psnr(jpeg_like(s, 100), s) > 50.0);
  CHECK(psnr(jpeg_like(s, 10), s) < psnr(jpeg_like(s, 90), s));
}

TEST_CASE("degrade chain") {
  SUBCASE("identity configuration") {
    DegradationConfig id{.blur_sigma = 0.0, .kernel_radius = 0, .downsample_factor = 1, .noise_sigma = 0.0,
                         .jpeg_quality = 100, .rng_seed = 0, .second_order = false};
    const Patch p = random_patch(16, 16, 4);
    CHECK(max_abs_diff(degrade(p, id), p) <= 1.0 / 255.0);
  }
  SUBCASE("stage composition and determinism") {
    DegradationConfig cfg;
    cfg.rng_seed = 42;
    const Patch p = random_patch(16, 16, 5);
    const Patch a = degrade(p, cfg);
    CHECK(a.height == 8);
    CHECK(a == degrade(p, cfg));
    const Patch staged =
        jpeg_like(add_noise(downsample(gaussian_blur(p, cfg.blur_sigma, cfg.kernel_radius), 2), cfg.noise_sigma, 42),
                  cfg.jpeg_quality);
    CHECK(a == staged);
    cfg.rng_seed = 43;
    CHECK_FALSE(degrade(p, cfg) == a);
    cfg.second_order = true;
    CHECK(degrade(p, cfg) == degrade(p, cfg));
  }
  SUBCASE("invalid settings") {
    DegradationConfig cfg;
    cfg.jpeg_quality = 0;
    CHECK_THROWS_AS(degrade(Patch(16, 16), cfg), std::invalid_argument);
    cfg = {};
    cfg.kernel_radius = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    CHECK_THROWS_AS(degrade(Patch(12, 12), cfg), std::invalid_argument);
  }
}

TEST_CASE("pgm round trip") {
  const auto path = std::filesystem::temp_directory_path() / "dsm_degrade_test.pgm";
  const Patch p = random_patch(8, 6, 9);
  write_pgm(path, p);
  const Patch q = read_pgm(path);
  CHECK(q.height == 8);
  CHECK(q.width == 6);
  CHECK(max_abs_diff(p, q) <= 0.5 / 255.0 + 1e-12);
  std::filesystem::remove(path);
  CHECK_THROWS(read_pgm(path));
}
