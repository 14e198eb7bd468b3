#include "dsm/degrade.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dsm {

Patch::Patch(int h, int w, double fill) : height(h), width(w) {
  if (h < 1 || w < 1) throw std::invalid_argument("patch dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill);
}

Vec Patch::flatten() const {
  return Eigen::Map<const Vec>(pixels.data(), static_cast<Eigen::Index>(pixels.size()));
}

Patch Patch::from_vector(const Vec& v, int h, int w) {
  require_dims(v.size() == static_cast<Eigen::Index>(h) * w, "vector size does not match patch");
  Patch p(h, w);
  std::copy(v.data(), v.data() + v.size(), p.pixels.begin());
  return p;
}

Patch clamp01(Patch p) {
  for (double& v : p.pixels) v = std::clamp(v, 0.0, 1.0);
  return p;
}

void DegradationConfig::validate() const {
  if (blur_sigma < 0.0) throw std::invalid_argument("blur_sigma must be >= 0");
  if (kernel_radius < 0) throw std::invalid_argument("kernel_radius must be >= 0");
  if (blur_sigma > 0.0 && kernel_radius < static_cast<int>(std::ceil(3.0 * blur_sigma))) {
    throw std::invalid_argument("kernel_radius must be >= ceil(3 * blur_sigma)");
  }
  if (downsample_factor < 1) throw std::invalid_argument("downsample_factor must be >= 1");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
  if (jpeg_quality < 1 || jpeg_quality > 100) throw std::invalid_argument("jpeg_quality must be in [1, 100]");
}

namespace {

// Mirror without repeating the edge sample.
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Patch gaussian_blur(const Patch& p, double sigma, int radius) {
  if (radius < 0) throw std::invalid_argument("blur radius must be >= 0");
  if (sigma <= 0.0 || radius == 0) return p;
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;

  Patch tmp(p.height, p.width), out(p.height, p.width);
  for (int r = 0; r < p.height; ++r) {
    for (int c = 0; c < p.width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] * p.at(r, reflect(c + i, p.width));
      }
      tmp.at(r, c) = acc;
    }
  }
  for (int r = 0; r < p.height; ++r) {
    for (int c = 0; c < p.width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(reflect(r + i, p.height), c);
      }
      out.at(r, c) = acc;
    }
  }
  return clamp01(std::move(out));
}

Patch downsample(const Patch& p, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (p.height % factor != 0 || p.width % factor != 0) {
    throw std::invalid_argument("patch dimensions must be divisible by the downsample factor");
  }
  if (factor == 1) return p;
  Patch out(p.height / factor, p.width / factor);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      double acc = 0.0;
      for (int i = 0; i < factor; ++i) {
        for (int j = 0; j < factor; ++j) acc += p.at(r * factor + i, c * factor + j);
      }
      out.at(r, c) = acc * inv;
    }
  }
  return clamp01(std::move(out));
}

Patch upsample_nearest(const Patch& p, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
  Patch out(p.height * factor, p.width * factor);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) out.at(r, c) = p.at(r / factor, c / factor);
  }
  return out;
}

Patch add_noise(const Patch& p, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
  if (sigma == 0.0) return p;
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Patch out = p;
  for (double& v : out.pixels) v += sigma * n01(eng);
  return clamp01(std::move(out));
}

std::vector<int> jpeg_quant_table(int quality) {
  static constexpr std::array<int, 64> kLuminance = {
      16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
      14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
      18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
      49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  if (quality < 1 || quality > 100) throw std::invalid_argument("jpeg quality must be in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::vector<int> q(64);
  for (std::size_t i = 0; i < 64; ++i) q[i] = std::clamp((kLuminance[i] * scale + 50) / 100, 1, 255);
  return q;
}

Patch jpeg_like(const Patch& p, int quality) {
  if (p.height % 8 != 0 || p.width % 8 != 0) {
    throw std::invalid_argument("jpeg_like needs dimensions divisible by 8");
  }
  const std::vector<int> q = jpeg_quant_table(quality);
  // basis[x][u] = C(u)/2 * cos((2x+1) u pi / 16)
  double basis[8][8];
  for (int x = 0; x < 8; ++x) {
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? 1.0 / std::numbers::sqrt2 : 1.0;
      basis[x][u] = 0.5 * cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
  }
  Patch out(p.height, p.width);
  double f[8][8], coef[8][8];
  for (int br = 0; br < p.height; br += 8) {
    for (int bc = 0; bc < p.width; bc += 8) {
      for (int x = 0; x < 8; ++x) {
        for (int y = 0; y < 8; ++y) f[x][y] = p.at(br + x, bc + y) * 255.0 - 128.0;
      }
      for (int u = 0; u < 8; ++u) {
        for (int v = 0; v < 8; ++v) {
          double acc = 0.0;
          for (int x = 0; x < 8; ++x) {
            for (int y = 0; y < 8; ++y) acc += basis[x][u] * basis[y][v] * f[x][y];
          }
          const double step = q[static_cast<std::size_t>(u * 8 + v)];
          coef[u][v] = std::round(acc / step) * step;
        }
      }
      for (int x = 0; x < 8; ++x) {
        for (int y = 0; y < 8; ++y) {
          double acc = 0.0;
          for (int u = 0; u < 8; ++u) {
            for (int v = 0; v < 8; ++v) acc += basis[x][u] * basis[y][v] * coef[u][v];
          }
          out.at(br + x, bc + y) = (acc + 128.0) / 255.0;
        }
      }
    }
  }
  return clamp01(std::move(out));
}

Patch degrade(const Patch& p, const DegradationConfig& cfg) {
  cfg.validate();
  const int r = cfg.downsample_factor;
  if (p.height % r != 0 || p.width % r != 0 || (p.height / r) % 8 != 0 || (p.width / r) % 8 != 0) {
    throw std::invalid_argument("patch dimensions incompatible with downsample factor and 8x8 blocks");
  }
  Patch x = gaussian_blur(p, cfg.blur_sigma, cfg.kernel_radius);
  x = downsample(x, r);
  x = add_noise(x, cfg.noise_sigma, cfg.rng_seed);
  x = jpeg_like(x, cfg.jpeg_quality);
  if (cfg.second_order) {
    x = gaussian_blur(x, cfg.blur_sigma, cfg.kernel_radius);
    x = add_noise(x, cfg.noise_sigma, cfg.rng_seed ^ 0x5eed5eed5eed5eedULL);
    x = jpeg_like(x, cfg.jpeg_quality);
  }
  return x;
}

void write_pgm(const std::filesystem::path& path, const Patch& p) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << p.width << ' ' << p.height << "\n255\n";
  for (double v : p.pixels) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    os.put(static_cast<char>(b));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

namespace {

int read_header_int(std::istream& is) {
  int c = is.peek();
  while (is && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      is.get();
    }
    c = is.peek();
  }
  int v = -1;
  if (!(is >> v)) throw std::runtime_error("malformed PGM header");
  return v;
}

}  // namespace

Patch read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  if (magic != "P5") throw std::runtime_error("not a binary PGM (P5): " + path.string());
  const int w = read_header_int(is);
  const int h = read_header_int(is);
  const int maxval = read_header_int(is);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw std::runtime_error("bad PGM header");
  is.get();  // single whitespace before raster
  Patch p(h, w);
  for (double& v : p.pixels) {
    int raw;
    if (maxval < 256) {
      raw = is.get();
    } else {
      const int hi = is.get();
      const int lo = is.get();
      raw = (hi << 8) | lo;
    }
    if (!is) throw std::runtime_error("truncated PGM raster: " + path.string());
    v = static_cast<double>(raw) / maxval;
  }
  return p;
}

}  // namespace dsm
