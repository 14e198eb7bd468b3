#pragma once

#include "dsm/rng.hpp"
#include "dsm/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dsm {

enum class Activation { tanh, silu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

/// Architecture of a feed-forward net. The first layer sees
/// [x | time features (time_embed_dim) | label embedding (cond_embed_dim)].
struct NetSpec {
  int input_dim = 1;
  std::vector<int> hidden_dims;
  int output_dim = 1;
  Activation activation = Activation::silu;
  int time_embed_dim = 0;
  int cond_embed_dim = 0;
  int num_labels = 1;
  int max_timestep = 1000;

  int first_layer_width() const { return input_dim + time_embed_dim + cond_embed_dim; }
  int num_layers() const { return static_cast<int>(hidden_dims.size()) + 1; }
  void validate() const;
  std::uint64_t hash() const;

  bool operator==(const NetSpec&) const = default;
};

std::size_t param_count(const NetSpec& spec);

/// Flat parameters in layer-major order: for each layer W (out x in, row-major)
/// then b; the label-embedding table (num_labels x cond_embed_dim) comes last.
struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values(n, fill) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double norm() const;
  ParamVector& operator+=(const ParamVector& o);
  ParamVector& operator*=(double s);
  bool operator==(const ParamVector&) const = default;
};

ParamVector init_params(const NetSpec& spec, Engine& eng);
/// Zeros the weights and bias of the last layer so the net outputs 0.
void zero_output_layer(const NetSpec& spec, ParamVector& params);

/// Sinusoidal features of a timestep, on a log1p time axis so that small
/// timesteps stay distinguishable.
void time_features(int t, int max_timestep, std::span<double> out);

/// Intermediate values recorded by forward() for backward().
struct NetTape {
  std::vector<Mat> pre;   // pre-activation of each layer
  std::vector<Mat> act;   // act[0] is the assembled input, act[l+1] is layer l output
  std::vector<int> labels;
};

struct NetGradients {
  ParamVector params;
  Mat input;  // rows x input_dim
};

/// Batched forward pass; row r of x is one sample, t[r] / y[r] its timestep and
/// label (either span may be empty when the net has no such input).
Mat forward(const NetSpec& spec, const ParamVector& params, const Mat& x,
            std::span<const int> t, std::span<const int> y, NetTape* tape = nullptr);

/// Exact reverse-mode gradients of sum_r <out_grad_r, forward_r>.
NetGradients backward(const NetSpec& spec, const ParamVector& params, const NetTape& tape,
                      const Mat& out_grad);

Vec forward(const NetSpec& spec, const ParamVector& params, const Vec& x, int t, int y);

struct SampleGradients {
  ParamVector params;
  Vec input;
};
SampleGradients backward(const NetSpec& spec, const ParamVector& params, const Vec& x, int t,
                         int y, const Vec& out_grad);

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  bool pass = false;
};

/// Compares backward() with central differences (step 1e-5) of <r, forward>
/// for a random probe r: along one random parameter direction, on a random
/// subset of at least 256 parameter coordinates (all when fewer), and on every
/// input coordinate. Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradcheckReport gradcheck(const NetSpec& spec, const ParamVector& params, const Vec& x, int t,
                          int y, double tolerance, std::uint64_t seed = 0);

// Checkpoint file: "DSMCKPT1", u32 version, u64 spec hash, spec dims as u32,
// u64 count, then count little-endian float64 values.
void save_checkpoint(const std::filesystem::path& path, const NetSpec& spec,
                     const ParamVector& params);
struct Checkpoint {
  NetSpec spec;
  ParamVector params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsm
