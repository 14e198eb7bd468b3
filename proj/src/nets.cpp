#include "dsm/nets.hpp"

#include "dsm/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dsm {

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "silu") return Activation::silu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "silu"; }

void NetSpec::validate() const {
  if (input_dim < 0 || output_dim <= 0) throw std::invalid_argument("net dims must be positive");
  for (int h : hidden_dims) {
    if (h <= 0) throw std::invalid_argument("hidden widths must be positive");
  }
  if (time_embed_dim < 0 || cond_embed_dim < 0) {
    throw std::invalid_argument("embedding widths must be nonnegative");
  }
  if (num_labels < 1) throw std::invalid_argument("num_labels must be >= 1");
  if (max_timestep < 1) throw std::invalid_argument("max_timestep must be >= 1");
  if (first_layer_width() <= 0) throw std::invalid_argument("net has no inputs");
}

std::uint64_t NetSpec::hash() const {
  std::ostringstream s;
  s << "in=" << input_dim << ";hidden=";
  for (int h : hidden_dims) s << h << ',';
  s << ";out=" << output_dim << ";act=" << to_string(activation) << ";te=" << time_embed_dim
    << ";ce=" << cond_embed_dim << ";labels=" << num_labels << ";tmax=" << max_timestep;
  return fnv1a64(s.str());
}

namespace {

struct LayerShape {
  std::size_t in, out, w_offset, b_offset;
};

std::vector<LayerShape> layer_shapes(const NetSpec& spec) {
  std::vector<LayerShape> shapes;
  std::size_t offset = 0;
  auto in = static_cast<std::size_t>(spec.first_layer_width());
  std::vector<int> outs = spec.hidden_dims;
  outs.push_back(spec.output_dim);
  for (int o : outs) {
    const auto out = static_cast<std::size_t>(o);
    shapes.push_back({in, out, offset, offset + in * out});
    offset += in * out + out;
    in = out;
  }
  return shapes;
}

std::size_t embedding_offset(const NetSpec& spec) {
  const auto shapes = layer_shapes(spec);
  return shapes.back().b_offset + shapes.back().out;
}

double activate(Activation a, double z) {
  if (a == Activation::tanh) return std::tanh(z);
  return z / (1.0 + std::exp(-z));
}

double activate_grad(Activation a, double z) {
  if (a == Activation::tanh) {
    const double th = std::tanh(z);
    return 1.0 - th * th;
  }
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

std::span<const double> slice(const ParamVector& p, std::size_t offset, std::size_t n) {
  return std::span<const double>(p.values).subspan(offset, n);
}

std::span<double> slice(ParamVector& p, std::size_t offset, std::size_t n) {
  return std::span<double>(p.values).subspan(offset, n);
}

std::span<const double> view(const Mat& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

std::span<double> view(Mat& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

}  // namespace

std::size_t param_count(const NetSpec& spec) {
  return embedding_offset(spec) +
         static_cast<std::size_t>(spec.num_labels) * static_cast<std::size_t>(spec.cond_embed_dim);
}

double ParamVector::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

ParamVector& ParamVector::operator+=(const ParamVector& o) {
  require_dims(o.size() == size(), "ParamVector size mismatch");
  for (std::size_t i = 0; i < size(); ++i) values[i] += o.values[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double s) {
  for (double& v : values) v *= s;
  return *this;
}

ParamVector init_params(const NetSpec& spec, Engine& eng) {
  spec.validate();
  ParamVector p(param_count(spec));
  std::normal_distribution<double> n01(0.0, 1.0);
  for (const auto& l : layer_shapes(spec)) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (std::size_t i = 0; i < l.in * l.out; ++i) p[l.w_offset + i] = scale * n01(eng);
  }
  const std::size_t e0 = embedding_offset(spec);
  for (std::size_t i = e0; i < p.size(); ++i) p[i] = n01(eng);
  return p;
}

void zero_output_layer(const NetSpec& spec, ParamVector& params) {
  require_dims(params.size() == param_count(spec), "parameter count does not match net spec");
  const auto l = layer_shapes(spec).back();
  for (std::size_t i = 0; i < l.in * l.out + l.out; ++i) params[l.w_offset + i] = 0.0;
}

void time_features(int t, int max_timestep, std::span<double> out) {
  const double tau = std::log1p(static_cast<double>(t)) / std::log1p(static_cast<double>(max_timestep));
  const std::size_t half = out.size() / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double f = std::numbers::pi * std::ldexp(1.0, static_cast<int>(k));
    out[2 * k] = std::sin(f * tau);
    out[2 * k + 1] = std::cos(f * tau);
  }
  if (out.size() % 2 == 1) out.back() = tau;
}

Mat forward(const NetSpec& spec, const ParamVector& params, const Mat& x,
            std::span<const int> t, std::span<const int> y, NetTape* tape) {
  require_dims(params.size() == param_count(spec), "parameter count does not match net spec");
  require_dims(x.cols() == spec.input_dim, "input width does not match net spec");
  const auto rows = static_cast<std::size_t>(x.rows());
  if (spec.time_embed_dim > 0) require_dims(t.size() == rows, "need one timestep per row");
  if (spec.cond_embed_dim > 0) require_dims(y.size() == rows, "need one label per row");

  Mat input(x.rows(), spec.first_layer_width());
  input.leftCols(spec.input_dim) = x;
  const std::size_t e0 = embedding_offset(spec);
  const auto te = static_cast<std::size_t>(spec.time_embed_dim);
  const auto ce = static_cast<std::size_t>(spec.cond_embed_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = input.data() + r * static_cast<std::size_t>(input.cols());
    if (te > 0) {
      if (t[r] < 0 || t[r] > spec.max_timestep) throw std::out_of_range("timestep out of range");
      time_features(t[r], spec.max_timestep, {row + spec.input_dim, te});
    }
    if (ce > 0) {
      if (y[r] < 0 || y[r] >= spec.num_labels) throw std::out_of_range("label out of range");
      const double* emb = params.values.data() + e0 + static_cast<std::size_t>(y[r]) * ce;
      std::copy(emb, emb + ce, row + spec.input_dim + te);
    }
  }

  const auto shapes = layer_shapes(spec);
  NetTape local;
  NetTape& tp = tape ? *tape : local;
  tp.pre.assign(shapes.size(), Mat());
  tp.act.assign(shapes.size() + 1, Mat());
  tp.labels.assign(y.begin(), y.end());
  tp.act[0] = std::move(input);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    Mat& z = tp.pre[l];
    z.resize(x.rows(), static_cast<Eigen::Index>(s.out));
    kernels::dense_forward(slice(params, s.w_offset, s.in * s.out), slice(params, s.b_offset, s.out),
                           view(tp.act[l]), {rows, s.in, s.out}, view(z));
    if (l + 1 < shapes.size()) {
      tp.act[l + 1] = z.unaryExpr([&](double v) { return activate(spec.activation, v); });
    } else {
      tp.act[l + 1] = z;
    }
  }
  return tp.act.back();
}

NetGradients backward(const NetSpec& spec, const ParamVector& params, const NetTape& tape,
                      const Mat& out_grad) {
  const auto shapes = layer_shapes(spec);
  require_dims(tape.act.size() == shapes.size() + 1, "tape does not match net spec");
  const Eigen::Index rows_i = tape.act[0].rows();
  require_dims(out_grad.rows() == rows_i && out_grad.cols() == spec.output_dim,
               "out_grad shape does not match net output");
  const auto rows = static_cast<std::size_t>(rows_i);

  NetGradients g{ParamVector(params.size()), Mat()};
  Mat delta = out_grad;
  Mat d_input;
  for (std::size_t li = shapes.size(); li-- > 0;) {
    const auto& s = shapes[li];
    kernels::dense_backward_params(view(delta), view(tape.act[li]), {rows, s.in, s.out},
                                   slice(g.params, s.w_offset, s.in * s.out),
                                   slice(g.params, s.b_offset, s.out));
    Mat d_act(rows_i, static_cast<Eigen::Index>(s.in));
    kernels::dense_backward_input(slice(params, s.w_offset, s.in * s.out), view(delta),
                                  {rows, s.in, s.out}, view(d_act));
    if (li == 0) {
      d_input = std::move(d_act);
    } else {
      const Mat& z = tape.pre[li - 1];
      delta = d_act.cwiseProduct(z.unaryExpr([&](double v) { return activate_grad(spec.activation, v); }));
    }
  }

  g.input = d_input.leftCols(spec.input_dim);
  if (spec.cond_embed_dim > 0) {
    const std::size_t e0 = embedding_offset(spec);
    const auto ce = static_cast<std::size_t>(spec.cond_embed_dim);
    const auto c0 = static_cast<std::size_t>(spec.input_dim + spec.time_embed_dim);
    for (std::size_t r = 0; r < rows; ++r) {
      double* dst = g.params.values.data() + e0 + static_cast<std::size_t>(tape.labels[r]) * ce;
      const double* src = d_input.data() + r * static_cast<std::size_t>(d_input.cols()) + c0;
      for (std::size_t k = 0; k < ce; ++k) dst[k] += src[k];
    }
  }
  return g;
}

Vec forward(const NetSpec& spec, const ParamVector& params, const Vec& x, int t, int y) {
  const Mat in = x.transpose();
  const int tt[1] = {t};
  const int yy[1] = {y};
  return forward(spec, params, in, tt, yy).row(0).transpose();
}

SampleGradients backward(const NetSpec& spec, const ParamVector& params, const Vec& x, int t,
                         int y, const Vec& out_grad) {
  require_dims(out_grad.size() == spec.output_dim, "out_grad size does not match net output");
  const Mat in = x.transpose();
  const int tt[1] = {t};
  const int yy[1] = {y};
  NetTape tape;
  forward(spec, params, in, tt, yy, &tape);
  const Mat og = out_grad.transpose();
  NetGradients g = backward(spec, params, tape, og);
  return {std::move(g.params), g.input.row(0).transpose()};
}

GradcheckReport gradcheck(const NetSpec& spec, const ParamVector& params, const Vec& x, int t,
                          int y, double tolerance, std::uint64_t seed) {
  constexpr double h = 1e-5;
  constexpr double floor = 1e-6;
  Engine eng(derive_seed(seed, "gradcheck"));
  const Vec probe = normal_vector(spec.output_dim, eng);
  const SampleGradients g = backward(spec, params, x, t, y, probe);

  auto objective = [&](const ParamVector& p, const Vec& xi) {
    return probe.dot(forward(spec, p, xi, t, y));
  };
  GradcheckReport report;
  auto record = [&](double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    report.max_rel_err = std::max(report.max_rel_err, std::abs(analytic - numeric) / denom);
    ++report.coords_checked;
  };

  // Random direction through parameter space.
  {
    Vec dir = normal_vector(static_cast<Eigen::Index>(params.size()), eng);
    dir /= dir.norm();
    ParamVector plus = params, minus = params;
    double analytic = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      plus[i] += h * dir[static_cast<Eigen::Index>(i)];
      minus[i] -= h * dir[static_cast<Eigen::Index>(i)];
      analytic += g.params[i] * dir[static_cast<Eigen::Index>(i)];
    }
    record(analytic, (objective(plus, x) - objective(minus, x)) / (2.0 * h));
  }

  // Coordinate subset.
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  constexpr std::size_t kMinCoords = 256;
  if (coords.size() > kMinCoords) {
    std::shuffle(coords.begin(), coords.end(), eng);
    coords.resize(kMinCoords);
  }
  ParamVector p = params;
  for (std::size_t i : coords) {
    const double orig = p[i];
    p[i] = orig + h;
    const double fp = objective(p, x);
    p[i] = orig - h;
    const double fm = objective(p, x);
    p[i] = orig;
    record(g.params[i], (fp - fm) / (2.0 * h));
  }

  Vec xi = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xi[i];
    xi[i] = orig + h;
    const double fp = objective(params, xi);
    xi[i] = orig - h;
    const double fm = objective(params, xi);
    xi[i] = orig;
    record(g.input[i], (fp - fm) / (2.0 * h));
  }

  report.pass = tolerance > 0.0 && report.max_rel_err <= tolerance;
  return report;
}

namespace {

constexpr char kMagic[8] = {'D', 'S', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw std::runtime_error("checkpoint truncated");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetSpec& spec,
                     const ParamVector& params) {
  require_dims(params.size() == param_count(spec), "parameter count does not match net spec");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint64_t>(os, spec.hash());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.input_dim));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.hidden_dims.size()));
  for (int hd : spec.hidden_dims) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(hd));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.output_dim));
  put_le<std::uint32_t>(os, spec.activation == Activation::tanh ? 0U : 1U);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.time_embed_dim));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.cond_embed_dim));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.num_labels));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.max_timestep));
  put_le<std::uint64_t>(os, params.size());
  for (double v : params.values) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic)) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  if (get_le<std::uint32_t>(is) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto stored_hash = get_le<std::uint64_t>(is);
  Checkpoint ck;
  NetSpec& s = ck.spec;
  s.input_dim = static_cast<int>(get_le<std::uint32_t>(is));
  const auto n_hidden = get_le<std::uint32_t>(is);
  if (n_hidden > 1024) throw std::runtime_error("corrupt checkpoint header");
  s.hidden_dims.resize(n_hidden);
  for (auto& hd : s.hidden_dims) hd = static_cast<int>(get_le<std::uint32_t>(is));
  s.output_dim = static_cast<int>(get_le<std::uint32_t>(is));
  s.activation = get_le<std::uint32_t>(is) == 0U ? Activation::tanh : Activation::silu;
  s.time_embed_dim = static_cast<int>(get_le<std::uint32_t>(is));
  s.cond_embed_dim = static_cast<int>(get_le<std::uint32_t>(is));
  s.num_labels = static_cast<int>(get_le<std::uint32_t>(is));
  s.max_timestep = static_cast<int>(get_le<std::uint32_t>(is));
  if (s.hash() != stored_hash) throw std::runtime_error("checkpoint spec hash mismatch");
  const auto n = get_le<std::uint64_t>(is);
  if (n != param_count(s)) throw std::runtime_error("checkpoint payload size mismatch");
  ck.params = ParamVector(n);
  for (auto& v : ck.params.values) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return ck;
}

}  // namespace dsm
