#pragma once

// Semantic-communication classifier: semantic encoder (conv stack), channel
// encoder (dense to the semantic vector), AWGN channel, channel decoder and
// semantic decoder producing class logits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xsfl/autograd.hpp"
#include "xsfl/errors.hpp"
#include "xsfl/params.hpp"
#include "xsfl/rng.hpp"
#include "xsfl/sample.hpp"
#include "xsfl/tensor.hpp"

namespace xsfl {

struct ConvLayerSpec {
  std::size_t kernels = 8;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

struct SCArchitecture {
  Shape image{1, 16, 16};
  std::vector<ConvLayerSpec> conv{{8, 3, 3, 1}, {16, 3, 3, 1}};
  std::size_t semantic_length = 16;  // L
  std::size_t decoder_hidden = 32;
  std::size_t classes = 2;           // M
  double hidden_slope = 0.01;        // leaky ReLU slope between layers

  friend bool operator==(const SCArchitecture&, const SCArchitecture&) = default;

  /// Shape of the activations after conv layer `upto` (exclusive count).
  Shape conv_shape(std::size_t upto) const {
    Shape s = image;
    for (std::size_t i = 0; i < upto; ++i) {
      const auto& c = conv[i];
      if (c.stride == 0) throw ParameterError("conv stride must be positive");
      if (c.kernel_h > s[1] || c.kernel_w > s[2]) {
        throw DimensionError("conv layer " + std::to_string(i + 1) + " kernel larger than its input");
      }
      s = {c.kernels, (s[1] - c.kernel_h) / c.stride + 1, (s[2] - c.kernel_w) / c.stride + 1};
    }
    return s;
  }

  /// [K,h,w] of the last convolution layer's activations.
  Shape feature_shape() const { return conv_shape(conv.size()); }

  void validate() const {
    if (image.size() != 3) throw DimensionError("image shape must be [C,H,W]");
    for (auto d : image)
      if (d == 0) throw DimensionError("image dimensions must be positive");
    if (conv.empty()) throw DimensionError("at least one convolution layer is required");
    (void)feature_shape();
    if (classes < 2) throw ParameterError("class count must be at least 2");
    if (semantic_length == 0 || semantic_length >= shape_size(image)) {
      throw ParameterError("semantic length must be positive and smaller than the image size");
    }
    if (decoder_hidden == 0) throw ParameterError("decoder width must be positive");
    check_leaky_slope(hidden_slope);
  }

  Manifest manifest() const {
    validate();
    Manifest m;
    std::size_t channels = image[0];
    for (std::size_t i = 0; i < conv.size(); ++i) {
      const auto& c = conv[i];
      const std::string p = "conv" + std::to_string(i + 1);
      m.push_back({p + ".weight", {c.kernels, channels, c.kernel_h, c.kernel_w}});
      m.push_back({p + ".bias", {c.kernels}});
      channels = c.kernels;
    }
    const std::size_t flat = shape_size(feature_shape());
    m.push_back({"channel_enc.weight", {semantic_length, flat}});
    m.push_back({"channel_enc.bias", {semantic_length}});
    m.push_back({"channel_dec.weight", {decoder_hidden, semantic_length}});
    m.push_back({"channel_dec.bias", {decoder_hidden}});
    m.push_back({"semantic_dec.weight", {classes, decoder_hidden}});
    m.push_back({"semantic_dec.bias", {classes}});
    return m;
  }
};

/// Scalar AWGN link: Y = gain*X + N, N ~ Normal(0, noise_std^2).
struct ChannelSpec {
  double gain = 1.0;
  double noise_std = 0.0;

  void validate() const {
    if (!(gain > 0.0)) throw ParameterError("channel gain must be positive");
    if (!(noise_std >= 0.0)) throw ParameterError("channel noise std must be non-negative");
  }
};

struct SemanticVector {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const SemanticVector&, const SemanticVector&) = default;
};

/// Activations A^k of the last convolution layer, [K,h,w].
struct FeatureMapSet {
  Tensor activations;
};

/// Tape nodes of a bound parameter vector, by block name.
using ParamBinding = std::map<std::string, Var>;

/// Node handles produced by one forward pass.
struct ForwardTrace {
  Var input;
  Var features;  // A: last conv activations
  Var semantic;  // X: channel-encoder output
  Var received;  // Y: after the channel
  Var logits;
};

/// Additive channel noise for one transmission.
inline Tensor channel_noise(std::size_t length, const ChannelSpec& chan, std::uint64_t seed) {
  Tensor n({length});
  if (chan.noise_std > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, chan.noise_std);
    for (double& v : n.data()) v = dist(rng);
  }
  return n;
}

class SCModel {
 public:
  SCModel() : SCModel(SCArchitecture{}) {}
  explicit SCModel(SCArchitecture arch) : arch_(std::move(arch)), manifest_(arch_.manifest()) {}

  const SCArchitecture& architecture() const noexcept { return arch_; }
  const Manifest& manifest() const noexcept { return manifest_; }
  std::size_t parameter_count() const { return manifest_size(manifest_); }

  /// He-normal weights, zero biases.
  ParamVector init_params(std::uint64_t seed) const {
    ParamVector p(manifest_);
    Rng rng(seed);
    std::size_t off = 0;
    for (const auto& l : manifest_) {
      const std::size_t n = shape_size(l.shape);
      if (l.shape.size() > 1) {
        const std::size_t fan_in = n / l.shape[0];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (std::size_t i = 0; i < n; ++i) p[off + i] = dist(rng);
      }
      off += n;
    }
    return p;
  }

  /// Places every block on the tape, as parameters or as fixed constants.
  ParamBinding bind(Tape& tape, const ParamVector& params, bool trainable) const {
    check_layout(params);
    ParamBinding b;
    std::size_t off = 0;
    for (const auto& l : manifest_) {
      const std::size_t n = shape_size(l.shape);
      auto first = params.values().begin() + static_cast<std::ptrdiff_t>(off);
      Tensor t(l.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
      b.emplace(l.name, trainable ? tape.parameter(l.name, std::move(t)) : tape.constant(std::move(t)));
      off += n;
    }
    return b;
  }

  /// X = C(S(x)) for one image [C,H,W] or a batch [B,C,H,W]; returns (X, A).
  std::pair<Var, Var> encode(const ParamBinding& p, Var x) const {
    const Shape& xs = x.value().shape();
    const bool batched = xs.size() == 4;
    if (!std::equal(arch_.image.begin(), arch_.image.end(), xs.begin() + (batched ? 1 : 0), xs.end()) ||
        xs.size() != arch_.image.size() + (batched ? 1 : 0)) {
      throw DimensionError("input shape " + shape_string(xs) + " does not match " + shape_string(arch_.image));
    }
    Var h = x;
    for (std::size_t i = 0; i < arch_.conv.size(); ++i) {
      const std::string name = "conv" + std::to_string(i + 1);
      h = conv2d(h, p.at(name + ".weight"), p.at(name + ".bias"), arch_.conv[i].stride);
      h = leaky_relu(h, arch_.hidden_slope);
    }
    Var features = h;
    Var flat = batched ? flatten_rows(features) : flatten(features);
    Var semantic = dense(flat, p.at("channel_enc.weight"), p.at("channel_enc.bias"));
    return {semantic, features};
  }

  /// Y = h*X + N; row i of a batched X uses seeds[i]. The noise is a
  /// constant for differentiation.
  Var transmit(Var semantic, const ChannelSpec& chan, std::span<const std::uint64_t> seeds) const {
    chan.validate();
    const Tensor& x = semantic.value();
    const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
    if (seeds.size() != rows) throw DimensionError("one noise seed per transmitted vector is required");
    const std::size_t len = x.size() / rows;
    Tensor noise(x.shape());
    if (chan.noise_std > 0.0) {
      for (std::size_t r = 0; r < rows; ++r) {
        Tensor n = channel_noise(len, chan, seeds[r]);
        std::copy(n.data().begin(), n.data().end(), noise.data().begin() + static_cast<std::ptrdiff_t>(r * len));
      }
    }
    return affine(semantic, chan.gain, noise);
  }

  Var transmit(Var semantic, const ChannelSpec& chan, std::uint64_t seed) const {
    return transmit(semantic, chan, std::span<const std::uint64_t>(&seed, 1));
  }

  /// logits = S^-1(C^-1(Y)).
  Var decode(const ParamBinding& p, Var received) const {
    if (received.value().shape().back() != arch_.semantic_length || received.value().rank() > 2) {
      throw DimensionError("received vector " + shape_string(received.value().shape()) +
                           " does not match semantic length " + std::to_string(arch_.semantic_length));
    }
    Var h = dense(received, p.at("channel_dec.weight"), p.at("channel_dec.bias"));
    h = leaky_relu(h, arch_.hidden_slope);
    return dense(h, p.at("semantic_dec.weight"), p.at("semantic_dec.bias"));
  }

  ForwardTrace forward(Tape& tape, const ParamBinding& p, const Tensor& x, const ChannelSpec& chan,
                       std::span<const std::uint64_t> seeds, bool input_grad = false) const {
    ForwardTrace tr;
    tr.input = input_grad ? tape.input(x) : tape.constant(x);
    std::tie(tr.semantic, tr.features) = encode(p, tr.input);
    tr.received = transmit(tr.semantic, chan, seeds);
    tr.logits = decode(p, tr.received);
    return tr;
  }

  ForwardTrace forward(Tape& tape, const ParamBinding& p, const Tensor& x, const ChannelSpec& chan,
                       std::uint64_t seed, bool input_grad = false) const {
    return forward(tape, p, x, chan, std::span<const std::uint64_t>(&seed, 1), input_grad);
  }

  // Value-level entry points.

  std::pair<SemanticVector, FeatureMapSet> encode(const Tensor& x, const ParamVector& params) const {
    Tape tape;
    auto p = bind(tape, params, false);
    auto [sem, feat] = encode(p, tape.constant(x));
    return {SemanticVector{sem.value().values()}, FeatureMapSet{feat.value()}};
  }

  SemanticVector transmit(const SemanticVector& x, const ChannelSpec& chan, std::uint64_t seed) const {
    chan.validate();
    Tensor n = channel_noise(x.size(), chan, seed);
    SemanticVector y{x.values};
    for (std::size_t i = 0; i < y.size(); ++i) y.values[i] = chan.gain * x.values[i] + n[i];
    return y;
  }

  Tensor decode(const SemanticVector& y, const ParamVector& params) const {
    if (y.size() != arch_.semantic_length) throw DimensionError("semantic vector length mismatch");
    Tape tape;
    auto p = bind(tape, params, false);
    return decode(p, tape.constant(Tensor({y.size()}, y.values))).value();
  }

  Tensor logits(const ParamVector& params, const Tensor& x, const ChannelSpec& chan,
                std::uint64_t seed) const {
    Tape tape;
    auto p = bind(tape, params, false);
    return forward(tape, p, x, chan, seed).logits.value();
  }

  /// [B,M] logits for a batch.
  Tensor logits(const ParamVector& params, const Batch& batch, const ChannelSpec& chan) const {
    Tape tape;
    auto p = bind(tape, params, false);
    return forward(tape, p, batch.images, chan, batch.seeds).logits.value();
  }

  double forward_loss(const ParamVector& params, const Tensor& x, std::size_t label,
                      const ChannelSpec& chan, std::uint64_t seed) const {
    return softmax_cross_entropy(logits(params, x, chan, seed).data(), label);
  }

  /// Per-sample CE losses of a batch.
  std::vector<double> forward_losses(const ParamVector& params, const Batch& batch,
                                     const ChannelSpec& chan) const {
    Tensor z = logits(params, batch, chan);
    const std::size_t M = arch_.classes;
    std::vector<double> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      out[i] = softmax_cross_entropy(z.data().subspan(i * M, M), batch.labels[i]);
    return out;
  }

  /// Arg-max class (lowest index on ties).
  std::size_t predict(const ParamVector& params, const Tensor& x, const ChannelSpec& chan,
                      std::uint64_t seed) const {
    return argmax(logits(params, x, chan, seed).data());
  }

  std::vector<std::size_t> predict(const ParamVector& params, const Batch& batch,
                                   const ChannelSpec& chan) const {
    Tensor z = logits(params, batch, chan);
    const std::size_t M = arch_.classes;
    std::vector<std::size_t> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) out[i] = argmax(z.data().subspan(i * M, M));
    return out;
  }

  /// Per-sample CE loss and its gradient, flattened in manifest order.
  double loss_and_gradient(const ParamVector& params, const Tensor& x, std::size_t label,
                           const ChannelSpec& chan, std::uint64_t seed, std::span<double> grad) const {
    Tape tape;
    auto p = bind(tape, params, true);
    auto tr = forward(tape, p, x, chan, seed);
    Var loss = softmax_cross_entropy(tr.logits, label);
    collect_gradient(tape, p, loss, grad);
    return loss.value().item();
  }

  /// Mean CE loss over a batch and the gradient of that mean.
  double loss_and_gradient(const ParamVector& params, const Batch& batch, const ChannelSpec& chan,
                           std::span<double> grad) const {
    Tape tape;
    auto p = bind(tape, params, true);
    auto tr = forward(tape, p, batch.images, chan, batch.seeds);
    Var loss = softmax_cross_entropy(tr.logits, std::span<const std::size_t>(batch.labels));
    collect_gradient(tape, p, loss, grad);
    return loss.value().item();
  }

 private:
  static std::size_t argmax(std::span<const double> z) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.size(); ++i)
      if (z[i] > z[best]) best = i;
    return best;
  }

  void collect_gradient(Tape& tape, const ParamBinding& p, Var loss, std::span<double> grad) const {
    if (grad.size() != parameter_count()) throw DimensionError("gradient buffer length mismatch");
    tape.backpropagate(loss);
    std::size_t off = 0;
    for (const auto& l : manifest_) {
      const std::size_t n = shape_size(l.shape);
      auto dst = grad.begin() + static_cast<std::ptrdiff_t>(off);
      if (const Tensor* gl = tape.param_grad(p.at(l.name))) {
        std::copy(gl->data().begin(), gl->data().end(), dst);
      } else {
        std::fill(dst, dst + static_cast<std::ptrdiff_t>(n), 0.0);
      }
      off += n;
    }
  }

  void check_layout(const ParamVector& params) const {
    if (params.manifest() != manifest_) throw DimensionError("parameter manifest does not match the architecture");
  }

  SCArchitecture arch_;
  Manifest manifest_;
};

// Model file: text header, then every parameter as a little-endian float32
// in manifest order.
//
//   sc-model 1
//   input C H W
//   conv K kh kw stride          (one line per conv layer)
//   semantic L
//   hidden W
//   classes M
//   hidden_slope s
//   layers n
//   <name> <d0> <d1> ...          (n lines)
//   data

namespace detail {

inline void put_f32_le(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                     static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
  os.write(b, 4);
}

inline float get_f32_le(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IngestionError("model file truncated");
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

inline std::istringstream header_line(std::istream& is, const std::string& key) {
  std::string line;
  if (!std::getline(is, line)) throw IngestionError("model header truncated, expected '" + key + "'");
  std::istringstream ls(line);
  std::string k;
  ls >> k;
  if (k != key) throw IngestionError("model header: expected '" + key + "', found '" + k + "'");
  return ls;
}

}  // namespace detail

inline void save_model(std::ostream& os, const SCArchitecture& arch, const ParamVector& params) {
  if (params.manifest() != arch.manifest()) throw DimensionError("parameters do not match architecture");
  os << "sc-model 1\n";
  os << "input " << arch.image[0] << ' ' << arch.image[1] << ' ' << arch.image[2] << '\n';
  for (const auto& c : arch.conv)
    os << "conv " << c.kernels << ' ' << c.kernel_h << ' ' << c.kernel_w << ' ' << c.stride << '\n';
  os << "semantic " << arch.semantic_length << '\n';
  os << "hidden " << arch.decoder_hidden << '\n';
  os << "classes " << arch.classes << '\n';
  {
    std::ostringstream s;
    s.precision(17);
    s << arch.hidden_slope;
    os << "hidden_slope " << s.str() << '\n';
  }
  os << "layers " << params.manifest().size() << '\n';
  for (const auto& l : params.manifest()) {
    os << l.name;
    for (auto d : l.shape) os << ' ' << d;
    os << '\n';
  }
  os << "data\n";
  for (double v : params.values()) detail::put_f32_le(os, static_cast<float>(v));
}

inline std::pair<SCArchitecture, ParamVector> load_model(std::istream& is) {
  SCArchitecture arch;
  arch.conv.clear();
  {
    auto ls = detail::header_line(is, "sc-model");
    int version = 0;
    ls >> version;
    if (version != 1) throw IngestionError("unsupported model version");
  }
  {
    auto ls = detail::header_line(is, "input");
    arch.image.assign(3, 0);
    ls >> arch.image[0] >> arch.image[1] >> arch.image[2];
  }
  std::string line;
  while (is.peek() == 'c' && std::getline(is, line)) {
    std::istringstream ls(line);
    std::string k;
    ls >> k;
    if (k == "conv") {
      ConvLayerSpec c;
      ls >> c.kernels >> c.kernel_h >> c.kernel_w >> c.stride;
      if (!ls) throw IngestionError("malformed conv line in model header");
      arch.conv.push_back(c);
    } else {
      throw IngestionError("unexpected model header line '" + line + "'");
    }
  }
  detail::header_line(is, "semantic") >> arch.semantic_length;
  detail::header_line(is, "hidden") >> arch.decoder_hidden;
  detail::header_line(is, "classes") >> arch.classes;
  detail::header_line(is, "hidden_slope") >> arch.hidden_slope;
  std::size_t n_layers = 0;
  detail::header_line(is, "layers") >> n_layers;
  Manifest m;
  for (std::size_t i = 0; i < n_layers; ++i) {
    if (!std::getline(is, line)) throw IngestionError("model header truncated in layer list");
    std::istringstream ls(line);
    LayerShape l;
    ls >> l.name;
    std::size_t d;
    while (ls >> d) l.shape.push_back(d);
    m.push_back(std::move(l));
  }
  detail::header_line(is, "data");
  try {
    if (m != arch.manifest()) throw IngestionError("model layer list does not match its architecture");
  } catch (const std::invalid_argument& e) {
    throw IngestionError(std::string("invalid model architecture: ") + e.what());
  }
  std::vector<double> values(manifest_size(m));
  for (double& v : values) v = static_cast<double>(detail::get_f32_le(is));
  return {arch, ParamVector(std::move(m), std::move(values))};
}

}  // namespace xsfl
