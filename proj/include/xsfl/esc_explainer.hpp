#pragma once

// Gradient-weighted localization maps for each semantic feature: gradients
// of Q_l at the last conv layer, Grad-CAM++ pixel weights, per-kernel
// importance, a leaky-ReLU combination and heatmap export.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xsfl/autograd.hpp"
#include "xsfl/errors.hpp"
#include "xsfl/params.hpp"
#include "xsfl/pgm.hpp"
#include "xsfl/sc_model.hpp"
#include "xsfl/tensor.hpp"

namespace xsfl::esc {

inline constexpr double kDefaultSlope = 0.2;
inline constexpr double kDegenerate = 1e-12;

/// G_l = dQ_l/dA, shaped like A.
inline Tensor semantic_gradients(Tape& tape, Var q_l, Var features) { return tape.grad_of(q_l, features); }

/// rho = g^2 / (2 g^2 + S_k g^3), S_k the sum of A^k; rho = 0 where the
/// denominator is degenerate.
inline Tensor weighting_coefficients(const Tensor& grad, const Tensor& act) {
  if (grad.shape() != act.shape() || grad.rank() != 3) {
    throw DimensionError("weighting coefficients need matching [K,h,w] maps");
  }
  const std::size_t k_n = act.dim(0), plane = act.dim(1) * act.dim(2);
  Tensor rho(act.shape());
  const auto g = grad.data();
  const auto a = act.data();
  auto r = rho.data();
  for (std::size_t k = 0; k < k_n; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += a[k * plane + i];
    for (std::size_t i = 0; i < plane; ++i) {
      const double gi = g[k * plane + i];
      const double g2 = gi * gi;
      const double den = 2.0 * g2 + s * g2 * gi;
      r[k * plane + i] = std::abs(den) <= kDegenerate ? 0.0 : g2 / den;
    }
  }
  return rho;
}

/// How gradients enter the neuron importance weights.
enum class Weighting {
  signed_gradients,    // omega_k = sum rho * G
  positive_gradients,  // omega_k = sum rho * max(G, 0), as in Grad-CAM++
};

/// omega_k = sum over pixels of rho * G (or of rho * max(G,0)).
inline std::vector<double> neuron_importance(const Tensor& rho, const Tensor& grad,
                                             Weighting weighting = Weighting::signed_gradients) {
  if (rho.shape() != grad.shape() || rho.rank() != 3) throw DimensionError("neuron importance needs matching [K,h,w] maps");
  const std::size_t k_n = rho.dim(0), plane = rho.dim(1) * rho.dim(2);
  const bool positive = weighting == Weighting::positive_gradients;
  std::vector<double> w(k_n, 0.0);
  for (std::size_t k = 0; k < k_n; ++k)
    for (std::size_t i = 0; i < plane; ++i) {
      const double g = grad.data()[k * plane + i];
      w[k] += rho.data()[k * plane + i] * (positive ? std::max(g, 0.0) : g);
    }
  return w;
}

/// P_l = leaky(sum_k omega_k A^k), [h,w].
inline Tensor localization_map(std::span<const double> omega, const Tensor& act, double slope = kDefaultSlope) {
  check_leaky_slope(slope);
  if (act.rank() != 3 || omega.size() != act.dim(0)) throw DimensionError("one weight per feature map is required");
  const std::size_t plane = act.dim(1) * act.dim(2);
  Tensor p({act.dim(1), act.dim(2)});
  auto out = p.data();
  for (std::size_t k = 0; k < omega.size(); ++k)
    for (std::size_t i = 0; i < plane; ++i) out[i] += omega[k] * act.data()[k * plane + i];
  for (double& v : out) v = leaky_relu(v, slope);
  return p;
}

/// Min-max normalization to [0,1]; a constant map becomes zeros and sets `constant`.
inline Tensor normalize(const Tensor& map, bool* constant = nullptr) {
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const double a = *lo, b = *hi;
  Tensor out(map.shape());
  const bool flat = !(b - a > 0.0) || !std::isfinite(b - a);
  if (constant) *constant = flat;
  if (flat) return out;
  for (std::size_t i = 0; i < map.size(); ++i) out.data()[i] = (map.data()[i] - a) / (b - a);
  return out;
}

/// Bilinear resize of an [h,w] map (pixel-centre alignment, edge clamping).
inline Tensor bilinear_resize(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2) throw DimensionError("bilinear resize needs an [h,w] map");
  const std::size_t h = map.dim(0), w = map.dim(1);
  Tensor out({out_h, out_w});
  auto src = [&](std::size_t o, std::size_t n_in, std::size_t n_out, std::size_t& i0, std::size_t& i1, double& f) {
    double x = (static_cast<double>(o) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(n_in - 1));
    i0 = static_cast<std::size_t>(x);
    i1 = std::min(i0 + 1, n_in - 1);
    f = x - static_cast<double>(i0);
  };
  for (std::size_t r = 0; r < out_h; ++r) {
    std::size_t r0, r1;
    double fr;
    src(r, h, out_h, r0, r1, fr);
    for (std::size_t c = 0; c < out_w; ++c) {
      std::size_t c0, c1;
      double fc;
      src(c, w, out_w, c0, c1, fc);
      const double top = map.at(r0, c0) * (1 - fc) + map.at(r0, c1) * fc;
      const double bot = map.at(r1, c0) * (1 - fc) + map.at(r1, c1) * fc;
      out.data()[r * out_w + c] = top * (1 - fr) + bot * fr;
    }
  }
  return out;
}

struct Explanation {
  std::vector<Tensor> feature_maps;      // raw P_l, [h,w] each
  Tensor aggregated;                     // mean over l, raw
  Tensor heatmap;                        // input resolution, normalized
  std::vector<Tensor> feature_heatmaps;  // normalized, input resolution
  bool constant = false;                 // aggregated map was constant

  std::size_t features() const noexcept { return feature_maps.size(); }
};

/// All L localization maps for one image [C,H,W] and their normalized mean.
inline Explanation explain(const SCModel& model, const ParamVector& params, const Tensor& image,
                           double slope = kDefaultSlope, Weighting weighting = Weighting::signed_gradients) {
  check_leaky_slope(slope);
  const auto& arch = model.architecture();
  if (image.shape() != arch.image) {
    throw DimensionError("input shape " + shape_string(image.shape()) + " does not match " + shape_string(arch.image));
  }
  Tape tape;
  auto binding = model.bind(tape, params, false);
  auto [semantic, features] = model.encode(binding, tape.input(image));
  const Tensor act = features.value();  // copy: the tape grows below
  const std::size_t out_h = image.dim(1), out_w = image.dim(2);

  Explanation ex;
  ex.aggregated = Tensor({act.dim(1), act.dim(2)});
  for (std::size_t l = 0; l < arch.semantic_length; ++l) {
    const Tensor grad = semantic_gradients(tape, element(semantic, l), features);
    const Tensor rho = weighting_coefficients(grad, act);
    const auto omega = neuron_importance(rho, grad, weighting);
    Tensor p = localization_map(omega, act, slope);
    for (std::size_t i = 0; i < p.size(); ++i) ex.aggregated.data()[i] += p.data()[i];
    ex.feature_heatmaps.push_back(normalize(bilinear_resize(p, out_h, out_w)));
    ex.feature_maps.push_back(std::move(p));
  }
  for (double& v : ex.aggregated.data()) v /= static_cast<double>(arch.semantic_length);
  ex.heatmap = normalize(bilinear_resize(ex.aggregated, out_h, out_w), &ex.constant);
  return ex;
}

/// Writes `<stem>.esc.<l>.pgm` for every feature (1-based) and `<stem>.esc.mean.pgm`.
inline std::vector<std::filesystem::path> export_heatmaps(const Explanation& ex, const std::filesystem::path& dir,
                                                          const std::string& stem, bool binary = true) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t l = 0; l < ex.feature_heatmaps.size(); ++l) {
    written.push_back(dir / (stem + ".esc." + std::to_string(l + 1) + ".pgm"));
    pgm::write(written.back(), ex.feature_heatmaps[l], binary);
  }
  written.push_back(dir / (stem + ".esc.mean.pgm"));
  pgm::write(written.back(), ex.heatmap, binary);
  return written;
}

}  // namespace xsfl::esc
