#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xsfl/errors.hpp"
#include "xsfl/tensor.hpp"

namespace xsfl {

struct LayerShape {
  std::string name;
  Shape shape;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Ordered list of named parameter blocks making up a flat parameter vector.
using Manifest = std::vector<LayerShape>;

inline std::size_t manifest_size(const Manifest& m) {
  std::size_t n = 0;
  for (const auto& l : m) n += shape_size(l.shape);
  return n;
}

/// Flat model parameters with their layer manifest. The unit that is
/// aggregated, frozen, transmitted and serialized.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(Manifest manifest)
      : manifest_(std::move(manifest)), values_(manifest_size(manifest_), 0.0) {}

  ParamVector(Manifest manifest, std::vector<double> values)
      : manifest_(std::move(manifest)), values_(std::move(values)) {
    if (values_.size() != manifest_size(manifest_)) {
      throw DimensionError("parameter count " + std::to_string(values_.size()) +
                           " does not match manifest total " +
                           std::to_string(manifest_size(manifest_)));
    }
  }

  const Manifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::size_t round() const noexcept { return round_; }
  void set_round(std::size_t t) noexcept { round_ = t; }

  /// Offset of a named block inside the flat vector.
  std::size_t offset(const std::string& name) const {
    std::size_t off = 0;
    for (const auto& l : manifest_) {
      if (l.name == name) return off;
      off += shape_size(l.shape);
    }
    throw ContractError("no parameter block named '" + name + "'");
  }

  const LayerShape& layer(const std::string& name) const {
    for (const auto& l : manifest_)
      if (l.name == name) return l;
    throw ContractError("no parameter block named '" + name + "'");
  }

  /// Copy of one block as a tensor.
  Tensor block(const std::string& name) const {
    const auto& l = layer(name);
    const auto off = offset(name);
    const auto n = shape_size(l.shape);
    return Tensor(l.shape, std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(off),
                                               values_.begin() + static_cast<std::ptrdiff_t>(off + n)));
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_layout(const ParamVector& other) const { return manifest_ == other.manifest_; }

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.manifest_ == b.manifest_ && a.values_ == b.values_;
  }

 private:
  Manifest manifest_;
  std::vector<double> values_;
  std::size_t round_ = 0;
};

/// Per-entry frozen flags aligned with a ParamVector.
class FreezeMask {
 public:
  FreezeMask() = default;
  explicit FreezeMask(std::size_t n, bool frozen = false) : flags_(n, frozen) {}
  explicit FreezeMask(std::vector<bool> flags) : flags_(std::move(flags)) {}

  std::size_t size() const noexcept { return flags_.size(); }
  bool frozen(std::size_t i) const { return flags_[i]; }
  void set(std::size_t i, bool v = true) { flags_[i] = v; }

  std::size_t frozen_count() const {
    return static_cast<std::size_t>(std::count(flags_.begin(), flags_.end(), true));
  }
  std::size_t trainable_count() const { return flags_.size() - frozen_count(); }

  const std::vector<bool>& flags() const noexcept { return flags_; }

  friend bool operator==(const FreezeMask&, const FreezeMask&) = default;

 private:
  std::vector<bool> flags_;
};

}  // namespace xsfl
