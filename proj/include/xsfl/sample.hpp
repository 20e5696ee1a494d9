#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xsfl/errors.hpp"
#include "xsfl/rng.hpp"
#include "xsfl/tensor.hpp"

namespace xsfl {

/// One labelled image, [C,H,W] with intensities in [0,1].
struct Sample {
  Tensor image;
  std::size_t label = 0;
};

using Dataset = std::vector<Sample>;

/// Stacked images with their labels and per-sample channel-noise seeds.
struct Batch {
  Tensor images;  // [B,C,H,W]
  std::vector<std::size_t> labels;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Gathers `indices` from `data`. Sample i's noise seed depends only on
/// (stream, indices[i]), so results do not depend on how samples are grouped.
inline Batch make_batch(std::span<const Sample> data, std::span<const std::size_t> indices,
                        std::uint64_t stream) {
  if (indices.empty()) throw ContractError("empty batch");
  const Shape& img = data[indices[0]].image.shape();
  Shape shape{indices.size()};
  shape.insert(shape.end(), img.begin(), img.end());
  Batch b{Tensor(shape), {}, {}};
  const std::size_t per = shape_size(img);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = data[indices[i]];
    if (s.image.shape() != img) throw DimensionError("inconsistent image shapes in batch");
    std::copy(s.image.data().begin(), s.image.data().end(),
              b.images.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    b.labels.push_back(s.label);
    b.seeds.push_back(derive_seed(stream, {indices[i]}));
  }
  return b;
}

}  // namespace xsfl
