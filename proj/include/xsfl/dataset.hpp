#pragma once

// Synthetic fire-like images, PGM directory ingestion, the train/test split
// and partitioning of training samples across devices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xsfl/errors.hpp"
#include "xsfl/pgm.hpp"
#include "xsfl/rng.hpp"
#include "xsfl/sample.hpp"

namespace xsfl::data {

/// Half-open pixel rectangle [r0,r1) x [c0,c1).
struct BBox {
  std::size_t r0 = 0, c0 = 0, r1 = 0, c1 = 0;

  bool empty() const noexcept { return r1 <= r0 || c1 <= c0; }
  bool contains(std::size_t r, std::size_t c) const noexcept { return r >= r0 && r < r1 && c >= c0 && c < c1; }
};

/// Samples plus, for synthetic data, the blob box of each class-1 image.
struct LabeledSet {
  Dataset samples;
  std::vector<BBox> boxes;  // empty box when no blob

  std::size_t size() const noexcept { return samples.size(); }
};

struct SynthSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t class0 = 100;  // noise-only images
  std::size_t class1 = 100;  // images with a blob
  double background_min = 0.1;
  double background_max = 0.3;
  double noise_std = 0.05;
  double blob_amplitude_min = 0.6;
  double blob_amplitude_max = 0.9;
  double blob_sigma_min = 1.2;
  double blob_sigma_max = 2.0;

  void validate() const {
    if (height < 8 || width < 8) throw ParameterError("synthetic images must be at least 8x8");
    if (class0 + class1 == 0) throw ParameterError("synthetic spec has no images");
    if (!(background_min <= background_max && blob_amplitude_min <= blob_amplitude_max &&
          blob_sigma_min <= blob_sigma_max && blob_sigma_min > 0 && noise_std >= 0)) {
      throw ParameterError("inconsistent synthetic spec ranges");
    }
  }
};

namespace detail {

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::size_t clamp_index(double v, std::size_t n) {
  if (v <= 0.0) return 0;
  return std::min(n, static_cast<std::size_t>(v));
}

}  // namespace detail

/// One synthetic image from its own seed; class 1 adds a Gaussian blob.
inline Sample synthesize_image(const SynthSpec& spec, std::size_t label, std::uint64_t seed, BBox* box = nullptr) {
  Rng rng(seed);
  const std::size_t h = spec.height, w = spec.width;
  Sample s{Tensor({1, h, w}), label};
  const double base = detail::uniform(rng, spec.background_min, spec.background_max);
  std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);
  auto d = s.image.data();
  for (double& v : d) v = base + (spec.noise_std > 0 ? noise(rng) : 0.0);
  BBox b;
  if (label == 1) {
    const double amp = detail::uniform(rng, spec.blob_amplitude_min, spec.blob_amplitude_max);
    const double sigma = detail::uniform(rng, spec.blob_sigma_min, spec.blob_sigma_max);
    const double margin = 3.0;
    const double cy = detail::uniform(rng, margin, static_cast<double>(h) - 1.0 - margin);
    const double cx = detail::uniform(rng, margin, static_cast<double>(w) - 1.0 - margin);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
        d[r * w + c] += amp * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      }
    const double reach = 2.0 * sigma;
    b = {detail::clamp_index(std::ceil(cy - reach), h), detail::clamp_index(std::ceil(cx - reach), w),
         detail::clamp_index(std::floor(cy + reach) + 1.0, h), detail::clamp_index(std::floor(cx + reach) + 1.0, w)};
  }
  for (double& v : d) v = std::clamp(v, 0.0, 1.0);
  if (box) *box = b;
  return s;
}

/// class0 noise images followed by class1 blob images, each seeded by its index.
inline LabeledSet synthesize_fire_like(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  LabeledSet out;
  const std::size_t n = spec.class0 + spec.class1;
  for (std::size_t i = 0; i < n; ++i) {
    BBox b;
    out.samples.push_back(synthesize_image(spec, i < spec.class0 ? 0 : 1, derive_seed(seed, {i}), &b));
    out.boxes.push_back(b);
  }
  return out;
}

/// Reads `<dir>/<class>/*.pgm`; class subdirectories sorted by name give labels 0..M-1.
inline LabeledSet load_directory(const std::filesystem::path& dir, std::size_t* classes = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IngestionError(dir.string() + ": not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  LabeledSet out;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[label]))
      if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Sample s{pgm::read(f), label};
      if (!out.samples.empty() && s.image.shape() != out.samples.front().image.shape()) {
        throw IngestionError(f.string() + ": image shape " + shape_string(s.image.shape()) + " differs from " +
                             shape_string(out.samples.front().image.shape()));
      }
      out.samples.push_back(std::move(s));
      out.boxes.emplace_back();
    }
  }
  if (out.samples.empty()) throw IngestionError(dir.string() + ": no PGM images found");
  if (classes) *classes = class_dirs.size();
  return out;
}

/// round-half-up(0.8 n).
inline std::size_t train_count(std::size_t n) { return (8 * n + 5) / 10; }

/// Smallest n whose training share is exactly `train`.
inline std::size_t total_for_train(std::size_t train) {
  std::size_t n = (5 * train) / 4;
  while (train_count(n) < train) ++n;
  return n;
}

struct Split {
  LabeledSet train;
  LabeledSet test;
};

/// Seeded shuffle, then the first round(0.8 n) samples train and the rest test.
inline Split split(const LabeledSet& all, std::uint64_t seed) {
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
    std::swap(idx[i - 1], idx[j]);
  }
  const std::size_t n_train = train_count(all.size());
  Split s;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto& dst = k < n_train ? s.train : s.test;
    dst.samples.push_back(all.samples[idx[k]]);
    dst.boxes.push_back(all.boxes[idx[k]]);
  }
  return s;
}

/// Volumes drawn log-uniformly in [lo, hi], rounded to whole samples.
inline std::vector<std::size_t> log_uniform_volumes(std::size_t devices, double lo, double hi, std::uint64_t seed) {
  if (!(lo >= 1.0 && hi >= lo)) throw ParameterError("volume range must satisfy 1 <= min <= max");
  Rng rng(seed);
  std::vector<std::size_t> v;
  for (std::size_t n = 0; n < devices; ++n) {
    const double x = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * uniform01(rng));
    v.push_back(static_cast<std::size_t>(std::llround(x)));
  }
  return v;
}

/// Equal shares of `total`, the remainder going to the first devices.
inline std::vector<std::size_t> equal_volumes(std::size_t devices, std::size_t total) {
  std::vector<std::size_t> v(devices, total / devices);
  for (std::size_t n = 0; n < total % devices; ++n) ++v[n];
  return v;
}

/// Consecutive slices of `train` with the given sizes.
inline std::vector<Dataset> partition(const Dataset& train, std::span<const std::size_t> volumes) {
  std::size_t need = 0;
  for (auto v : volumes) {
    if (v == 0) throw ParameterError("every device needs at least one sample");
    need += v;
  }
  if (need > train.size()) {
    throw IngestionError("device volumes need " + std::to_string(need) + " training samples, only " +
                         std::to_string(train.size()) + " available");
  }
  std::vector<Dataset> out;
  std::size_t at = 0;
  for (auto v : volumes) {
    out.emplace_back(train.begin() + static_cast<std::ptrdiff_t>(at), train.begin() + static_cast<std::ptrdiff_t>(at + v));
    at += v;
  }
  return out;
}

/// Writes a set as `<dir>/<label>/<index>.pgm` so load_directory reads it back.
inline void write_directory(const LabeledSet& set, const std::filesystem::path& dir, std::size_t classes) {
  namespace fs = std::filesystem;
  for (std::size_t c = 0; c < classes; ++c) fs::create_directories(dir / std::to_string(c));
  const std::size_t digits = std::to_string(set.size()).size();
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::string name = std::to_string(i);
    name.insert(0, digits - name.size(), '0');
    pgm::write(dir / std::to_string(set.samples[i].label) / (name + ".pgm"), set.samples[i].image);
  }
}

}  // namespace xsfl::data
