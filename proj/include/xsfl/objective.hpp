#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xsfl/params.hpp"
#include "xsfl/rng.hpp"
#include "xsfl/sample.hpp"
#include "xsfl/sc_model.hpp"

namespace xsfl {

/// A finite-sum loss over indexed samples: what local training and the
/// Fisher estimate need from a model. `stream` seeds any per-sample
/// randomness (channel noise) so evaluations are reproducible.
template <class O>
concept Objective = requires(const O& o, const ParamVector& w, std::size_t i, std::uint64_t stream,
                             std::span<double> grad) {
  { o.sample_count() } -> std::convertible_to<std::size_t>;
  { o.sample_loss(w, i, stream) } -> std::convertible_to<double>;
  { o.sample_loss_and_gradient(w, i, stream, grad) } -> std::convertible_to<double>;
};

/// Mean per-sample loss over the whole objective.
template <Objective O>
double mean_loss(const O& obj, const ParamVector& w, std::uint64_t stream) {
  if (obj.sample_count() == 0) throw ContractError("loss over an empty dataset");
  if constexpr (requires { obj.sample_losses(w, stream); }) {
    double s = 0.0;
    for (double v : obj.sample_losses(w, stream)) s += v;
    return s / static_cast<double>(obj.sample_count());
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < obj.sample_count(); ++i) s += obj.sample_loss(w, i, stream);
    return s / static_cast<double>(obj.sample_count());
  }
}

/// CE loss of the semantic-communication model over one device's data.
class SCObjective {
 public:
  SCObjective(const SCModel& model, std::span<const Sample> data, ChannelSpec channel)
      : model_(&model), data_(data), channel_(channel) {}

  std::size_t sample_count() const noexcept { return data_.size(); }
  const ChannelSpec& channel() const noexcept { return channel_; }

  /// Noise seed of sample i; shared with make_batch so batched and
  /// per-sample evaluation agree.
  static std::uint64_t noise_seed(std::uint64_t stream, std::size_t i) { return derive_seed(stream, {i}); }

  double sample_loss(const ParamVector& w, std::size_t i, std::uint64_t stream) const {
    return model_->forward_loss(w, data_[i].image, data_[i].label, channel_, noise_seed(stream, i));
  }

  double sample_loss_and_gradient(const ParamVector& w, std::size_t i, std::uint64_t stream,
                                  std::span<double> grad) const {
    return model_->loss_and_gradient(w, data_[i].image, data_[i].label, channel_, noise_seed(stream, i), grad);
  }

  /// All per-sample losses, evaluated in batches.
  std::vector<double> sample_losses(const ParamVector& w, std::uint64_t stream) const {
    constexpr std::size_t kEvalBatch = 64;
    std::vector<double> out;
    out.reserve(data_.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data_.size(); start += kEvalBatch) {
      idx.clear();
      for (std::size_t i = start; i < std::min(data_.size(), start + kEvalBatch); ++i) idx.push_back(i);
      auto losses = model_->forward_losses(w, make_batch(data_, idx, stream), channel_);
      out.insert(out.end(), losses.begin(), losses.end());
    }
    return out;
  }

 private:
  const SCModel* model_;
  std::span<const Sample> data_;
  ChannelSpec channel_;
};

}  // namespace xsfl
