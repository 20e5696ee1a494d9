#pragma once

// Synchronous federated training: local SGD under a freeze mask, weighted
// aggregation, per-device model publication and the round loop.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "xsfl/act_strategy.hpp"
#include "xsfl/edge_network.hpp"
#include "xsfl/errors.hpp"
#include "xsfl/objective.hpp"
#include "xsfl/parallel.hpp"
#include "xsfl/params.hpp"
#include "xsfl/rng.hpp"

namespace xsfl::fl {

struct TrainConfig {
  std::size_t epochs = 2;   // G
  double lr = 0.05;
  std::size_t batch = 16;

  void validate() const {
    if (epochs == 0) throw ParameterError("local epochs must be at least 1");
    if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
    if (batch == 0) throw ParameterError("batch size must be at least 1");
  }
};

/// F_n(w): mean per-sample loss over the device's data.
template <Objective O>
double local_loss(const O& obj, const ParamVector& w, std::uint64_t stream = 0) {
  return mean_loss(obj, w, stream);
}

/// Seeded permutation of [0,n) (Fisher-Yates on uniform01).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

/// G epochs of mini-batch SGD starting from `published`. Entries frozen in
/// `mask` are never written, so they stay bit-identical to the published values.
template <Objective O>
ParamVector local_train(const O& obj, const ParamVector& published, const FreezeMask& mask, const TrainConfig& cfg,
                        std::uint64_t seed, std::size_t round = 0) {
  cfg.validate();
  if (obj.sample_count() == 0) throw ContractError("local training on an empty dataset");
  if (mask.size() != published.size()) throw ContractError("freeze mask length does not match parameters");
  ParamVector w = published;
  w.set_round(round);
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!mask.frozen(i)) trainable.push_back(i);
  if (trainable.empty()) return w;

  const std::size_t d = obj.sample_count();
  std::vector<double> g(w.size()), acc(w.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = shuffled_indices(d, derive_seed(seed, {e, 0}));
    const std::uint64_t stream = derive_seed(seed, {e, 1});
    for (std::size_t start = 0; start < d; start += cfg.batch) {
      const std::size_t stop = std::min(d, start + cfg.batch);
      std::fill(acc.begin(), acc.end(), 0.0);
      double loss = 0.0;
      for (std::size_t s = start; s < stop; ++s) {
        loss += obj.sample_loss_and_gradient(w, order[s], stream, g);
        for (std::size_t i : trainable) acc[i] += g[i];
      }
      if (!std::isfinite(loss)) throw DivergedError(round, e);
      const double step = cfg.lr / static_cast<double>(stop - start);
      for (std::size_t i : trainable) w[i] -= step * acc[i];
    }
  }
  if (!w.all_finite()) throw DivergedError(round, cfg.epochs - 1);
  return w;
}

/// One aggregation input: data volume D_n and the device's model.
struct Contribution {
  double volume = 0.0;
  const ParamVector* params = nullptr;
};

/// (1 / sum D_n) * sum D_n w_n, elementwise.
inline ParamVector aggregate(std::span<const Contribution> models) {
  if (models.empty()) throw ContractError("aggregate needs at least one model");
  const ParamVector& first = *models.front().params;
  double total = 0.0;
  for (const auto& m : models) {
    if (!m.params->same_layout(first)) throw ContractError("aggregate: parameter manifests differ");
    if (!(m.volume > 0.0)) throw ContractError("aggregate: data volumes must be positive");
    total += m.volume;
  }
  ParamVector out(first.manifest());
  out.set_round(first.round());
  auto o = out.values();
  for (const auto& m : models) {
    const auto v = m.params->values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += m.volume * v[i];
  }
  for (double& x : o) x /= total;
  return out;
}

/// (1/N) sum_n F_n(w_g): unweighted over devices.
template <Objective O>
double global_loss(std::span<const O> objectives, const ParamVector& w, std::uint64_t stream = 0) {
  if (objectives.empty()) throw ContractError("global loss needs at least one device");
  double s = 0.0;
  for (const auto& o : objectives) s += local_loss(o, w, stream);
  return s / static_cast<double>(objectives.size());
}

/// A device-specific copy of the global model: same values, own mask.
struct Published {
  ParamVector params;
  FreezeMask mask;
};

inline std::vector<Published> publish(const ParamVector& global, std::span<const FreezeMask> masks) {
  std::vector<Published> out;
  out.reserve(masks.size());
  for (const auto& m : masks) {
    if (m.size() != global.size()) throw ContractError("freeze mask length does not match parameters");
    out.push_back({global, m});
  }
  return out;
}

template <Objective O>
struct DeviceState {
  O objective;
  edge::DeviceProfile profile;
  ParamVector local;  // w_n; empty until the device first trains
  FreezeMask mask;

  std::size_t volume() const { return objective.sample_count(); }
  bool has_local() const { return local.size() > 0; }
};

struct EngineConfig {
  TrainConfig train;
  bool act_enabled = true;
  std::size_t clusters = 3;
  double d_max = std::numeric_limits<double>::infinity();
  double gain_jitter_db = 0.0;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
};

struct DeviceRound {
  double zeta = 1.0;
  std::size_t frozen = 0;
  bool participated = false;  // within the delay budget
  bool diverged = false;
};

struct RoundReport {
  std::size_t round = 0;
  double global_loss = 0.0;
  edge::DelayReport delays;
  std::vector<DeviceRound> devices;

  /// Devices whose models entered the aggregate.
  std::size_t aggregated() const {
    std::size_t n = 0;
    for (const auto& d : devices) n += d.participated && !d.diverged;
    return n;
  }
};

/// Holds the global model and device states across rounds.
template <Objective O>
class Engine {
 public:
  /// Called for every trained device with what it received and what it returned.
  using Observer = std::function<void(std::size_t device, const Published& received, const ParamVector& trained)>;

  Engine(std::vector<DeviceState<O>> devices, ParamVector initial, EngineConfig cfg)
      : devices_(std::move(devices)), global_(std::move(initial)), cfg_(cfg) {
    cfg_.train.validate();
    if (devices_.empty()) throw ContractError("engine needs at least one device");
    std::vector<double> volumes;
    for (auto& d : devices_) {
      if (d.volume() == 0) throw ContractError("device with an empty dataset");
      d.profile.validate();
      d.mask = FreezeMask(global_.size());
      volumes.push_back(static_cast<double>(d.volume()));
    }
    clustering_ = act::cluster_devices(volumes, cfg_.clusters, derive_seed(cfg_.seed, {kClusterTag}));
    zeta_ = act::proportions(clustering_, volumes);
  }

  const ParamVector& global() const noexcept { return global_; }
  std::size_t round() const noexcept { return round_; }
  const act::Clustering& clustering() const noexcept { return clustering_; }
  const std::vector<double>& proportions() const noexcept { return zeta_; }
  const std::vector<DeviceState<O>>& devices() const noexcept { return devices_; }
  void set_observer(Observer obs) { observer_ = std::move(obs); }

  /// One synchronous round: ACT masks, publication, delay budget, parallel
  /// local training of participants and aggregation. Throws EmptyRoundError
  /// (after advancing the round counter) when nobody can be aggregated;
  /// the global model is then left unchanged.
  RoundReport run_round() {
    const std::size_t t = round_++;
    const std::size_t n_dev = devices_.size();
    RoundReport rep;
    rep.round = t;
    rep.devices.resize(n_dev);

    // ACT: needs each device's previous local model, so round 0 trains fully.
    if (cfg_.act_enabled && t > 0) {
      parallel_for(
          n_dev,
          [&](std::size_t n) {
            auto& d = devices_[n];
            if (!d.has_local()) {
              d.mask = FreezeMask(global_.size());
              return;
            }
            const auto f = act::empirical_fisher(d.objective, d.local, derive_seed(cfg_.seed, {t, n, kFisherTag}));
            d.mask = act::select_and_freeze(act::importance(global_.values(), d.local.values(), f), zeta_[n]);
          },
          cfg_.workers);
    } else {
      for (auto& d : devices_) d.mask = FreezeMask(global_.size());
    }

    std::vector<FreezeMask> masks;
    for (const auto& d : devices_) masks.push_back(d.mask);
    auto published = publish(global_, masks);

    // Delay accounting decides who takes part.
    rep.delays.bits = edge::model_bits(global_);
    std::vector<double> totals;
    for (std::size_t n = 0; n < n_dev; ++n) {
      auto profile = devices_[n].profile;
      profile.channel_gain =
          edge::jittered_gain(profile.channel_gain, cfg_.gain_jitter_db, derive_seed(cfg_.seed, {t, n, kGainTag}));
      const auto dd = edge::device_delay(profile, devices_[n].volume(), global_.size(),
                                         masks[n].trainable_count(), cfg_.train.epochs);
      rep.delays.devices.push_back(dd);
      totals.push_back(dd.total());
      rep.devices[n].zeta = cfg_.act_enabled && t > 0 && devices_[n].has_local() ? zeta_[n] : 1.0;
      rep.devices[n].frozen = masks[n].frozen_count();
    }
    rep.delays.round = edge::round_delay(totals, cfg_.d_max, t);

    std::vector<ParamVector> trained(n_dev);
    std::vector<char> ok(n_dev, 0);
    parallel_for(
        n_dev,
        [&](std::size_t n) {
          if (!rep.delays.round.participates[n]) return;
          rep.devices[n].participated = true;
          try {
            trained[n] = local_train(devices_[n].objective, published[n].params, published[n].mask, cfg_.train,
                                     derive_seed(cfg_.seed, {t, n, kTrainTag}), t);
            ok[n] = 1;
          } catch (const DivergedError&) {
            rep.devices[n].diverged = true;
          }
        },
        cfg_.workers);

    std::vector<Contribution> inputs;
    for (std::size_t n = 0; n < n_dev; ++n) {
      if (!ok[n]) continue;
      if (observer_) observer_(n, published[n], trained[n]);
      devices_[n].local = std::move(trained[n]);
      inputs.push_back({static_cast<double>(devices_[n].volume()), &devices_[n].local});
    }
    if (inputs.empty()) throw EmptyRoundError(t);
    global_ = aggregate(inputs);
    global_.set_round(t + 1);

    std::vector<O> objectives;
    objectives.reserve(n_dev);
    for (const auto& d : devices_) objectives.push_back(d.objective);
    rep.global_loss = global_loss<O>(objectives, global_, derive_seed(cfg_.seed, {t, kLossTag}));
    return rep;
  }

 private:
  static constexpr std::uint64_t kClusterTag = 0xC1;
  static constexpr std::uint64_t kFisherTag = 0xF1;
  static constexpr std::uint64_t kGainTag = 0x6A;
  static constexpr std::uint64_t kTrainTag = 0x7A;
  static constexpr std::uint64_t kLossTag = 0x10;

  std::vector<DeviceState<O>> devices_;
  ParamVector global_;
  EngineConfig cfg_;
  act::Clustering clustering_;
  std::vector<double> zeta_;
  std::size_t round_ = 0;
  Observer observer_;
};

}  // namespace xsfl::fl
