#pragma once

// Adaptive client training: cluster devices by data volume, turn cluster
// means into trainable proportions, score parameters with the diagonal
// empirical Fisher of each local model and freeze the least important ones.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "xsfl/errors.hpp"
#include "xsfl/objective.hpp"
#include "xsfl/params.hpp"
#include "xsfl/rng.hpp"

namespace xsfl::act {

struct Clustering {
  std::size_t clusters = 0;
  std::vector<std::size_t> assignment;     // device -> cluster
  std::vector<std::size_t> medoid_device;  // cluster -> device index
  std::vector<double> medoids;             // cluster -> medoid volume
  double objective = 0.0;                  // psi

  std::vector<double> member_volumes(std::size_t cluster, std::span<const double> volumes) const {
    std::vector<double> out;
    for (std::size_t n = 0; n < assignment.size(); ++n)
      if (assignment[n] == cluster) out.push_back(volumes[n]);
    return out;
  }
};

namespace detail {

// Nearest medoid per point (lowest slot on ties); medoid points always stay
// in their own cluster.
inline double assign(std::span<const double> v, std::span<const std::size_t> medoids,
                     std::vector<std::size_t>* assignment) {
  double psi = 0.0;
  if (assignment) assignment->assign(v.size(), 0);
  for (std::size_t n = 0; n < v.size(); ++n) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < medoids.size(); ++c) {
      if (medoids[c] == n) {
        best = c;
        best_d = 0.0;
        break;
      }
      const double d = (v[n] - v[medoids[c]]) * (v[n] - v[medoids[c]]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    psi += best_d;
    if (assignment) (*assignment)[n] = best;
  }
  return psi;
}

}  // namespace detail

/// psi for a given medoid set (each point to its nearest medoid).
inline double clustering_objective(std::span<const double> volumes, std::span<const std::size_t> medoids) {
  return detail::assign(volumes, medoids, nullptr);
}

/// k-medoids on scalar volumes: seeded random initial medoids followed by
/// best-improvement swap descent, repeated `restarts` times; the lowest psi wins.
inline Clustering cluster_devices(std::span<const double> volumes, std::size_t clusters, std::uint64_t seed,
                                  std::size_t restarts = 8) {
  const std::size_t n = volumes.size();
  if (clusters == 0 || clusters > n) {
    throw ParameterError("cluster count must lie in [1, " + std::to_string(n) + "], got " +
                         std::to_string(clusters));
  }
  Rng rng(seed);
  std::vector<std::size_t> best_medoids;
  double best_psi = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates with a library-independent uniform draw.
    for (std::size_t i = 0; i < clusters; ++i) {
      const auto j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n - i));
      std::swap(order[i], order[std::min(j, n - 1)]);
    }
    std::vector<std::size_t> med(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(clusters));
    double psi = clustering_objective(volumes, med);
    for (;;) {
      double cand_psi = psi;
      std::size_t cand_slot = 0, cand_point = 0;
      for (std::size_t slot = 0; slot < clusters; ++slot) {
        for (std::size_t o = 0; o < n; ++o) {
          if (std::find(med.begin(), med.end(), o) != med.end()) continue;
          const std::size_t keep = med[slot];
          med[slot] = o;
          const double c = clustering_objective(volumes, med);
          med[slot] = keep;
          if (c < cand_psi) {
            cand_psi = c;
            cand_slot = slot;
            cand_point = o;
          }
        }
      }
      if (!(cand_psi < psi)) break;
      med[cand_slot] = cand_point;
      psi = cand_psi;
    }
    if (psi < best_psi) {
      best_psi = psi;
      best_medoids = med;
    }
  }
  std::sort(best_medoids.begin(), best_medoids.end(), [&](std::size_t a, std::size_t b) {
    return volumes[a] != volumes[b] ? volumes[a] < volumes[b] : a < b;
  });
  Clustering out;
  out.clusters = clusters;
  out.medoid_device = best_medoids;
  for (auto m : best_medoids) out.medoids.push_back(volumes[m]);
  out.objective = detail::assign(volumes, best_medoids, &out.assignment);
  return out;
}

/// zeta = mean(cluster volumes) / D_max.
inline double compute_proportion(std::span<const double> cluster_volumes, double max_volume) {
  if (!(max_volume > 0.0)) throw ContractError("maximum data volume must be positive");
  if (cluster_volumes.empty()) throw ContractError("empty cluster");
  double s = 0.0;
  for (double v : cluster_volumes) s += v;
  return s / static_cast<double>(cluster_volumes.size()) / max_volume;
}

/// Per-device zeta from a clustering.
inline std::vector<double> proportions(const Clustering& c, std::span<const double> volumes) {
  const double dmax = *std::max_element(volumes.begin(), volumes.end());
  std::vector<double> zeta_of_cluster(c.clusters);
  for (std::size_t k = 0; k < c.clusters; ++k) {
    zeta_of_cluster[k] = compute_proportion(c.member_volumes(k, volumes), dmax);
  }
  std::vector<double> out(volumes.size());
  for (std::size_t n = 0; n < volumes.size(); ++n) out[n] = zeta_of_cluster[c.assignment[n]];
  return out;
}

struct FisherDiagonal {
  std::vector<double> values;
};

struct ImportanceVector {
  std::vector<double> values;
};

/// Diagonal empirical Fisher: mean over samples of squared per-sample loss gradients.
template <Objective O>
FisherDiagonal empirical_fisher(const O& obj, const ParamVector& w, std::uint64_t stream) {
  const std::size_t d = obj.sample_count();
  if (d == 0) throw ContractError("Fisher information of an empty dataset");
  FisherDiagonal f{std::vector<double>(w.size(), 0.0)};
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < d; ++i) {
    obj.sample_loss_and_gradient(w, i, stream, g);
    for (std::size_t k = 0; k < g.size(); ++k) f.values[k] += g[k] * g[k];
  }
  for (double& v : f.values) v /= static_cast<double>(d);
  return f;
}

/// (w_g - w_n)^2 * F, elementwise.
inline ImportanceVector importance(std::span<const double> global, std::span<const double> local,
                                   const FisherDiagonal& fisher) {
  if (global.size() != local.size() || global.size() != fisher.values.size()) {
    throw ContractError("importance: length mismatch");
  }
  ImportanceVector out{std::vector<double>(global.size())};
  for (std::size_t i = 0; i < global.size(); ++i) {
    const double d = global[i] - local[i];
    out.values[i] = d * d * fisher.values[i];
  }
  return out;
}

/// round((1 - zeta) * P), halves rounded up.
inline std::size_t frozen_count(double zeta, std::size_t params) {
  if (!(zeta > 0.0 && zeta <= 1.0)) throw ParameterError("trainable proportion must lie in (0,1]");
  return static_cast<std::size_t>(std::floor((1.0 - zeta) * static_cast<double>(params) + 0.5 + 1e-9));
}

/// Freezes the round((1-zeta)P) entries of smallest |importance|; ties go to the lower index.
inline FreezeMask select_and_freeze(const ImportanceVector& imp, double zeta) {
  const std::size_t p = imp.values.size();
  const std::size_t k = frozen_count(zeta, p);
  FreezeMask mask(p);
  if (k == 0) return mask;
  std::vector<std::size_t> idx(p);
  std::iota(idx.begin(), idx.end(), 0);
  auto less = [&](std::size_t a, std::size_t b) {
    const double ia = std::abs(imp.values[a]), ib = std::abs(imp.values[b]);
    return ia != ib ? ia < ib : a < b;
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), less);
  for (std::size_t i = 0; i < k; ++i) mask.set(idx[i]);
  return mask;
}

/// Quadratic-toy check: returns (sum of importance with F := H_diag, true
/// change of 0.5*sum h (w - w_n)^2 between w_n and w_g).
inline std::pair<double, double> hessian_consistency_check(std::span<const double> global,
                                                           std::span<const double> local,
                                                           std::span<const double> hessian_diag) {
  FisherDiagonal h{std::vector<double>(hessian_diag.begin(), hessian_diag.end())};
  const auto imp = importance(global, local, h);
  double lhs = 0.0;
  for (double v : imp.values) lhs += v;
  auto quad = [&](std::span<const double> w) {
    double q = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) q += 0.5 * hessian_diag[i] * (w[i] - local[i]) * (w[i] - local[i]);
    return q;
  };
  return {lhs, quad(global) - quad(local)};
}

}  // namespace xsfl::act
