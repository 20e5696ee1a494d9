#pragma once

// Shannon-rate links, transmission/computation delays and synchronous round
// delay with a per-device budget.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "xsfl/errors.hpp"
#include "xsfl/params.hpp"
#include "xsfl/rng.hpp"

namespace xsfl::edge {

inline constexpr double kInfiniteDelay = std::numeric_limits<double>::infinity();
inline constexpr std::size_t kBitsPerParameter = 32;

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

struct DeviceProfile {
  double cpu_hz = 2e9;               // f_{n,t}
  std::size_t channel = 0;           // j
  double tx_power_up_w = 0.01;       // P^U
  double tx_power_down_w = 1.0;      // P^D
  double bandwidth_up_hz = 1e6;      // B^U
  double bandwidth_down_hz = 20e6;   // B^D
  double channel_gain = 1e-5;        // h_{n,j}, linear power gain
  double interference_up_w = 0.0;    // I^U
  double interference_down_w = 0.0;  // I^D
  double noise_psd_w_per_hz = dbm_to_watts(-174.0);  // sigma
  double cycles_per_param = 10.0;    // kappa

  void validate() const {
    const bool positive = cpu_hz > 0 && tx_power_up_w > 0 && tx_power_down_w > 0 && bandwidth_up_hz > 0 &&
                          bandwidth_down_hz > 0 && channel_gain > 0 && noise_psd_w_per_hz > 0 &&
                          cycles_per_param > 0;
    if (!positive) throw ParameterError("device profile values must be positive");
    if (interference_up_w < 0 || interference_down_w < 0) {
      throw ParameterError("interference must be non-negative");
    }
  }
};

/// B*log2(1 + P*h / (I + sigma*B)); noise power is the PSD times the bandwidth.
inline double shannon_rate(double bandwidth_hz, double power_w, double gain, double interference_w,
                           double noise_psd_w_per_hz) {
  const double snr = power_w * gain / (interference_w + noise_psd_w_per_hz * bandwidth_hz);
  return bandwidth_hz * std::log2(1.0 + snr);
}

inline double uplink_rate(const DeviceProfile& d) {
  return shannon_rate(d.bandwidth_up_hz, d.tx_power_up_w, d.channel_gain, d.interference_up_w,
                      d.noise_psd_w_per_hz);
}

inline double downlink_rate(const DeviceProfile& d) {
  return shannon_rate(d.bandwidth_down_hz, d.tx_power_down_w, d.channel_gain, d.interference_down_w,
                      d.noise_psd_w_per_hz);
}

/// Z: the whole model travels each way, frozen entries included.
inline double model_bits(std::size_t parameter_count) {
  return static_cast<double>(kBitsPerParameter * parameter_count);
}
inline double model_bits(const ParamVector& params) { return model_bits(params.size()); }

struct TransmissionDelays {
  double up = 0.0;
  double down = 0.0;
};

/// Z/R each way; a zero rate gives kInfiniteDelay.
inline TransmissionDelays transmission_delays(double bits, double rate_up, double rate_down) {
  auto one = [bits](double r) { return r > 0.0 ? bits / r : kInfiniteDelay; };
  return {one(rate_up), one(rate_down)};
}

/// Phi = kappa * trainable parameter count.
inline double cycles_per_sample(double cycles_per_param, std::size_t trainable_params) {
  return cycles_per_param * static_cast<double>(trainable_params);
}

/// d^L = D_n * Phi * G / f.
inline double compute_delay(std::size_t volume, double cycles_per_sample, std::size_t epochs, double cpu_hz) {
  if (!(cpu_hz > 0.0)) throw ContractError("CPU frequency must be positive");
  return static_cast<double>(volume) * cycles_per_sample * static_cast<double>(epochs) / cpu_hz;
}

struct DeviceDelay {
  double up = 0.0;       // d^U
  double down = 0.0;     // d^D
  double compute = 0.0;  // d^L

  double total() const { return up + down + compute; }  // d_{n,t}
};

struct RoundDelay {
  double round = 0.0;  // d_t
  std::vector<bool> participates;

  std::size_t participants() const {
    return static_cast<std::size_t>(std::count(participates.begin(), participates.end(), true));
  }
};

/// Devices with d_{n,t} <= d_max participate; d_t is the max over them.
inline RoundDelay round_delay(std::span<const double> device_totals, double d_max, std::size_t round = 0) {
  if (device_totals.empty()) throw ContractError("round_delay needs at least one device");
  RoundDelay r;
  r.participates.resize(device_totals.size());
  bool any = false;
  for (std::size_t n = 0; n < device_totals.size(); ++n) {
    const bool in = device_totals[n] <= d_max;
    r.participates[n] = in;
    if (in) {
      r.round = any ? std::max(r.round, device_totals[n]) : device_totals[n];
      any = true;
    }
  }
  if (!any) throw EmptyRoundError(round);
  return r;
}

struct DelayReport {
  std::vector<DeviceDelay> devices;
  RoundDelay round;
  double bits = 0.0;  // Z

  /// Up plus down traffic of the participating devices.
  double communication_bits() const { return static_cast<double>(round.participants()) * 2.0 * bits; }
};

/// Delay of one device for one round given its trainable parameter count.
inline DeviceDelay device_delay(const DeviceProfile& profile, std::size_t volume, std::size_t total_params,
                                std::size_t trainable_params, std::size_t epochs) {
  const double z = model_bits(total_params);
  const auto tx = transmission_delays(z, uplink_rate(profile), downlink_rate(profile));
  return {tx.up, tx.down,
          compute_delay(volume, cycles_per_sample(profile.cycles_per_param, trainable_params), epochs,
                        profile.cpu_hz)};
}

/// Channel gain with log-normal jitter of `sigma_db` dB, drawn from `seed`.
inline double jittered_gain(double gain, double sigma_db, std::uint64_t seed) {
  if (sigma_db <= 0.0) return gain;
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, sigma_db);
  return gain * db_to_linear(dist(rng));
}

}  // namespace xsfl::edge
