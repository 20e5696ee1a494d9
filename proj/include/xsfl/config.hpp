#pragma once

// Flat `key = value` configuration files (`#` starts a comment). Keys map
// one-to-one onto struct fields; unknown keys are errors.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xsfl/dataset.hpp"
#include "xsfl/edge_network.hpp"
#include "xsfl/errors.hpp"

namespace xsfl::config {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw ParameterError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] != '-') x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw ParameterError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ParameterError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>) {
      s += fmt(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

/// key -> (setter, getter) for one struct type.
template <class S>
struct Field {
  std::function<void(S&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const S&)> get;
};

template <class S>
using Schema = std::map<std::string, Field<S>>;

template <class S, class T>
Field<S> field(T S::*member) {
  Field<S> f;
  f.set = [member](S& s, const std::string& key, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>) {
      s.*member = to_bool(key, v);
    } else if constexpr (std::is_same_v<T, double>) {
      s.*member = to_double(key, v);
    } else if constexpr (std::is_integral_v<T>) {
      s.*member = static_cast<T>(to_uint(key, v));
    } else if constexpr (std::is_same_v<T, std::string>) {
      s.*member = v;
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      (s.*member).clear();
      if (!v.empty())
        for (const auto& item : split_list(v)) (s.*member).push_back(to_double(key, item));
    } else {
      (s.*member).clear();
      if (!v.empty())
        for (const auto& item : split_list(v)) (s.*member).push_back(static_cast<typename T::value_type>(to_uint(key, item)));
    }
  };
  f.get = [member](const S& s) -> std::string {
    if constexpr (std::is_same_v<T, bool>) {
      return s.*member ? "true" : "false";
    } else if constexpr (std::is_same_v<T, double>) {
      return fmt(s.*member);
    } else if constexpr (std::is_integral_v<T>) {
      return std::to_string(s.*member);
    } else if constexpr (std::is_same_v<T, std::string>) {
      return s.*member;
    } else {
      return join(s.*member);
    }
  };
  return f;
}

template <class S>
S parse(std::istream& is, const Schema<S>& schema, const std::string& what) {
  S out;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = what + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ParameterError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = schema.find(key);
    if (it == schema.end()) throw ParameterError(where + ": unknown key '" + key + "'");
    if (seen.count(key)) throw ParameterError(where + ": duplicate key '" + key + "'");
    seen[key] = lineno;
    try {
      it->second.set(out, key, value);
    } catch (const ParameterError& e) {
      throw ParameterError(where + ": " + e.what());
    }
  }
  return out;
}

template <class S>
std::string write(const S& s, const Schema<S>& schema) {
  std::string out;
  for (const auto& [key, f] : schema) out += key + " = " + f.get(s) + "\n";
  return out;
}

template <class S>
S parse_file(const std::filesystem::path& path, const Schema<S>& schema) {
  std::ifstream is(path);
  if (!is) throw IngestionError(path.string() + ": cannot open");
  return parse(is, schema, path.string());
}

}  // namespace detail

struct ExperimentConfig {
  // Training and federation.
  std::size_t rounds = 30;
  std::size_t epochs = 2;
  std::size_t devices = 10;
  std::size_t clusters = 3;
  double d_max = std::numeric_limits<double>::infinity();
  double lr = 0.05;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
  bool act_enabled = true;
  bool esc_export = false;
  std::size_t workers = 0;

  // Data.
  std::string dataset = "synthetic";  // or a directory of class subdirectories
  std::size_t image_size = 16;
  double volume_min = 50;
  double volume_max = 500;
  std::vector<std::size_t> volumes;  // explicit per-device volumes; drawn when empty

  // Model and channel.
  std::vector<std::size_t> conv_kernels{8, 16};
  std::size_t kernel_size = 3;
  std::size_t semantic_length = 16;
  std::size_t decoder_hidden = 32;
  double hidden_slope = 0.01;
  double channel_gain = 1.0;
  double noise_std = 0.0;

  // Explanations.
  double esc_slope = 0.2;
  std::size_t esc_images = 20;
  bool esc_positive_gradients = false;

  // Edge devices: one value for all devices or one per device.
  std::vector<double> cpu_hz{2e9};
  std::vector<double> tx_power_up_w{0.01};
  std::vector<double> tx_power_down_w{1.0};
  std::vector<double> bandwidth_up_hz{1e6};
  std::vector<double> bandwidth_down_hz{20e6};
  std::vector<double> channel_gain_db{-50.0};
  std::vector<double> interference_up_w{0.0};
  std::vector<double> interference_down_w{0.0};
  std::vector<double> noise_psd_dbm_hz{-174.0};
  std::vector<double> cycles_per_param{10.0};
  double gain_jitter_db = 0.0;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  void validate() const {
    if (rounds == 0 || epochs == 0 || devices == 0 || clusters == 0 || batch == 0 || image_size == 0 ||
        semantic_length == 0 || decoder_hidden == 0 || kernel_size == 0) {
      throw ParameterError("counts in the configuration must be positive");
    }
    if (clusters > devices) throw ParameterError("clusters must not exceed devices");
    if (!volumes.empty() && volumes.size() != devices) throw ParameterError("volumes needs one entry per device");
    if (!(d_max > 0.0)) throw ParameterError("d_max must be positive");
    if (!(lr > 0.0)) throw ParameterError("lr must be positive");
    if (conv_kernels.empty()) throw ParameterError("conv_kernels must list at least one layer");
    for (const auto* table : {&cpu_hz, &tx_power_up_w, &tx_power_down_w, &bandwidth_up_hz, &bandwidth_down_hz,
                              &channel_gain_db, &interference_up_w, &interference_down_w, &noise_psd_dbm_hz,
                              &cycles_per_param}) {
      if (table->size() != 1 && table->size() != devices) {
        throw ParameterError("device tables need 1 or " + std::to_string(devices) + " entries");
      }
    }
  }

  /// Profile of device n from the per-device tables.
  edge::DeviceProfile profile(std::size_t n) const {
    auto at = [n](const std::vector<double>& t) { return t.size() == 1 ? t[0] : t.at(n); };
    edge::DeviceProfile p;
    p.cpu_hz = at(cpu_hz);
    p.channel = n;
    p.tx_power_up_w = at(tx_power_up_w);
    p.tx_power_down_w = at(tx_power_down_w);
    p.bandwidth_up_hz = at(bandwidth_up_hz);
    p.bandwidth_down_hz = at(bandwidth_down_hz);
    p.channel_gain = edge::db_to_linear(at(channel_gain_db));
    p.interference_up_w = at(interference_up_w);
    p.interference_down_w = at(interference_down_w);
    p.noise_psd_w_per_hz = edge::dbm_to_watts(at(noise_psd_dbm_hz));
    p.cycles_per_param = at(cycles_per_param);
    p.validate();
    return p;
  }
};

inline const detail::Schema<ExperimentConfig>& experiment_schema() {
  using C = ExperimentConfig;
  using detail::field;
  static const detail::Schema<C> s{
      {"rounds", field(&C::rounds)},
      {"epochs", field(&C::epochs)},
      {"devices", field(&C::devices)},
      {"clusters", field(&C::clusters)},
      {"d_max", field(&C::d_max)},
      {"lr", field(&C::lr)},
      {"batch", field(&C::batch)},
      {"seed", field(&C::seed)},
      {"act_enabled", field(&C::act_enabled)},
      {"esc_export", field(&C::esc_export)},
      {"workers", field(&C::workers)},
      {"dataset", field(&C::dataset)},
      {"image_size", field(&C::image_size)},
      {"volume_min", field(&C::volume_min)},
      {"volume_max", field(&C::volume_max)},
      {"volumes", field(&C::volumes)},
      {"conv_kernels", field(&C::conv_kernels)},
      {"kernel_size", field(&C::kernel_size)},
      {"semantic_length", field(&C::semantic_length)},
      {"decoder_hidden", field(&C::decoder_hidden)},
      {"hidden_slope", field(&C::hidden_slope)},
      {"channel_gain", field(&C::channel_gain)},
      {"noise_std", field(&C::noise_std)},
      {"esc_slope", field(&C::esc_slope)},
      {"esc_images", field(&C::esc_images)},
      {"esc_positive_gradients", field(&C::esc_positive_gradients)},
      {"cpu_hz", field(&C::cpu_hz)},
      {"tx_power_up_w", field(&C::tx_power_up_w)},
      {"tx_power_down_w", field(&C::tx_power_down_w)},
      {"bandwidth_up_hz", field(&C::bandwidth_up_hz)},
      {"bandwidth_down_hz", field(&C::bandwidth_down_hz)},
      {"channel_gain_db", field(&C::channel_gain_db)},
      {"interference_up_w", field(&C::interference_up_w)},
      {"interference_down_w", field(&C::interference_down_w)},
      {"noise_psd_dbm_hz", field(&C::noise_psd_dbm_hz)},
      {"cycles_per_param", field(&C::cycles_per_param)},
      {"gain_jitter_db", field(&C::gain_jitter_db)},
  };
  return s;
}

inline ExperimentConfig parse_experiment(std::istream& is, const std::string& what = "config") {
  auto c = detail::parse(is, experiment_schema(), what);
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  auto c = detail::parse_file(path, experiment_schema());
  c.validate();
  return c;
}

inline std::string to_text(const ExperimentConfig& c) { return detail::write(c, experiment_schema()); }

/// `synth` input: a synthetic dataset description.
struct SynthConfig {
  data::SynthSpec spec;
  std::uint64_t seed = 1;
};

inline const detail::Schema<SynthConfig>& synth_schema() {
  using S = SynthConfig;
  // Nested SynthSpec members are exposed under their own names.
  auto nested = [](auto data::SynthSpec::*m) {
    detail::Field<S> f;
    auto inner = detail::field(m);
    f.set = [inner](S& s, const std::string& k, const std::string& v) { inner.set(s.spec, k, v); };
    f.get = [inner](const S& s) { return inner.get(s.spec); };
    return f;
  };
  static const detail::Schema<S> s{
      {"seed", detail::field(&S::seed)},
      {"height", nested(&data::SynthSpec::height)},
      {"width", nested(&data::SynthSpec::width)},
      {"class0", nested(&data::SynthSpec::class0)},
      {"class1", nested(&data::SynthSpec::class1)},
      {"background_min", nested(&data::SynthSpec::background_min)},
      {"background_max", nested(&data::SynthSpec::background_max)},
      {"noise_std", nested(&data::SynthSpec::noise_std)},
      {"blob_amplitude_min", nested(&data::SynthSpec::blob_amplitude_min)},
      {"blob_amplitude_max", nested(&data::SynthSpec::blob_amplitude_max)},
      {"blob_sigma_min", nested(&data::SynthSpec::blob_sigma_min)},
      {"blob_sigma_max", nested(&data::SynthSpec::blob_sigma_max)},
  };
  return s;
}

inline SynthConfig load_synth(const std::filesystem::path& path) {
  auto c = detail::parse_file(path, synth_schema());
  c.spec.validate();
  return c;
}

}  // namespace xsfl::config
