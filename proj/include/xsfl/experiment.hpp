#pragma once

// End-to-end runs: data preparation, the round loop, per-round metrics and
// the files written to an output directory.

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "xsfl/config.hpp"
#include "xsfl/dataset.hpp"
#include "xsfl/edge_network.hpp"
#include "xsfl/esc_explainer.hpp"
#include "xsfl/fl_engine.hpp"
#include "xsfl/metrics.hpp"
#include "xsfl/objective.hpp"
#include "xsfl/sc_model.hpp"

namespace xsfl::harness {

inline constexpr double kDelayWeight = 1e-3;
inline constexpr const char* kCsvHeader = "round,global_loss,acc,pre,spe,f1,rec,round_delay_s,objective,participants";

struct MetricsRow {
  std::size_t round = 0;
  double global_loss = 0.0;
  Scores scores;
  double round_delay_s = 0.0;
  double objective = 0.0;
  std::size_t participants = 0;
};

struct ExperimentData {
  std::vector<Dataset> devices;
  data::LabeledSet test;
  std::size_t classes = 2;
  Shape image;
};

/// Seeds of the independent random streams of a run.
struct Seeds {
  std::uint64_t data, split, volumes, init, engine, eval;

  explicit Seeds(std::uint64_t s)
      : data(derive_seed(s, {1})),
        split(derive_seed(s, {2})),
        volumes(derive_seed(s, {3})),
        init(derive_seed(s, {4})),
        engine(derive_seed(s, {5})),
        eval(derive_seed(s, {6})) {}
};

/// Synthesizes or loads the data, splits 80/20 and partitions the training part.
inline ExperimentData prepare_data(const config::ExperimentConfig& cfg) {
  const Seeds seeds(cfg.seed);
  ExperimentData out;
  data::LabeledSet all;
  std::vector<std::size_t> volumes = cfg.volumes;
  if (cfg.dataset == "synthetic") {
    if (volumes.empty()) volumes = data::log_uniform_volumes(cfg.devices, cfg.volume_min, cfg.volume_max, seeds.volumes);
    std::size_t train = 0;
    for (auto v : volumes) train += v;
    const std::size_t n = data::total_for_train(train);
    data::SynthSpec spec;
    spec.height = spec.width = cfg.image_size;
    spec.class0 = n / 2;
    spec.class1 = n - n / 2;
    all = data::synthesize_fire_like(spec, seeds.data);
    out.classes = 2;
  } else {
    all = data::load_directory(cfg.dataset, &out.classes);
    if (out.classes < 2) throw IngestionError(cfg.dataset + ": at least two class subdirectories are required");
  }
  auto parts = data::split(all, seeds.split);
  if (volumes.empty()) volumes = data::equal_volumes(cfg.devices, parts.train.size());
  out.devices = data::partition(parts.train.samples, volumes);
  out.test = std::move(parts.test);
  if (out.test.size() == 0) throw IngestionError("dataset too small for a test split");
  out.image = out.devices.front().front().image.shape();
  return out;
}

inline SCArchitecture architecture(const config::ExperimentConfig& cfg, const ExperimentData& d) {
  SCArchitecture a;
  a.image = d.image;
  a.conv.clear();
  for (auto k : cfg.conv_kernels) a.conv.push_back({k, cfg.kernel_size, cfg.kernel_size, 1});
  a.semantic_length = cfg.semantic_length;
  a.decoder_hidden = cfg.decoder_hidden;
  a.classes = d.classes;
  a.hidden_slope = cfg.hidden_slope;
  a.validate();
  return a;
}

/// Test-set predictions of `params` (channel noise drawn from `stream`).
inline std::vector<std::size_t> predict_all(const SCModel& model, const ParamVector& params, const Dataset& test,
                                            const ChannelSpec& chan, std::uint64_t stream) {
  constexpr std::size_t kEvalBatch = 64;
  std::vector<std::size_t> out, idx;
  for (std::size_t start = 0; start < test.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(test.size(), start + kEvalBatch); ++i) idx.push_back(i);
    auto p = model.predict(params, make_batch(test, idx, stream), chan);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline Scores evaluate(const SCModel& model, const ParamVector& params, const Dataset& test, const ChannelSpec& chan,
                       std::uint64_t stream, std::size_t classes) {
  std::vector<std::size_t> labels;
  for (const auto& s : test) labels.push_back(s.label);
  return compute_metrics(predict_all(model, params, test, chan, stream), labels, classes);
}

using Observer = fl::Engine<SCObjective>::Observer;

struct ExperimentResult {
  config::ExperimentConfig config;
  SCArchitecture arch;
  ExperimentData data;
  ParamVector model;
  std::vector<MetricsRow> rows;
  std::vector<fl::RoundReport> reports;
  std::vector<std::size_t> empty_rounds;
  act::Clustering clustering;
  std::vector<double> proportions;

  /// Per-round mean of the compute delays d^L of the participants, averaged over rounds.
  double mean_compute_delay() const {
    double s = 0.0;
    for (const auto& r : reports) {
      double m = 0.0;
      std::size_t k = 0;
      for (std::size_t n = 0; n < r.devices.size(); ++n)
        if (r.delays.round.participates[n]) {
          m += r.delays.devices[n].compute;
          ++k;
        }
      s += k ? m / static_cast<double>(k) : 0.0;
    }
    return reports.empty() ? 0.0 : s / static_cast<double>(reports.size());
  }
};

/// Runs all rounds. Empty rounds are reported to `log` and skipped; if every
/// round is empty the last EmptyRoundError propagates.
inline ExperimentResult run_experiment(const config::ExperimentConfig& cfg, const Observer& observer = {},
                                       std::ostream* log = nullptr) {
  cfg.validate();
  const Seeds seeds(cfg.seed);
  ExperimentResult res;
  res.config = cfg;
  res.data = prepare_data(cfg);
  res.arch = architecture(cfg, res.data);
  const SCModel model(res.arch);
  const ChannelSpec chan{cfg.channel_gain, cfg.noise_std};
  chan.validate();

  std::vector<fl::DeviceState<SCObjective>> devices;
  for (std::size_t n = 0; n < cfg.devices; ++n) {
    devices.push_back({SCObjective(model, res.data.devices[n], chan), cfg.profile(n), {}, {}});
  }
  fl::EngineConfig ec;
  ec.train = {cfg.epochs, cfg.lr, cfg.batch};
  ec.act_enabled = cfg.act_enabled;
  ec.clusters = cfg.clusters;
  ec.d_max = cfg.d_max;
  ec.gain_jitter_db = cfg.gain_jitter_db;
  ec.seed = seeds.engine;
  ec.workers = cfg.workers;
  fl::Engine<SCObjective> engine(std::move(devices), model.init_params(seeds.init), ec);
  if (observer) engine.set_observer(observer);
  res.clustering = engine.clustering();
  res.proportions = engine.proportions();

  double cumulative = 0.0;
  std::optional<EmptyRoundError> last_empty;
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    fl::RoundReport rep;
    try {
      rep = engine.run_round();
    } catch (const EmptyRoundError& e) {
      res.empty_rounds.push_back(e.round());
      last_empty = e;
      if (log) *log << "round " << e.round() << ": skipped, no device participated\n";
      continue;
    }
    cumulative += rep.delays.round.round;
    MetricsRow row;
    row.round = t;
    row.global_loss = rep.global_loss;
    row.scores = evaluate(model, engine.global(), res.data.test.samples, chan, derive_seed(seeds.eval, {t}),
                          res.data.classes);
    row.round_delay_s = rep.delays.round.round;
    row.objective = rep.global_loss + kDelayWeight * cumulative;
    row.participants = rep.aggregated();
    res.rows.push_back(row);
    res.reports.push_back(std::move(rep));
  }
  if (res.rows.empty() && last_empty) throw *last_empty;
  res.model = engine.global();
  return res;
}

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  using detail::num;
  os << kCsvHeader << "\r\n";
  for (const auto& r : rows) {
    os << r.round << ',' << num(r.global_loss) << ',' << num(r.scores.acc) << ',' << num(r.scores.pre) << ','
       << num(r.scores.spe) << ',' << num(r.scores.f1) << ',' << num(r.scores.rec) << ',' << num(r.round_delay_s)
       << ',' << num(r.objective) << ',' << r.participants << "\r\n";
  }
}

/// Per-device delay breakdown, one row per (round, device).
inline void write_delays_csv(std::ostream& os, const std::vector<fl::RoundReport>& reports) {
  using detail::num;
  os << "round,device,uplink_s,downlink_s,compute_s,total_s,participates,zeta,frozen\r\n";
  for (const auto& r : reports)
    for (std::size_t n = 0; n < r.devices.size(); ++n) {
      const auto& d = r.delays.devices[n];
      os << r.round << ',' << n << ',' << num(d.up) << ',' << num(d.down) << ',' << num(d.compute) << ','
         << num(d.total()) << ',' << (r.delays.round.participates[n] ? 1 : 0) << ',' << num(r.devices[n].zeta) << ','
         << r.devices[n].frozen << "\r\n";
    }
}

inline void write_report(std::ostream& os, const ExperimentResult& res) {
  os << "# run summary\n";
  os << "metrics.csv: one row per completed round; class 1 is the positive class.\n";
  os << "PRE is reported as 0 when no positives are predicted; REC, SPE and F1 likewise fall back to 0\n";
  os << "when their denominators vanish.\n";
  os << "objective = global_loss + " << detail::num(kDelayWeight) << " * cumulative round delay (s).\n";
  os << "devices " << res.config.devices << ", rounds " << res.config.rounds << ", act "
     << (res.config.act_enabled ? "on" : "off") << ", seed " << res.config.seed << '\n';
  os << "parameters " << res.model.size() << ", model bits " << detail::num(edge::model_bits(res.model)) << '\n';
  os << "device,volume,cluster,zeta\n";
  for (std::size_t n = 0; n < res.data.devices.size(); ++n) {
    os << n << ',' << res.data.devices[n].size() << ',' << res.clustering.assignment[n] << ','
       << detail::num(res.proportions[n]) << '\n';
  }
  os << "test samples " << res.data.test.size() << '\n';
  os << "skipped rounds";
  if (res.empty_rounds.empty()) os << " none";
  for (auto t : res.empty_rounds) os << ' ' << t;
  os << '\n';
}

/// Heatmaps for the first `count` class-1 test images; returns the files written.
inline std::vector<std::filesystem::path> export_explanations(const ExperimentResult& res, const std::filesystem::path& dir) {
  const SCModel model(res.arch);
  std::vector<std::filesystem::path> written;
  std::size_t done = 0;
  for (std::size_t i = 0; i < res.data.test.size() && done < res.config.esc_images; ++i) {
    if (res.data.test.samples[i].label != 1) continue;
    const auto ex = esc::explain(model, res.model, res.data.test.samples[i].image, res.config.esc_slope,
                                 res.config.esc_positive_gradients ? esc::Weighting::positive_gradients
                                                                   : esc::Weighting::signed_gradients);
    std::string stem = "test" + std::to_string(i);
    auto files = esc::export_heatmaps(ex, dir, stem);
    written.insert(written.end(), files.begin(), files.end());
    ++done;
  }
  return written;
}

/// metrics.csv, delays.csv, model.bin, report.txt and optionally esc/*.pgm.
inline void write_outputs(const ExperimentResult& res, const std::filesystem::path& out, bool esc_export) {
  namespace fs = std::filesystem;
  fs::create_directories(out);
  auto open = [](const fs::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IngestionError(p.string() + ": cannot create");
    return os;
  };
  {
    auto os = open(out / "metrics.csv");
    write_metrics_csv(os, res.rows);
  }
  {
    auto os = open(out / "delays.csv");
    write_delays_csv(os, res.reports);
  }
  {
    auto os = open(out / "model.bin");
    save_model(os, res.arch, res.model);
  }
  {
    auto os = open(out / "report.txt");
    write_report(os, res);
  }
  if (esc_export) export_explanations(res, out / "esc");
}

}  // namespace xsfl::harness
