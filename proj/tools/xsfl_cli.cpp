#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "xsfl/xsfl.hpp"

namespace fs = std::filesystem;
using namespace xsfl;

namespace {

int cmd_run(const std::string& config_path, const std::string& out, const std::uint64_t* seed, bool no_act,
            bool esc) {
  auto cfg = config::load_experiment(config_path);
  if (seed) cfg.seed = *seed;
  if (no_act) cfg.act_enabled = false;
  if (esc) cfg.esc_export = true;
  const auto res = harness::run_experiment(cfg, {}, &std::cerr);
  harness::write_outputs(res, out, cfg.esc_export);
  const auto& last = res.rows.back();
  std::printf("rounds %zu (skipped %zu)  final acc %.4f  global loss %.6f  mean compute delay %.6g s\n",
              res.rows.size(), res.empty_rounds.size(), last.scores.acc, last.global_loss, res.mean_compute_delay());
  std::printf("outputs written to %s\n", out.c_str());
  return 0;
}

int cmd_explain(const std::string& model_path, const std::string& input, const std::string& out, double slope,
                esc::Weighting weighting) {
  std::ifstream is(model_path, std::ios::binary);
  if (!is) throw IngestionError(model_path + ": cannot open");
  const auto [arch, params] = load_model(is);
  const SCModel model(arch);
  const Tensor image = pgm::read(fs::path(input));
  const auto ex = esc::explain(model, params, image, slope, weighting);
  const auto files = esc::export_heatmaps(ex, out, fs::path(input).stem().string());
  if (ex.constant) std::fprintf(stderr, "warning: aggregated map is constant; exported as zeros\n");
  std::printf("%zu heatmaps written to %s\n", files.size(), out.c_str());
  return 0;
}

int cmd_delays(const std::string& config_path) {
  const auto cfg = config::load_experiment(config_path);
  const auto data = harness::prepare_data(cfg);
  const SCModel model(harness::architecture(cfg, data));
  const std::size_t p = model.parameter_count();

  std::vector<fl::DeviceState<SCObjective>> devices;
  for (std::size_t n = 0; n < cfg.devices; ++n)
    devices.push_back({SCObjective(model, data.devices[n], {}), cfg.profile(n), {}, {}});
  fl::EngineConfig ec;
  ec.clusters = cfg.clusters;
  ec.seed = harness::Seeds(cfg.seed).engine;
  const fl::Engine<SCObjective> engine(std::move(devices), ParamVector(model.manifest()), ec);

  std::printf("parameters %zu  model bits Z %.0f  epochs %zu  d_max %g s\n", p, edge::model_bits(p), cfg.epochs,
              cfg.d_max);
  std::printf("%6s %7s %7s %6s %12s %12s %12s %12s %12s %12s %5s\n", "device", "volume", "cluster", "zeta",
              "uplink_s", "downlink_s", "compute_s", "total_s", "act_comp_s", "act_total_s", "in");
  std::vector<double> full, act_totals;
  std::vector<edge::DeviceDelay> rows, act_rows;
  for (std::size_t n = 0; n < cfg.devices; ++n) {
    const auto profile = cfg.profile(n);
    const double zeta = engine.proportions()[n];
    const std::size_t trainable = p - act::frozen_count(zeta, p);
    rows.push_back(edge::device_delay(profile, data.devices[n].size(), p, p, cfg.epochs));
    act_rows.push_back(edge::device_delay(profile, data.devices[n].size(), p, trainable, cfg.epochs));
    full.push_back(rows.back().total());
    act_totals.push_back(act_rows.back().total());
  }
  edge::RoundDelay full_round, act_round;
  try {
    full_round = edge::round_delay(full, cfg.d_max);
  } catch (const EmptyRoundError&) {
    full_round.participates.assign(cfg.devices, false);
  }
  try {
    act_round = edge::round_delay(act_totals, cfg.d_max);
  } catch (const EmptyRoundError&) {
    act_round.participates.assign(cfg.devices, false);
  }
  for (std::size_t n = 0; n < cfg.devices; ++n) {
    std::printf("%6zu %7zu %7zu %6.3f %12.6g %12.6g %12.6g %12.6g %12.6g %12.6g %5s\n", n, data.devices[n].size(),
                engine.clustering().assignment[n], engine.proportions()[n], rows[n].up, rows[n].down, rows[n].compute,
                rows[n].total(), act_rows[n].compute, act_rows[n].total(), act_round.participates[n] ? "yes" : "no");
  }
  std::printf("round delay d_t: full training %.6g s (%zu participants), with ACT %.6g s (%zu participants)\n",
              full_round.round, full_round.participants(), act_round.round, act_round.participants());
  std::printf("communication per round: %.0f bits\n", static_cast<double>(act_round.participants()) * 2.0 *
                                                          edge::model_bits(p));
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
  const auto sc = config::load_synth(spec_path);
  const auto set = data::synthesize_fire_like(sc.spec, sc.seed);
  data::write_directory(set, out, 2);
  std::ofstream boxes(fs::path(out) / "boxes.csv", std::ios::binary);
  boxes << "index,label,r0,c0,r1,c1\r\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& b = set.boxes[i];
    boxes << i << ',' << set.samples[i].label << ',' << b.r0 << ',' << b.c0 << ',' << b.r1 << ',' << b.c1 << "\r\n";
  }
  std::printf("%zu images (%zu class 0, %zu class 1) written to %s\n", set.size(), sc.spec.class0, sc.spec.class1,
              out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explainable semantic federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out, model_path, input, spec_path;
  std::uint64_t seed = 0;
  bool no_act = false, esc = false, positive = false;
  double slope = esc::kDefaultSlope;

  auto* run = app.add_subcommand("run", "Run a federated experiment");
  run->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Override the config seed");
  run->add_flag("--no-act", no_act, "Disable adaptive client training (FedAvg baseline)");
  run->add_flag("--esc", esc, "Export heatmaps for class-1 test images");

  auto* explain = app.add_subcommand("explain", "Explain one image with a saved model");
  explain->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
  explain->add_option("--input", input, "PGM image")->required()->check(CLI::ExistingFile);
  explain->add_option("--out", out, "Output directory")->required();
  explain->add_option("--slope", slope, "leakyReLU slope in (0,1)");
  explain->add_flag("--positive-gradients", positive, "Weight kernels by positive gradients only (Grad-CAM++)");

  auto* delays = app.add_subcommand("delays", "Print the per-device delay table of a config");
  delays->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "Write a synthetic fire-like dataset as PGM files");
  synth->add_option("--spec", spec_path, "Synthetic dataset spec")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, out, seed_opt->count() ? &seed : nullptr, no_act, esc);
    if (*explain) return cmd_explain(model_path, input, out, slope,
                                     positive ? esc::Weighting::positive_gradients : esc::Weighting::signed_gradients);
    if (*delays) return cmd_delays(config_path);
    if (*synth) return cmd_synth(spec_path, out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
