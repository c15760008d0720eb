// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sparsemix/analysis.hpp"
#include "sparsemix/encoder.hpp"
#include "sparsemix/harness.hpp"

namespace {

using nlohmann::json;
using namespace sparsemix;

struct CommonFlags {
  std::string preset;
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "text";
};

void add_common(CLI::App* cmd, CommonFlags& f, const std::string& default_format) {
  f.format = default_format;
  cmd->add_option("--preset", f.preset, "Preset name");
  cmd->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.sets, "Override key=value (dotted keys, repeatable)");
  cmd->add_option("--seed", f.seed, "Seed");
  cmd->add_option("--out", f.out, "Output path");
  cmd->add_option("--format", f.format, "Output format")->check(CLI::IsMember({"text", "json", "csv"}));
}

json run_document(const CommonFlags& f) {
  json doc = f.config.empty() ? json::object() : load_json_file(f.config);
  for (const std::string& s : f.sets) apply_override(doc, s);
  if (!f.preset.empty()) doc["preset"] = f.preset;
  if (f.seed) doc["seed"] = *f.seed;
  return doc;
}

// Preset plus model overrides, without the toy data dimensions.
ModelConfig resolve_model(const json& doc, const std::string& fallback) {
  ModelConfig cfg = build_preset(doc.value("preset", fallback));
  if (doc.contains("model")) cfg = model_config_from_json(doc.at("model"), cfg);
  cfg.validate();
  return cfg;
}

void emit(const CommonFlags& f, const json& j, const std::string& text) {
  if (f.format == "json")
    std::cout << j.dump(2) << '\n';
  else
    std::cout << text;
  if (!f.out.empty()) atomic_write(f.out, j.dump(2) + "\n");
}

std::string millions(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fM", double(n) / 1e6);
  return buf;
}

const std::map<std::string, std::pair<double, double>>& references() {
  // Reference parameter counts (millions) and GFLOPs per example.
  static const std::map<std::string, std::pair<double, double>> refs = {
      {"bert-base", {112.0, 102.0}}, {"sparse-mixer-base", {180.0, 73.0}}, {"fast-sparse-mixer", {180.0, 60.0}}};
  return refs;
}

int cmd_params(const CommonFlags& f) {
  const json doc = run_document(f);
  const ModelConfig cfg = resolve_model(doc, "sparse-mixer-base");
  const std::size_t n = count_params(cfg);
  std::ostringstream text;
  text << cfg.name << ": " << n << " parameters (" << millions(n) << ")\n";
  json j = {{"config", to_json(cfg)}, {"params", n}};
  if (auto it = references().find(cfg.name); it != references().end()) {
    const double ref = it->second.first;
    const double rel = (double(n) / 1e6 - ref) / ref;
    char buf[96];
    std::snprintf(buf, sizeof buf, "reference ~%.0fM, relative difference %+.2f%%\n", ref, 100.0 * rel);
    text << buf;
    j["reference_millions"] = ref;
  }
  emit(f, j, text.str());
  return 0;
}

int cmd_flops(const CommonFlags& f, std::size_t seq_len, bool no_dispatch) {
  const json doc = run_document(f);
  const ModelConfig cfg = resolve_model(doc, "sparse-mixer-base");
  FlopsOptions opts;
  opts.count_dispatch = !no_dispatch;
  const std::size_t n = seq_len ? seq_len : cfg.seq_len;
  const CostReport c = cost_report(cfg, n, opts);
  std::ostringstream text;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s at seq_len %zu: %.3f GFLOPs per example\n", cfg.name.c_str(), n,
                c.flops_per_example / 1e9);
  text << buf;
  double sum = 0.0;
  for (const auto& [k, v] : c.breakdown) {
    std::snprintf(buf, sizeof buf, "  %-12s %10.3f GFLOPs  %6.2f%%\n", k.c_str(), v / 1e9,
                  c.flops_per_example > 0 ? 100.0 * v / c.flops_per_example : 0.0);
    text << buf;
    sum += v;
  }
  std::snprintf(buf, sizeof buf, "  %-12s %10.3f GFLOPs\n", "sum", sum / 1e9);
  text << buf;
  json j = {{"config", to_json(cfg)}, {"seq_len", n}, {"cost", to_json(c)}};
  if (auto it = references().find(cfg.name); it != references().end()) {
    std::snprintf(buf, sizeof buf, "reference ~%.0f GFLOPs per example\n", it->second.second);
    text << buf;
  }
  emit(f, j, text.str());
  return 0;
}

int cmd_gradcheck(const CommonFlags& f, std::size_t samples, double eps, double init_std, std::size_t batch) {
  const json doc = run_document(f);
  ModelConfig cfg = resolve_model(doc, "tiny-sparse-mixer");
  cfg.init_std = init_std;
  const std::uint64_t seed = f.seed.value_or(0);
  const ParamStore params = init_params(cfg, seed);
  const SyntheticCorpus corpus(cfg.vocab_size, hash_combine(seed, 0xc0));
  Rng rng(hash_combine(seed, 0xba));
  const Batch b = corpus.make_batch(batch, cfg.seq_len, 0.15, rng);
  const LossFn loss = [&](const ParamStore& p, ParamStore* g) {
    return pretrain_loss(b, cfg, p, Mode::Eval, nullptr, g).total;
  };
  const GradCheckResult r = finite_diff_grad_check(loss, params, eps, samples, seed);
  const bool ok = r.max_rel_error < 1e-4;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%s: %zu samples, eps %.1e, max relative error %.3e (%s[%zu]: analytic %.6e numeric %.6e) -> %s\n",
                cfg.name.c_str(), r.samples, eps, r.max_rel_error, r.worst_param.c_str(), r.worst_index,
                r.worst_analytic, r.worst_numeric, ok ? "PASS" : "FAIL");
  const json j = {{"config", to_json(cfg)},
                  {"seed", seed},
                  {"samples", r.samples},
                  {"eps", eps},
                  {"max_rel_error", r.max_rel_error},
                  {"worst", {{"param", r.worst_param}, {"index", r.worst_index}, {"analytic", r.worst_analytic},
                             {"numeric", r.worst_numeric}}},
                  {"pass", ok}};
  emit(f, j, buf);
  return ok ? 0 : 1;
}

int cmd_train(const CommonFlags& f, const std::string& checkpoint) {
  const RunConfig run = resolve_run_config(run_document(f));
  std::optional<std::filesystem::path> ckpt;
  if (!checkpoint.empty()) ckpt = checkpoint;
  TrainReport rep;
  try {
    rep = train_toy(run, ckpt);
  } catch (const DivergedError& e) {
    std::cerr << "diverged at step " << e.step() << ": " << e.what() << '\n';
    return 2;
  }
  const json j = report_json(rep);
  std::string out = f.out.empty() ? run.outputs.report_path : f.out;
  if (f.format == "csv") {
    std::ostringstream csv;
    csv << "step,eval,total,mlm,nsp,lb,z,mlm_accuracy,nsp_accuracy,ms\n";
    for (const StepMetrics& m : rep.metrics)
      csv << m.step << ',' << (m.eval ? 1 : 0) << ',' << m.total << ',' << m.mlm << ',' << m.nsp << ',' << m.lb << ','
          << m.z << ',' << m.mlm_accuracy << ',' << m.nsp_accuracy << ',' << m.ms << '\n';
    if (out.empty())
      std::cout << csv.str();
    else
      atomic_write(out, csv.str());
    return 0;
  }
  if (!out.empty()) atomic_write(out, j.dump(2) + "\n");
  if (f.format == "json") {
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  for (const StepMetrics& m : rep.metrics) {
    if (!m.eval && m.step % 25 != 0) continue;
    std::printf("%s %4zu  total %.4f  mlm %.4f  nsp %.4f  lb %.2e  z %.2e  mlm_acc %.4f  nsp_acc %.3f  %.1f ms\n",
                m.eval ? "eval" : "step", m.step, m.total, m.mlm, m.nsp, m.lb, m.z, m.mlm_accuracy, m.nsp_accuracy,
                m.ms);
  }
  std::printf("chance MLM accuracy %.4f\n", 1.0 / double(run.model.vocab_size));
  return 0;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_ablate(const CommonFlags& f, const std::string& axis, const std::string& values,
               const std::vector<std::string>& variants) {
  const json base = run_document(f);
  std::vector<SweepVariant> sweep;
  if (!axis.empty()) sweep = sweep_axis(axis, split_commas(values));
  for (const std::string& v : variants) {
    // name:key=value;key=value
    const auto colon = v.find(':');
    if (colon == std::string::npos) throw ConfigError("variant '" + v + "' must look like name:key=value;...");
    SweepVariant var{v.substr(0, colon), {}};
    std::stringstream in(v.substr(colon + 1));
    std::string item;
    while (std::getline(in, item, ';'))
      if (!item.empty()) var.overrides.push_back(item);
    sweep.push_back(std::move(var));
  }
  if (sweep.empty()) throw ConfigError("ablate needs --axis/--values or at least one --variant");
  std::optional<std::filesystem::path> path;
  if (!f.out.empty()) path = f.out;
  const auto rows = ablate(base, sweep, path);
  if (f.format == "json") {
    json j = json::array();
    for (const AblationRow& r : rows)
      j.push_back({{"name", r.name},
                   {"params", r.params},
                   {"gflops_est", r.gflops_est},
                   {"ms_per_batch", r.ms_per_batch},
                   {"final_mlm_acc", r.final_mlm_acc},
                   {"final_nsp_acc", r.final_nsp_acc},
                   {"status", r.status}});
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << ablation_csv(rows);
  }
  return 0;
}

int cmd_bench(const CommonFlags& f, std::size_t batch, std::size_t reps, bool forward_only) {
  const json doc = run_document(f);
  const ModelConfig cfg = resolve_model(doc, "tiny-sparse-mixer");
  TimingOptions opts;
  opts.forward_only = forward_only;
  opts.seed = f.seed.value_or(0);
  CostReport c = cost_report(cfg, cfg.seq_len);
  c.timing = time_step(cfg, batch, reps, opts);
  const json j = {{"config", to_json(cfg)}, {"seed", opts.seed}, {"hardware", to_json(c.timing->hardware)},
                  {"cost", to_json(c)}};
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: median %.3f ms per %s step (batch %zu, %zu reps) on %s\n", cfg.name.c_str(),
                c.timing->median_ms, forward_only ? "forward" : "train", c.timing->batch_size, reps,
                c.timing->hardware.cpu.c_str());
  emit(f, j, buf);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparsemix: Sparse Mixer encoder toolkit"};
  app.require_subcommand(1);

  CommonFlags train_f, ablate_f, grad_f, flops_f, params_f, bench_f;

  auto* train = app.add_subcommand("train-toy", "Toy MLM+NSP pre-training on the synthetic corpus");
  add_common(train, train_f, "text");
  std::string checkpoint;
  train->add_option("--checkpoint", checkpoint, "Where to save the last good parameters on divergence");

  auto* abl = app.add_subcommand("ablate", "Run a sweep of variants and emit a CSV table");
  add_common(abl, ablate_f, "csv");
  std::string axis, values;
  std::vector<std::string> variants;
  abl->add_option("--axis", axis, "Sweep axis")->check(CLI::IsMember(sweep_axis_names()));
  abl->add_option("--values", values, "Comma-separated axis values");
  abl->add_option("--variant", variants, "Explicit variant name:key=value;key=value (repeatable)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the pre-training loss gradient");
  add_common(grad, grad_f, "text");
  std::size_t samples = 100, grad_batch = 2;
  double eps = 1e-5, init_std = 0.2;
  grad->add_option("--samples", samples, "Sampled scalar parameters");
  grad->add_option("--eps", eps, "Central-difference step");
  grad->add_option("--init-std", init_std, "Initialization scale of the checked point");
  grad->add_option("--batch", grad_batch, "Examples in the checked batch");

  auto* flops = app.add_subcommand("flops", "Analytic forward FLOPs per example");
  add_common(flops, flops_f, "text");
  std::size_t seq_len = 0;
  bool no_dispatch = false;
  flops->add_option("--seq-len", seq_len, "Sequence length (default: preset)");
  flops->add_flag("--no-dispatch", no_dispatch, "Exclude MoE dispatch/combine contractions");

  auto* params = app.add_subcommand("params", "Exact parameter count");
  add_common(params, params_f, "text");

  auto* bench = app.add_subcommand("bench", "Median step latency");
  add_common(bench, bench_f, "text");
  std::size_t bench_batch = 1, reps = 5;
  bool forward_only = false;
  bench->add_option("--batch", bench_batch, "Batch size");
  bench->add_option("--reps", reps, "Timed repetitions (>= 5)");
  bench->add_flag("--forward-only", forward_only, "Time forward passes only");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_f, checkpoint);
    if (*abl) return cmd_ablate(ablate_f, axis, values, variants);
    if (*grad) return cmd_gradcheck(grad_f, samples, eps, init_std, grad_batch);
    if (*flops) return cmd_flops(flops_f, seq_len, no_dispatch);
    if (*params) return cmd_params(params_f);
    if (*bench) return cmd_bench(bench_f, bench_batch, reps, forward_only);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
