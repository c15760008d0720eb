// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace sparsemix {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string format_number(double v, int precision = 9) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  return s;
}

StepMetrics metrics_from(const LossReport& r, std::size_t step, double ms, bool eval) {
  return {step, r.total, r.mlm, r.nsp, r.lb, r.z, r.mlm_accuracy(), r.nsp_accuracy(), ms, eval};
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig resolve_run_config(const json& doc) {
  const json j = doc.is_null() ? json::object() : doc;
  check_keys(j, {"preset", "model", "train", "data", "outputs", "seed"}, "run config");
  RunConfig run;
  read_if(j, "preset", run.preset);
  run.model = build_preset(run.preset);
  if (j.contains("model")) run.model = model_config_from_json(j.at("model"), run.model);

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, {"batch_size", "steps", "lr", "optimizer", "seed", "precision", "eval_batches"}, "train");
    read_if(t, "batch_size", run.train.batch_size);
    read_if(t, "steps", run.train.steps);
    read_if(t, "lr", run.train.lr);
    if (t.contains("optimizer")) run.train.optimizer = parse_optimizer_kind(t.at("optimizer").get<std::string>());
    read_if(t, "seed", run.train.seed);
    read_if(t, "precision", run.train.precision);
    read_if(t, "eval_batches", run.train.eval_batches);
  }
  read_if(j, "seed", run.train.seed);

  const json model_doc = j.value("model", json::object());
  if (model_doc.contains("seq_len")) run.data.seq_len = run.model.seq_len;
  if (model_doc.contains("vocab_size")) run.data.vocab_size = run.model.vocab_size;
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"vocab_size", "seq_len", "mlm_mask_rate", "corpus_seed"}, "data");
    read_if(d, "vocab_size", run.data.vocab_size);
    read_if(d, "seq_len", run.data.seq_len);
    read_if(d, "mlm_mask_rate", run.data.mlm_mask_rate);
    read_if(d, "corpus_seed", run.data.corpus_seed);
  }
  run.model.seq_len = run.data.seq_len;
  run.model.vocab_size = run.data.vocab_size;
  run.model.precision = run.train.precision;
  run.model.resolve_blocks();

  if (j.contains("outputs")) {
    const json& o = j.at("outputs");
    check_keys(o, {"report_path", "format"}, "outputs");
    read_if(o, "report_path", run.outputs.report_path);
    read_if(o, "format", run.outputs.format);
  }
  if (run.outputs.format != "json" && run.outputs.format != "csv")
    throw ConfigError("outputs.format must be json or csv");
  if (run.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(run.data.mlm_mask_rate > 0.0 && run.data.mlm_mask_rate < 1.0))
    throw ConfigError("data.mlm_mask_rate must be in (0, 1)");
  run.model.validate();
  return run;
}

json to_json(const RunConfig& run) {
  return {{"preset", run.preset},
          {"model", to_json(run.model)},
          {"train",
           {{"batch_size", run.train.batch_size},
            {"steps", run.train.steps},
            {"lr", run.train.lr},
            {"optimizer", to_string(run.train.optimizer)},
            {"seed", run.train.seed},
            {"precision", run.train.precision},
            {"eval_batches", run.train.eval_batches}}},
          {"data",
           {{"vocab_size", run.data.vocab_size},
            {"seq_len", run.data.seq_len},
            {"mlm_mask_rate", run.data.mlm_mask_rate},
            {"corpus_seed", run.data.corpus_seed}}},
          {"outputs", {{"report_path", run.outputs.report_path}, {"format", run.outputs.format}}}};
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return j;
}

SyntheticCorpus::SyntheticCorpus(std::size_t vocab_size, std::uint64_t seed, std::size_t branching,
                                 double follow_prob)
    : vocab_size_(vocab_size), seed_(seed), branching_(branching), follow_prob_(follow_prob) {
  if (vocab_size < kFirstContentId + 2) throw ConfigError("synthetic corpus needs vocab_size >= 6");
  if (branching == 0) throw ConfigError("synthetic corpus needs branching >= 1");
}

std::vector<std::size_t> SyntheticCorpus::successors(std::size_t a, std::size_t b) const {
  const std::size_t k = vocab_size_ - kFirstContentId;
  const std::uint64_t ctx = hash_combine(hash_combine(seed_, a), b);
  std::vector<std::size_t> out(branching_);
  for (std::size_t i = 0; i < branching_; ++i) out[i] = kFirstContentId + splitmix64(ctx + i) % k;
  return out;
}

std::vector<std::size_t> SyntheticCorpus::document(std::uint64_t doc, std::size_t length) const {
  const std::size_t k = vocab_size_ - kFirstContentId;
  Rng rng(hash_combine(seed_ ^ 0x5eed, doc));
  std::vector<std::size_t> out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    if (i < 2 || rng.uniform() >= follow_prob_) {
      out.push_back(kFirstContentId + rng.uniform_index(k));
    } else {
      const auto next = successors(out[i - 2], out[i - 1]);
      out.push_back(next[rng.uniform_index(next.size())]);
    }
  }
  return out;
}

Batch SyntheticCorpus::make_batch(std::size_t batch_size, std::size_t seq_len, double mask_rate, Rng& rng) const {
  if (seq_len < 5) throw ConfigError("synthetic batches need seq_len >= 5");
  const std::size_t k = vocab_size_ - kFirstContentId;
  const std::size_t len_a = (seq_len - 3) / 2, len_b = seq_len - 3 - len_a;
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = seq_len;
  for (std::size_t e = 0; e < batch_size; ++e) {
    const std::uint64_t doc = rng.next_u64();
    const std::vector<std::size_t> text = document(doc, len_a + len_b);
    const bool is_next = rng.bernoulli(0.5);
    std::vector<std::size_t> second;
    if (is_next) {
      second.assign(text.begin() + static_cast<std::ptrdiff_t>(len_a), text.end());
    } else {
      std::uint64_t other = rng.next_u64();
      if (other == doc) ++other;
      second = document(other, len_b);
    }
    std::vector<std::size_t> ids{kClsId};
    std::vector<std::size_t> types{0};
    ids.insert(ids.end(), text.begin(), text.begin() + static_cast<std::ptrdiff_t>(len_a));
    types.insert(types.end(), len_a, 0);
    ids.push_back(kSepId);
    types.push_back(0);
    ids.insert(ids.end(), second.begin(), second.end());
    types.insert(types.end(), len_b, 1);
    ids.push_back(kSepId);
    types.push_back(1);

    std::vector<std::size_t> content;
    for (std::size_t p = 0; p < seq_len; ++p)
      if (ids[p] >= kFirstContentId) content.push_back(p);
    const std::size_t masked = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(mask_rate * static_cast<double>(content.size()))), 1, content.size());
    for (std::size_t i = 0; i < masked; ++i) std::swap(content[i], content[i + rng.uniform_index(content.size() - i)]);
    std::vector<std::size_t> chosen(content.begin(), content.begin() + static_cast<std::ptrdiff_t>(masked));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t p : chosen) {
      b.mlm.push_back({e, p, ids[p]});
      const double u = rng.uniform();
      if (u < 0.8)
        ids[p] = kMaskId;
      else if (u < 0.9)
        ids[p] = kFirstContentId + rng.uniform_index(k);
    }
    b.input_ids.insert(b.input_ids.end(), ids.begin(), ids.end());
    b.type_ids.insert(b.type_ids.end(), types.begin(), types.end());
    b.mask.insert(b.mask.end(), seq_len, 1.0);
    b.nsp_labels.push_back(is_next ? 1 : 0);
  }
  return b;
}

json to_json(const StepMetrics& m) {
  return {{"step", m.step},          {"eval", m.eval},
          {"total", m.total},        {"mlm", m.mlm},
          {"nsp", m.nsp},            {"lb", m.lb},
          {"z", m.z},                {"mlm_accuracy", m.mlm_accuracy},
          {"nsp_accuracy", m.nsp_accuracy}, {"ms", m.ms}};
}

TrainReport train_toy(const RunConfig& run, const std::optional<std::filesystem::path>& checkpoint) {
  const ModelConfig& cfg = run.model;
  cfg.validate();
  if (run.train.precision != "double") throw ConfigError("only double precision is supported");
  const SyntheticCorpus corpus(run.data.vocab_size, run.data.corpus_seed);

  TrainReport report;
  report.run = run;
  report.hardware = detect_hardware();
  report.params = init_params(cfg, run.train.seed);
  ParamStore& params = report.params;
  ParamStore grads = params.zeros_like();
  Optimizer opt(run.train.optimizer, run.train.lr);
  Rng data_rng(hash_combine(run.data.corpus_seed, run.train.seed));
  Rng dropout_rng(hash_combine(run.train.seed, 0xd209));

  std::vector<double> step_ms;
  for (std::size_t step = 0; step < run.train.steps; ++step) {
    const Batch batch = corpus.make_batch(run.train.batch_size, cfg.seq_len, run.data.mlm_mask_rate, data_rng);
    const auto t0 = std::chrono::steady_clock::now();
    grads.set_zero();
    const LossReport loss = pretrain_loss(batch, cfg, params, Mode::Train, &dropout_rng, &grads);
    if (!std::isfinite(loss.total) || !grads.all_finite()) {
      if (checkpoint) params.save(*checkpoint);
      throw DivergedError("non-finite loss or gradient at step " + std::to_string(step), step);
    }
    opt.step(params, grads);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    step_ms.push_back(ms);
    report.metrics.push_back(metrics_from(loss, step, ms, false));
  }

  Rng eval_rng(hash_combine(run.data.corpus_seed, 0xe7a1));
  LossReport sum;
  const std::size_t eval_batches = std::max<std::size_t>(1, run.train.eval_batches);
  for (std::size_t i = 0; i < eval_batches; ++i) {
    const Batch batch = corpus.make_batch(run.train.batch_size, cfg.seq_len, run.data.mlm_mask_rate, eval_rng);
    const LossReport r = pretrain_loss(batch, cfg, params, Mode::Eval);
    sum.total += r.total;
    sum.mlm += r.mlm;
    sum.nsp += r.nsp;
    sum.lb += r.lb;
    sum.z += r.z;
    sum.mlm_correct += r.mlm_correct;
    sum.mlm_count += r.mlm_count;
    sum.nsp_correct += r.nsp_correct;
    sum.nsp_count += r.nsp_count;
  }
  const double inv = 1.0 / double(eval_batches);
  sum.total *= inv;
  sum.mlm *= inv;
  sum.nsp *= inv;
  sum.lb *= inv;
  sum.z *= inv;
  if (!std::isfinite(sum.total)) throw DivergedError("non-finite eval loss", run.train.steps);
  report.final_eval = metrics_from(sum, run.train.steps, 0.0, true);
  report.metrics.push_back(report.final_eval);

  report.cost = cost_report(cfg, cfg.seq_len);
  if (!step_ms.empty()) {
    TimingResult t;
    t.samples_ms = step_ms;
    std::sort(step_ms.begin(), step_ms.end());
    const std::size_t mid = step_ms.size() / 2;
    t.median_ms = step_ms.size() % 2 ? step_ms[mid] : 0.5 * (step_ms[mid - 1] + step_ms[mid]);
    t.batch_size = run.train.batch_size;
    t.reps = step_ms.size();
    t.hardware = report.hardware;
    report.cost.timing = std::move(t);
  }
  return report;
}

json report_json(const TrainReport& report) {
  json metrics = json::array();
  for (const StepMetrics& m : report.metrics) metrics.push_back(to_json(m));
  json cost = to_json(report.cost);
  cost.erase("timing");
  return {{"config", to_json(report.run)},
          {"seed", report.run.train.seed},
          {"hardware", to_json(report.hardware)},
          {"metrics", metrics},
          {"cost", cost}};
}

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<double> fixed_batch_descent(const ModelConfig& cfg, std::size_t steps, double lr, std::uint64_t seed,
                                        std::size_t batch_size) {
  ParamStore params = init_params(cfg, seed);
  const SyntheticCorpus corpus(cfg.vocab_size, hash_combine(seed, 0xba7c));
  Rng rng(seed);
  const Batch batch = corpus.make_batch(batch_size, cfg.seq_len, 0.15, rng);
  std::vector<double> losses;
  ParamStore grads = params.zeros_like();
  for (std::size_t s = 0; s <= steps; ++s) {
    grads.set_zero();
    losses.push_back(pretrain_loss(batch, cfg, params, Mode::Eval, nullptr, &grads).total);
    if (s < steps) params.axpy(-lr, grads);
  }
  return losses;
}

std::vector<std::string> sweep_axis_names() {
  return {"mixing",      "attention_count", "attention_layout", "moe_count", "moe_layout", "num_experts",
          "cf",          "group_size",      "d_m",              "d_ff",      "num_layers", "router"};
}

std::vector<SweepVariant> sweep_axis(const std::string& axis, const std::vector<std::string>& values) {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"mixing", {"model.layout.mixing"}},
      {"attention_count", {"model.layout.attention_count"}},
      {"attention_layout", {"model.layout.attention_layout"}},
      {"moe_count", {"model.layout.moe_count"}},
      {"moe_layout", {"model.layout.moe_layout"}},
      {"num_experts", {"model.moe.num_experts"}},
      {"cf", {"model.moe.cf"}},
      {"group_size", {"model.moe.group_size"}},
      {"d_m", {"model.d_m"}},
      {"d_ff", {"model.d_ff", "model.moe.expert_d_ff"}},
      {"num_layers", {"model.num_layers"}},
      {"router", {"model.moe.router_kind"}},
  };
  const auto it = keys.find(axis);
  if (it == keys.end()) throw ConfigError("unknown sweep axis '" + axis + "'");
  if (values.empty()) throw ConfigError("sweep axis '" + axis + "' needs at least one value");
  std::vector<SweepVariant> out;
  for (const std::string& v : values) {
    SweepVariant var{axis + "=" + v, {}};
    for (const std::string& key : it->second) var.overrides.push_back(key + "=" + v);
    out.push_back(std::move(var));
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << kAblationHeader << '\n';
  for (const AblationRow& r : rows)
    out << csv_safe(r.name) << ',' << r.params << ',' << format_number(r.gflops_est) << ','
        << format_number(r.ms_per_batch, 6) << ',' << format_number(r.final_mlm_acc, 6) << ','
        << format_number(r.final_nsp_acc, 6) << ',' << csv_safe(r.status) << '\n';
  return out.str();
}

std::vector<AblationRow> ablate(const json& base, const std::vector<SweepVariant>& variants,
                                const std::optional<std::filesystem::path>& csv_path) {
  if (variants.empty()) throw ConfigError("ablate needs at least one variant");
  std::vector<AblationRow> rows;
  for (const SweepVariant& v : variants) {
    AblationRow row;
    row.name = v.name;
    row.ms_per_batch = row.final_mlm_acc = row.final_nsp_acc = std::nan("");
    try {
      json doc = base;
      for (const std::string& o : v.overrides) apply_override(doc, o);
      const RunConfig run = resolve_run_config(doc);
      const CostReport cost = cost_report(run.model, run.model.seq_len);
      row.params = cost.param_count;
      row.gflops_est = cost.flops_per_example / 1e9;
      const TrainReport report = train_toy(run);
      row.ms_per_batch = report.cost.timing ? report.cost.timing->median_ms : 0.0;
      row.final_mlm_acc = report.final_eval.mlm_accuracy;
      row.final_nsp_acc = report.final_eval.nsp_accuracy;
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
    }
    rows.push_back(std::move(row));
    if (csv_path) atomic_write(*csv_path, ablation_csv(rows));
  }
  return rows;
}

}  // namespace sparsemix
