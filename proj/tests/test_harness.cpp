// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sparsemix/errors.hpp"
#include "sparsemix/harness.hpp"

namespace sparsemix {
namespace {

using nlohmann::json;

json small_run(const std::string& preset = "tiny-sparse-mixer", std::size_t steps = 10) {
  return {{"preset", preset},
          {"train", {{"steps", steps}, {"batch_size", 4}, {"eval_batches", 2}}},
          {"data", {{"seq_len", 16}, {"vocab_size", 64}}}};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("sparsemix_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Override, ParsesJsonValuesAndStrings) {
  json doc = json::object();
  apply_override(doc, "train.lr=0.01");
  apply_override(doc, "model.layout.mixing=Fourier");
  apply_override(doc, "train.steps=5");
  apply_override(doc, "model.moe.bpr=false");
  EXPECT_EQ(doc["train"]["lr"], 0.01);
  EXPECT_EQ(doc["train"]["steps"], 5);
  EXPECT_EQ(doc["model"]["layout"]["mixing"], "Fourier");
  EXPECT_EQ(doc["model"]["moe"]["bpr"], false);
  EXPECT_THROW(apply_override(doc, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(doc, "a..b=1"), ConfigError);
}

TEST(RunConfig, PresetThenOverrides) {
  json doc = small_run();
  apply_override(doc, "model.moe.cf=0.5");
  apply_override(doc, "seed=9");
  const RunConfig run = resolve_run_config(doc);
  EXPECT_EQ(run.model.moe.cf_eval, 0.5);
  EXPECT_EQ(run.model.moe.cf_train, 0.5);
  EXPECT_EQ(run.train.seed, 9u);
  EXPECT_EQ(run.model.seq_len, 16u);
  EXPECT_EQ(run.model.vocab_size, 64u);
  EXPECT_EQ(run.model.blocks, build_preset("tiny-sparse-mixer").blocks);
}

TEST(RunConfig, RejectsUnknownKeys) {
  EXPECT_THROW(resolve_run_config({{"trian", json::object()}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"train", {{"stepz", 3}}}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"preset", "nope"}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"outputs", {{"format", "xml"}}}}), ConfigError);
}

TEST(RunConfig, EchoedConfigResolvesToItself) {
  json doc = small_run("tiny-switch");
  apply_override(doc, "model.moe.num_experts=3");
  apply_override(doc, "train.optimizer=sgd");
  const RunConfig run = resolve_run_config(doc);
  EXPECT_EQ(resolve_run_config(to_json(run)), run);
}

TEST(RunConfig, LoadsFile) {
  const auto path = temp_path("config.json");
  {
    std::ofstream out(path);
    out << small_run().dump(2);
  }
  EXPECT_EQ(resolve_run_config(load_json_file(path)), resolve_run_config(small_run()));
  std::filesystem::remove(path);
  EXPECT_THROW(load_json_file(path), ConfigError);
}

TEST(Corpus, DeterministicPerSeed) {
  const SyntheticCorpus a(64, 3), b(64, 3), c(64, 4);
  EXPECT_EQ(a.document(7, 50), b.document(7, 50));
  EXPECT_NE(a.document(7, 50), c.document(7, 50));
  Rng r1(5), r2(5);
  EXPECT_EQ(a.make_batch(4, 16, 0.15, r1), b.make_batch(4, 16, 0.15, r2));
}

TEST(Corpus, BatchStructure) {
  const SyntheticCorpus corpus(64, 1);
  Rng rng(2);
  const Batch b = corpus.make_batch(200, 21, 0.15, rng);
  ModelConfig cfg = build_preset("tiny-linear");
  cfg.seq_len = 21;
  b.validate(cfg);
  std::size_t next = 0;
  for (std::size_t e = 0; e < 200; ++e) {
    EXPECT_EQ(b.input_ids[e * 21], kClsId);
    EXPECT_EQ(b.input_ids[e * 21 + 20], kSepId);
    next += b.nsp_labels[e];
  }
  EXPECT_NEAR(double(next) / 200, 0.5, 0.1);
  std::size_t masked_token = 0;
  for (const MlmTarget& t : b.mlm) {
    EXPECT_GE(t.label, kFirstContentId);
    masked_token += b.input_ids[t.example * 21 + t.position] == kMaskId;
  }
  EXPECT_NEAR(double(b.mlm.size()) / 200, 3.0, 0.01);  // round(0.15 · 18)
  EXPECT_NEAR(double(masked_token) / double(b.mlm.size()), 0.8, 0.06);
}

TEST(Corpus, MarkovSuccessorsDominate) {
  const SyntheticCorpus corpus(64, 11);
  const auto doc = corpus.document(1, 2000);
  std::size_t hits = 0;
  for (std::size_t i = 2; i < doc.size(); ++i) {
    const auto next = corpus.successors(doc[i - 2], doc[i - 1]);
    hits += std::find(next.begin(), next.end(), doc[i]) != next.end();
  }
  EXPECT_GT(double(hits) / double(doc.size() - 2), 0.8);
}

TEST(TrainToy, ZeroStepsReportsInitialLoss) {
  const RunConfig run = resolve_run_config(small_run("tiny-sparse-mixer", 0));
  const TrainReport r = train_toy(run);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].step, 0u);
  EXPECT_TRUE(r.metrics[0].eval);
  EXPECT_NEAR(r.metrics[0].mlm, std::log(64.0), 0.15 * std::log(64.0));
  EXPECT_FALSE(r.cost.timing.has_value());
  EXPECT_TRUE(report_json(r).at("cost").at("ms_per_batch").is_null());
}

TEST(TrainToy, IdenticalSeedsGiveIdenticalStreams) {
  const RunConfig run = resolve_run_config(small_run("tiny-switch", 8));
  const TrainReport a = train_toy(run), b = train_toy(run);
  ASSERT_EQ(a.metrics.size(), 9u);
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    StepMetrics x = a.metrics[i], y = b.metrics[i];
    x.ms = y.ms = 0.0;
    EXPECT_EQ(x, y) << "step " << i;
  }
  EXPECT_EQ(a.params, b.params);
  RunConfig other = run;
  other.train.seed = 1;
  EXPECT_NE(train_toy(other).metrics[0].total, a.metrics[0].total);
}

TEST(TrainToy, ReportSchema) {
  const TrainReport r = train_toy(resolve_run_config(small_run("tiny-linear", 3)));
  const json j = report_json(r);
  for (const char* k : {"config", "seed", "hardware", "metrics", "cost"}) EXPECT_TRUE(j.contains(k)) << k;
  for (const char* k : {"params", "gflops_est", "ms_per_batch"}) EXPECT_TRUE(j["cost"].contains(k)) << k;
  EXPECT_EQ(j["metrics"].size(), 4u);
  EXPECT_EQ(j["cost"]["params"], count_params(r.run.model));
  EXPECT_GT(j["cost"]["ms_per_batch"].get<double>(), 0.0);
  for (const char* k : {"step", "total", "mlm", "nsp", "lb", "z", "mlm_accuracy", "nsp_accuracy", "ms"})
    EXPECT_TRUE(j["metrics"][0].contains(k)) << k;
  EXPECT_EQ(resolve_run_config(j["config"]), r.run);
}

TEST(TrainToy, DivergenceReportsStepAndCheckpoint) {
  json doc = small_run("tiny-linear", 50);
  apply_override(doc, "train.lr=1e6");
  apply_override(doc, "train.optimizer=sgd");
  const auto ckpt = temp_path("ckpt.bin");
  std::filesystem::remove(ckpt);
  try {
    train_toy(resolve_run_config(doc), ckpt);
    FAIL() << "expected divergence";
  } catch (const DivergedError& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_TRUE(ParamStore::load(ckpt).all_finite());
  }
  std::filesystem::remove(ckpt);
}

TEST(FixedBatchDescent, TinyPresetDecreases) {
  const std::vector<double> losses = fixed_batch_descent(build_preset("tiny-sparse-mixer"), 20, 1e-2, 0);
  ASSERT_EQ(losses.size(), 21u);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
}

TEST(Sweep, AxesAndErrors) {
  EXPECT_EQ(sweep_axis_names().size(), 12u);
  for (const std::string& axis : sweep_axis_names()) EXPECT_EQ(sweep_axis(axis, {"1", "2"}).size(), 2u);
  const auto v = sweep_axis("d_ff", {"96"});
  EXPECT_EQ(v[0].overrides, (std::vector<std::string>{"model.d_ff=96", "model.moe.expert_d_ff=96"}));
  EXPECT_THROW(sweep_axis("colour", {"red"}), ConfigError);
  EXPECT_THROW(sweep_axis("cf", {}), ConfigError);
}

AblationRow find(const std::vector<AblationRow>& rows, const std::string& name) {
  for (const AblationRow& r : rows)
    if (r.name == name) return r;
  ADD_FAILURE() << "missing row " << name;
  return {};
}

TEST(Ablate, MixingSweepSharesStructuredFlops) {
  const auto rows = ablate(small_run("tiny-linear", 2),
                           sweep_axis("mixing", {"Fourier", "Hartley", "Linear", "Toeplitz", "Circulant"}));
  ASSERT_EQ(rows.size(), 5u);
  for (const AblationRow& r : rows) EXPECT_EQ(r.status, "ok") << r.name;
  const double lin = find(rows, "mixing=Linear").gflops_est;
  EXPECT_EQ(find(rows, "mixing=Toeplitz").gflops_est, lin);
  EXPECT_EQ(find(rows, "mixing=Circulant").gflops_est, lin);
  EXPECT_LT(find(rows, "mixing=Toeplitz").params, find(rows, "mixing=Linear").params);
}

TEST(Ablate, CapacitySweepIncreasesFlops) {
  const auto rows = ablate(small_run("tiny-sparse-mixer", 2), sweep_axis("cf", {"0.5", "0.75", "1.0"}));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_LT(rows[0].gflops_est, rows[1].gflops_est);
  EXPECT_LT(rows[1].gflops_est, rows[2].gflops_est);
}

TEST(Ablate, AttentionCountSweepWithFailuresRecorded) {
  json base = small_run("tiny-linear", 1);
  apply_override(base, "model.num_layers=4");
  const auto path = temp_path("ablate.csv");
  const auto rows = ablate(base, sweep_axis("attention_count", {"0", "1", "2", "4", "9"}), path);
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(rows[i].status, "ok") << rows[i].name;
  EXPECT_TRUE(rows[4].status.starts_with("error:"));
  const std::string csv = slurp(path);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kAblationHeader);
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++count;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6) << line;
  }
  EXPECT_EQ(count, 5u);
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  std::filesystem::remove(path);
}

TEST(AtomicWrite, ReplacesWholeFile) {
  const auto path = temp_path("atomic.txt");
  atomic_write(path, "first version that is long\n");
  atomic_write(path, "second\n");
  EXPECT_EQ(slurp(path), "second\n");
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace sparsemix
