#pragma once

// End-to-end experiment steps shared by the command-line tool and the
// acceptance harness: corpus generation, training, adaptation runs,
// ablations and report merging.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "asrtra/config.hpp"
#include "asrtra/corpus.hpp"
#include "asrtra/eval.hpp"
#include "asrtra/model.hpp"
#include "asrtra/pretrain.hpp"
#include "asrtra/reward.hpp"
#include "asrtra/tensor_io.hpp"
#include "asrtra/tta.hpp"

namespace asrtra::pipeline {

namespace fs = std::filesystem;
using config::ExperimentConfig;

/// Raised when a training gate is not met.
class TrainingFailure : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Corpus

inline nlohmann::ordered_json manifest(const ExperimentConfig& cfg, const corpus::Corpus& c) {
  nlohmann::ordered_json j;
  j["config_hash"] = config::config_hash(cfg);
  j["seed"] = cfg.seed;
  j["n_train"] = c.train.size();
  j["n_test"] = c.test.size();
  j["noise_kind"] = signal::to_string(cfg.corpus.noise.kind);
  j["snr_db"] = config::detail::fmt_double(cfg.corpus.noise.snr_db);
  j["files"] = {"train.jsonl", "test.jsonl", "config.toml"};
  return j;
}

inline corpus::Corpus gen_corpus(const ExperimentConfig& cfg, const fs::path& out) {
  auto c = corpus::build_corpus(cfg.corpus);
  fs::create_directories(out);
  corpus::write_corpus(out, c);
  eval::write_text((out / "config.toml").string(), config::canonical(cfg));
  eval::write_text((out / "manifest.json").string(), manifest(cfg, c).dump(2) + "\n");
  return c;
}

// ---------------------------------------------------------------------------
// Training

struct TranscriberRun {
  model::ModelParams params;
  model::PretrainResult result;
};

inline TranscriberRun train_transcriber(const ExperimentConfig& cfg, const corpus::Corpus& c,
                                        const std::function<void(const model::EpochStats&)>& on_epoch = {}) {
  auto params = model::init_params(cfg.model, derive_seed(cfg.seed, "model-init"));
  const auto train = model::clean_examples(c.train, cfg.frontend);
  const auto heldout = model::clean_examples(c.test, cfg.frontend);
  auto result = model::pretrain(params, train, heldout, cfg.pretrain, on_epoch);
  return {std::move(params), std::move(result)};
}

inline std::string curve_csv(const model::PretrainResult& r) {
  std::string out = "epoch,train_loss,heldout_exact_match\n";
  for (const auto& e : r.curve)
    out += fmt::format("{},{},{}\n", e.epoch, eval::format_number(e.train_loss),
                       eval::format_number(e.heldout_exact_match));
  return out;
}

inline std::string curve_csv(const reward::ContrastiveResult& r) {
  std::string out = "epoch,train_loss,heldout_retrieval_at_1\n";
  for (const auto& e : r.curve)
    out += fmt::format("{},{},{}\n", e.epoch, eval::format_number(e.loss), eval::format_number(e.heldout_retrieval));
  return out;
}

struct RewardRun {
  reward::RewardModelParams params;
  reward::ContrastiveResult result;
  reward::TrigramLm lm;
};

inline reward::TrigramLm train_lm(const corpus::Corpus& c) {
  std::vector<std::string> texts;
  for (const auto& u : c.train) texts.push_back(u.text);
  return reward::TrigramLm::train(texts);
}

inline RewardRun train_reward(const ExperimentConfig& cfg, const corpus::Corpus& c,
                              const std::function<void(const reward::ContrastiveEpoch&)>& on_epoch = {}) {
  auto params = reward::init_reward_params(cfg.reward_model, derive_seed(cfg.seed, "reward-init"));
  const auto train = reward::paired_examples(c.train, cfg.reward_train, cfg.frontend);
  const auto heldout = reward::paired_examples(c.test, cfg.reward_train, cfg.frontend);
  auto result = reward::train_contrastive(params, train, heldout, cfg.reward_train, on_epoch);
  return {std::move(params), std::move(result), train_lm(c)};
}

/// Checkpoint directory layout.
struct CheckpointPaths {
  fs::path dir;
  fs::path model() const { return dir / "model.ckpt"; }
  fs::path reward() const { return dir / "reward.ckpt"; }
  fs::path lm() const { return dir / "lm.txt"; }
};

inline void save_transcriber(const fs::path& dir, const TranscriberRun& run) {
  fs::create_directories(dir);
  io::save_model(CheckpointPaths{dir}.model().string(), run.params);
  eval::write_text((dir / "pretrain_curve.csv").string(), curve_csv(run.result));
}

inline void save_reward(const fs::path& dir, const RewardRun& run) {
  fs::create_directories(dir);
  io::save_reward(CheckpointPaths{dir}.reward().string(), run.params);
  eval::write_text(CheckpointPaths{dir}.lm().string(), run.lm.serialize());
  eval::write_text((dir / "reward_curve.csv").string(), curve_csv(run.result));
}

/// Frozen models used by adaptation runs.
struct Models {
  model::ModelParams transcriber;
  std::optional<reward::RewardModelParams> reward;
  std::optional<reward::TrigramLm> lm;
};

/// Loads checkpoints and checks them against the configuration.
inline Models load_models(const ExperimentConfig& cfg, const fs::path& dir) {
  const CheckpointPaths p{dir};
  Models m{io::load_model(p.model().string()), std::nullopt, std::nullopt};
  auto expect = [](bool ok, const char* field, const std::string& what) {
    if (!ok) throw ConfigError(field, "checkpoint mismatch: " + what);
  };
  const auto& mc = m.transcriber.cfg;
  expect(mc.n_mels == cfg.frontend.n_mels, "frontend.n_mels", "transcriber expects " + std::to_string(mc.n_mels));
  expect(mc.d_model == cfg.model.d_model, "model.d_model", "checkpoint has " + std::to_string(mc.d_model));
  expect(mc.n_heads == cfg.model.n_heads, "model.n_heads", "checkpoint has " + std::to_string(mc.n_heads));
  expect(mc.d_ff == cfg.model.d_ff, "model.d_ff", "checkpoint has " + std::to_string(mc.d_ff));
  expect(mc.enc_layers == cfg.model.enc_layers, "model.enc_layers", "checkpoint has " + std::to_string(mc.enc_layers));
  expect(mc.dec_layers == cfg.model.dec_layers, "model.dec_layers", "checkpoint has " + std::to_string(mc.dec_layers));
  expect(mc.input_range == cfg.model.input_range, "model.input_range", "checkpoint differs");
  if (fs::exists(p.reward())) {
    m.reward = io::load_reward(p.reward().string());
    expect(m.reward->cfg.n_mels == cfg.frontend.n_mels, "frontend.n_mels", "reward model differs");
  }
  if (fs::exists(p.lm())) m.lm = reward::TrigramLm::deserialize(io::read_file(p.lm().string()));
  return m;
}

// ---------------------------------------------------------------------------
// Adaptation runs

enum class Method { none, entropy_min, asr_tra };

inline Method parse_method(std::string_view s) {
  if (s == "none") return Method::none;
  if (s == "entropy_min") return Method::entropy_min;
  if (s == "asr_tra") return Method::asr_tra;
  throw ConfigError("--method", "unknown method '" + std::string(s) + "' (none, entropy_min, asr_tra)");
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::entropy_min: return "entropy_min";
    case Method::asr_tra: return "asr_tra";
  }
  return "none";
}

/// One method under one noise condition and run seed.
struct RunSpec {
  Method method = Method::asr_tra;
  std::string label;  // report method name; defaults to the method name
  signal::NoiseSpec noise{signal::NoiseKind::gaussian, 10.0, 0};
  std::uint64_t seed = 1;
  tta::AdaptationConfig adapt;
  std::size_t jobs = 1;
};

struct RunResult {
  std::vector<tta::Episode> episodes;
  std::vector<eval::UtteranceRecord> records;
  std::optional<double> reward_wer_spearman;  // greedy baseline hypotheses
};

/// Noisy spectrograms of a test split under `noise`, seeded from `seed`.
inline std::vector<model::Example> noisy_test_set(const std::vector<corpus::Utterance>& test,
                                                  signal::NoiseSpec noise, std::uint64_t seed,
                                                  const signal::FrontendConfig& fe) {
  noise.seed = derive_seed(seed, "noise");
  if (noise.is_clean()) return model::clean_examples(test, fe);
  return model::noisy_examples(corpus::with_noise(test, noise), fe);
}

/// Runs every utterance as an isolated episode. Each worker owns a deep copy
/// of the transcriber and prompt; outputs are stored by utterance index.
inline RunResult run_condition(const ExperimentConfig& cfg, const std::vector<model::Example>& examples,
                               const Models& models, const RunSpec& spec) {
  const std::size_t n = examples.size();
  RunResult res;
  res.episodes.resize(n);
  const auto prompt_seed = derive_seed(spec.seed, "prompt");
  const auto* rp = models.reward ? &*models.reward : nullptr;
  const auto* lm = models.lm ? &*models.lm : nullptr;

  auto work = [&](std::size_t begin, std::size_t end) {
    auto params = models.transcriber.clone();
    auto prompt = model::make_prompt(cfg.prompt_len, params.cfg.d_model, prompt_seed, cfg.prompt_std);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& ex = examples[i];
      auto ac = spec.adapt;
      ac.seed = derive_seed(spec.seed, ex.id, "adapt");
      switch (spec.method) {
        case Method::none:
          res.episodes[i] = tta::baseline_episode(ex.mel, params, ac.max_len, ex.id);
          break;
        case Method::entropy_min:
          res.episodes[i] = tta::entropy_min_adapt(ex.mel, params, ac, ex.id);
          break;
        case Method::asr_tra:
          res.episodes[i] = tta::adapt_one(ex.mel, params, prompt, rp, lm, ac, ex.id);
          break;
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(spec.jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t j = 0; j < jobs; ++j) {
      const std::size_t b = n * j / jobs, e = n * (j + 1) / jobs;
      threads.emplace_back([&, j, b, e] {
        try {
          work(b, e);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  const std::string label = spec.label.empty() ? to_string(spec.method) : spec.label;
  std::vector<double> rewards, wers;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ep = res.episodes[i];
    const auto& ex = examples[i];
    eval::UtteranceRecord r;
    r.id = ex.id;
    r.method = label;
    r.noise_kind = std::string(signal::to_string(spec.noise.is_clean() ? signal::NoiseKind::none : spec.noise.kind));
    r.snr_db = spec.noise.snr_db;
    r.seed = spec.seed;
    r.reference = ex.text;
    r.hypothesis = ep.adapted.text();
    r.wer = eval::wer(ex.text, r.hypothesis, eval::Unit::chars);
    r.confidence = ep.confidence;
    if (rp) {
      r.reward = reward::clap_reward(ex.mel, ep.baseline.text(), *rp, cfg.reward.empty_penalty);
      rewards.push_back(r.reward);
      wers.push_back(eval::wer(ex.text, ep.baseline.text(), eval::Unit::chars).wer);
    }
    r.timings = ep.timings;
    res.records.push_back(std::move(r));
  }
  if (rewards.size() >= 3) {
    try {
      res.reward_wer_spearman = eval::spearman(rewards, wers);
    } catch (const InputError&) {
      res.reward_wer_spearman.reset();
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Episode logs

inline nlohmann::ordered_json to_json(const model::Hypothesis& h) {
  nlohmann::ordered_json j;
  j["text"] = h.text();
  j["temperature"] = h.temperature;
  j["log_prob"] = h.log_prob();
  if (h.reward) j["reward"] = *h.reward;
  return j;
}

/// One episode as a JSON object; wall-clock timings sit under "timings".
inline nlohmann::ordered_json to_json(const tta::Episode& ep) {
  nlohmann::ordered_json j;
  j["id"] = ep.id;
  j["method"] = ep.method;
  j["status"] = tta::to_string(ep.status);
  if (!ep.message.empty()) j["message"] = ep.message;
  j["baseline_text"] = ep.baseline.text();
  j["baseline_reward"] = ep.baseline_reward;
  j["confidence"] = ep.confidence;
  j["steps"] = nlohmann::ordered_json::array();
  for (const auto& s : ep.steps) {
    nlohmann::ordered_json st;
    st["sampled"] = nlohmann::ordered_json::array();
    for (const auto& h : s.sampled) st["sampled"].push_back(to_json(h));
    st["rewards"] = s.rewards;
    st["mean_reward"] = s.mean_reward;
    st["advantages"] = s.advantages;
    st["loss"] = s.loss;
    st["model_grad_norm"] = s.model_grad_norm;
    st["prompt_grad_norm"] = s.prompt_grad_norm;
    j["steps"].push_back(std::move(st));
  }
  j["adapted_text"] = ep.adapted.text();
  j["model_values_changed"] = ep.model_values_changed;
  j["prompt_values_changed"] = ep.prompt_values_changed;
  j["model_update_norm"] = ep.model_update_norm;
  j["prompt_update_norm"] = ep.prompt_update_norm;
  j["timings"] = {{"decode", ep.timings.decode},
                  {"sample", ep.timings.sample},
                  {"reward", ep.timings.reward},
                  {"update", ep.timings.update},
                  {"total", ep.timings.total()}};
  return j;
}

inline std::string episode_log(const std::vector<tta::Episode>& episodes) {
  std::string out;
  for (const auto& ep : episodes) out += to_json(ep).dump() + "\n";
  return out;
}

/// Build a RunReport from runs; the subset block covers all records.
inline eval::RunReport make_report(const std::vector<const RunResult*>& runs, std::optional<std::size_t> subset_k) {
  eval::RunReport rep;
  for (const auto* r : runs) rep.records.insert(rep.records.end(), r->records.begin(), r->records.end());
  rep.rows = eval::aggregate(rep.records);
  for (const auto* r : runs)
    if (r->reward_wer_spearman) {
      rep.reward_wer_spearman = r->reward_wer_spearman;
      break;
    }
  if (subset_k && !rep.records.empty()) {
    std::set<std::string> ids;
    for (const auto& r : rep.records) ids.insert(r.id);
    rep.subset = eval::confidence_subset(rep.records, std::min(*subset_k, ids.size()));
  }
  return rep;
}

inline void write_run(const fs::path& out, const std::vector<const RunResult*>& runs, std::optional<std::size_t> k) {
  fs::create_directories(out);
  std::string log;
  for (const auto* r : runs) log += episode_log(r->episodes);
  eval::write_text((out / "episodes.jsonl").string(), log);
  eval::emit_report(make_report(runs, k), (out / "report").string());
}

// ---------------------------------------------------------------------------
// Ablation grid

struct AblationCell {
  bool finetune = true;
  bool prompt = true;
  reward::RewardMode mode = reward::RewardMode::clap;

  std::string label() const {
    std::string s;
    if (finetune) s += "finetune+";
    if (prompt) s += "prompt+";
    if (!finetune && !prompt) s += "noupdate+";
    return s + reward::to_string(mode);
  }
};

/// {finetune on/off} x {prompt on/off} x {clap, lm, clap_plus_lm}.
inline std::vector<AblationCell> ablation_grid() {
  std::vector<AblationCell> cells;
  for (bool ft : {true, false})
    for (bool pr : {true, false})
      for (auto m : {reward::RewardMode::clap, reward::RewardMode::lm, reward::RewardMode::clap_plus_lm})
        cells.push_back({ft, pr, m});
  return cells;
}

/// Baseline plus every grid cell, for each seed cfg.seed .. cfg.seed + n_seeds - 1.
inline std::vector<RunResult> run_ablation(const ExperimentConfig& cfg, const std::vector<corpus::Utterance>& test,
                                           const Models& models, signal::NoiseSpec noise, std::size_t jobs,
                                           const std::function<void(const std::string&)>& progress = {}) {
  std::vector<RunResult> runs;
  for (std::size_t s = 0; s < cfg.eval.n_seeds; ++s) {
    const std::uint64_t seed = cfg.seed + s;
    const auto examples = noisy_test_set(test, noise, seed, cfg.frontend);
    RunSpec base;
    base.method = Method::none;
    base.label = "baseline";
    base.noise = noise;
    base.seed = seed;
    base.adapt = cfg.adapt;
    base.jobs = jobs;
    runs.push_back(run_condition(cfg, examples, models, base));
    for (const auto& cell : ablation_grid()) {
      RunSpec spec = base;
      spec.method = Method::asr_tra;
      spec.label = cell.label();
      spec.adapt.finetune = cell.finetune;
      spec.adapt.use_prompt = cell.prompt;
      spec.adapt.reward.mode = cell.mode;
      if (progress) progress(fmt::format("seed {} cell {}", seed, spec.label));
      runs.push_back(run_condition(cfg, examples, models, spec));
    }
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Report merging

/// Reads `report.csv` from each run directory and returns per-seed rows
/// (deduplicated, sorted) followed by across-seed mean rows.
inline std::vector<eval::ReportRow> merge_reports(const std::vector<fs::path>& run_dirs) {
  std::vector<eval::ReportRow> rows;
  for (const auto& d : run_dirs) {
    const auto path = fs::is_directory(d) ? d / "report.csv" : d;
    const auto part = eval::parse_csv(io::read_file(path.string()));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return eval::with_seed_means(rows);
}

}  // namespace asrtra::pipeline
