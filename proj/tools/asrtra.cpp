// asrtra: corpus generation, training, adaptation runs, ablations, reports.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 training gate
// not met, 4 runtime abort.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "asrtra/pipeline.hpp"

namespace fs = std::filesystem;
using namespace asrtra;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;
constexpr int kExitRuntime = 4;

struct Options {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out;
  std::string corpus_dir;
  std::string checkpoint_dir;
  std::string method = "asr_tra";
  std::optional<double> snr;
  std::string noise;
  std::string reward_mode;
  std::vector<std::string> sets;
  std::map<std::string, std::string> leaf_values;
  std::vector<std::string> run_dirs;
};

void log(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

/// Defaults, then the config file, then flags.
config::ExperimentConfig build_config(const Options& o) {
  config::ExperimentConfig cfg;
  if (!o.config_file.empty()) config::load_file(cfg, o.config_file);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.noise.empty()) config::set_value(cfg, "corpus.noise_kind", o.noise);
  if (o.snr) cfg.corpus.noise.snr_db = *o.snr;
  if (!o.reward_mode.empty()) config::set_value(cfg, "reward.mode", o.reward_mode);
  for (const auto& [k, v] : o.leaf_values) config::set_value(cfg, k, v);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set", "expected key=value, got '" + s + "'");
    config::set_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  config::validate(cfg);
  config::resolve(cfg);
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(flag, "required");
}

int cmd_gen_corpus(const config::ExperimentConfig& cfg, const Options& o) {
  require(o.out, "--out");
  const auto c = pipeline::gen_corpus(cfg, o.out);
  log(fmt::format("wrote {} train and {} test utterances to {} (config {})", c.train.size(), c.test.size(), o.out,
                  config::config_hash(cfg)));
  return 0;
}

int cmd_pretrain(const config::ExperimentConfig& cfg, const Options& o) {
  require(o.corpus_dir, "--corpus");
  require(o.out, "--out");
  const auto c = corpus::read_corpus(o.corpus_dir);
  auto run = pipeline::train_transcriber(cfg, c, [](const model::EpochStats& s) {
    log(fmt::format("epoch {} loss {:.4f} held-out exact-match {:.3f} ({:.1f}s)", s.epoch, s.train_loss,
                    s.heldout_exact_match, s.seconds));
  });
  pipeline::save_transcriber(o.out, run);
  if (run.result.status != model::TrainStatus::converged) {
    log(fmt::format("training failure: exact-match {:.3f} below {:.3f} after {} epochs", run.result.final_exact_match,
                    cfg.pretrain.target_exact_match, run.result.curve.size()));
    return kExitTraining;
  }
  log(fmt::format("converged: exact-match {:.3f}", run.result.final_exact_match));
  return 0;
}

int cmd_train_reward(const config::ExperimentConfig& cfg, const Options& o) {
  require(o.corpus_dir, "--corpus");
  require(o.out, "--out");
  const auto c = corpus::read_corpus(o.corpus_dir);
  auto run = pipeline::train_reward(cfg, c, [](const reward::ContrastiveEpoch& e) {
    log(fmt::format("epoch {} loss {:.4f} held-out retrieval@1 {:.3f} ({:.1f}s)", e.epoch, e.loss,
                    e.heldout_retrieval, e.seconds));
  });
  pipeline::save_reward(o.out, run);
  if (!run.result.converged) {
    log(fmt::format("training failure: retrieval@1 {:.3f} below {:.3f}", run.result.final_retrieval,
                    cfg.reward_train.target_retrieval));
    return kExitTraining;
  }
  log(fmt::format("converged: retrieval@1 {:.3f}", run.result.final_retrieval));
  return 0;
}

int cmd_adapt(const config::ExperimentConfig& cfg, const Options& o) {
  require(o.corpus_dir, "--corpus");
  require(o.checkpoint_dir, "--checkpoints");
  require(o.out, "--out");
  const auto method = pipeline::parse_method(o.method);
  const auto c = corpus::read_corpus(o.corpus_dir);
  const auto models = pipeline::load_models(cfg, o.checkpoint_dir);
  if (method == pipeline::Method::asr_tra) {
    if (cfg.reward.mode != reward::RewardMode::lm && !models.reward)
      throw ConfigError("--checkpoints", "reward.ckpt not found for reward mode " + reward::to_string(cfg.reward.mode));
    if (cfg.reward.mode != reward::RewardMode::clap && !models.lm)
      throw ConfigError("--checkpoints", "lm.txt not found for reward mode " + reward::to_string(cfg.reward.mode));
  }
  pipeline::RunSpec spec;
  spec.method = method;
  spec.noise = cfg.corpus.noise;
  spec.seed = cfg.seed;
  spec.adapt = cfg.adapt;
  spec.jobs = o.jobs;
  const auto examples = pipeline::noisy_test_set(c.test, spec.noise, spec.seed, cfg.frontend);
  const auto run = pipeline::run_condition(cfg, examples, models, spec);
  pipeline::write_run(o.out, {&run}, cfg.eval.subset_k);
  std::size_t aborted = 0;
  for (const auto& ep : run.episodes) aborted += ep.status != tta::EpisodeStatus::ok;
  const auto rows = eval::aggregate(run.records);
  for (const auto& r : rows)
    log(fmt::format("{} {} {} dB: WER {:.4f} over {} utterances", r.method, r.noise_kind, r.snr_db, r.mean_wer, r.n));
  if (aborted) log(fmt::format("{} episode(s) aborted on non-finite values", aborted));
  return 0;
}

int cmd_ablate(const config::ExperimentConfig& cfg, const Options& o) {
  require(o.corpus_dir, "--corpus");
  require(o.checkpoint_dir, "--checkpoints");
  require(o.out, "--out");
  const auto c = corpus::read_corpus(o.corpus_dir);
  const auto models = pipeline::load_models(cfg, o.checkpoint_dir);
  if (!models.reward || !models.lm) throw ConfigError("--checkpoints", "ablation needs reward.ckpt and lm.txt");
  const auto runs = pipeline::run_ablation(cfg, c.test, models, cfg.corpus.noise, o.jobs, log);
  std::vector<const pipeline::RunResult*> ptrs;
  for (const auto& r : runs) ptrs.push_back(&r);
  pipeline::write_run(o.out, ptrs, std::nullopt);
  const auto rows = eval::with_seed_means(eval::aggregate(pipeline::make_report(ptrs, std::nullopt).records));
  eval::write_text((fs::path(o.out) / "ablation_mean.csv").string(), eval::to_csv(rows));
  for (const auto& r : rows)
    if (r.seed == "mean") log(fmt::format("{:<28} WER {:.4f}", r.method, r.mean_wer));
  return 0;
}

int cmd_report(const config::ExperimentConfig&, const Options& o) {
  require(o.out, "--out");
  if (o.run_dirs.empty()) throw ConfigError("runs", "at least one run directory is required");
  std::vector<fs::path> dirs(o.run_dirs.begin(), o.run_dirs.end());
  const auto rows = pipeline::merge_reports(dirs);
  fs::create_directories(o.out);
  eval::write_text((fs::path(o.out) / "merged.csv").string(), eval::to_csv(rows));
  eval::write_text((fs::path(o.out) / "merged.tsv").string(), eval::to_tsv(rows));
  log(fmt::format("merged {} rows from {} runs into {}", rows.size(), dirs.size(), o.out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-guided episodic test-time adaptation on a synthetic tone-speech task"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;

  app.add_option("--config", o.config_file, "TOML configuration file");
  app.add_option("--seed", o.seed, "global seed");
  app.add_option("--jobs", o.jobs, "parallel episodes")->check(CLI::PositiveNumber);
  app.add_option("--out", o.out, "output directory");
  app.add_option("--snr", o.snr, "test SNR in dB (inf for clean)");
  app.add_option("--noise", o.noise, "noise kind: gaussian, tonal_babble, impulse_bursts, none");
  app.add_option("--reward-mode", o.reward_mode, "clap, lm or clap_plus_lm");
  app.add_option("--set", o.sets, "override a configuration leaf: key=value (repeatable)");

  config::ExperimentConfig defaults;
  for (const auto& leaf : config::leaves(defaults)) {
    if (leaf.key == "seed") continue;  // covered by --seed
    auto* opt = app.add_option_function<std::string>(
        "--" + leaf.key, [&o, key = leaf.key](const std::string& v) { o.leaf_values[key] = v; },
        "default " + leaf.get());
    opt->group("Configuration leaves");
  }

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  auto* pre = app.add_subcommand("pretrain", "train the transcriber to the exact-match gate");
  pre->add_option("--corpus", o.corpus_dir, "corpus directory");
  auto* trw = app.add_subcommand("train-reward", "train the audio-text reward model and the trigram LM");
  trw->add_option("--corpus", o.corpus_dir, "corpus directory");
  auto* ada = app.add_subcommand("adapt", "decode the test split with one method");
  ada->add_option("--corpus", o.corpus_dir, "corpus directory");
  ada->add_option("--checkpoints", o.checkpoint_dir, "directory holding model.ckpt, reward.ckpt, lm.txt");
  ada->add_option("--method", o.method, "none, entropy_min or asr_tra");
  auto* abl = app.add_subcommand("ablate", "finetune x prompt x reward grid plus baseline");
  abl->add_option("--corpus", o.corpus_dir, "corpus directory");
  abl->add_option("--checkpoints", o.checkpoint_dir, "checkpoint directory");
  auto* rep = app.add_subcommand("report", "merge run reports");
  rep->add_option("runs", o.run_dirs, "run directories or report.csv files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const auto cfg = build_config(o);
    if (gen->parsed()) return cmd_gen_corpus(cfg, o);
    if (pre->parsed()) return cmd_pretrain(cfg, o);
    if (trw->parsed()) return cmd_train_reward(cfg, o);
    if (ada->parsed()) return cmd_adapt(cfg, o);
    if (abl->parsed()) return cmd_ablate(cfg, o);
    if (rep->parsed()) return cmd_report(cfg, o);
  } catch (const ConfigError& e) {
    log(fmt::format("configuration error: {}", e.what()));
    return kExitConfig;
  } catch (const pipeline::TrainingFailure& e) {
    log(fmt::format("training failure: {}", e.what()));
    return kExitTraining;
  } catch (const std::exception& e) {
    log(fmt::format("aborted: {}", e.what()));
    return kExitRuntime;
  }
  return kExitRuntime;
}
