// Adapts a single noisy test utterance and prints its episode record.
//
//   asrtra_example <corpus_dir> <checkpoint_dir> [utterance_index]

#include <cstdio>
#include <string>

#include "asrtra/pipeline.hpp"

using namespace asrtra;

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: %s <corpus_dir> <checkpoint_dir> [utterance_index]\n", argv[0]);
    return 2;
  }
  config::ExperimentConfig cfg;
  config::resolve(cfg);
  const auto c = corpus::read_corpus(argv[1]);
  const auto models = pipeline::load_models(cfg, argv[2]);
  const std::size_t index = argc > 3 ? std::stoul(argv[3]) : 0;
  if (index >= c.test.size()) {
    std::fprintf(stderr, "utterance index out of range\n");
    return 2;
  }
  const auto& u = c.test[index];
  const auto mel = signal::log_mel(u.noisy ? *u.noisy : u.clean, cfg.frontend);

  auto params = models.transcriber.clone();
  auto prompt = model::make_prompt(cfg.prompt_len, params.cfg.d_model, derive_seed(cfg.seed, "prompt"));
  auto ac = cfg.adapt;
  ac.seed = derive_seed(cfg.seed, u.id, "adapt");
  const auto ep = tta::adapt_one(mel, params, prompt, models.reward ? &*models.reward : nullptr,
                                 models.lm ? &*models.lm : nullptr, ac, u.id);

  std::printf("%s\n", pipeline::to_json(ep).dump(2).c_str());
  std::printf("reference  %s\nbaseline   %s\nadapted    %s\n", u.text.c_str(), ep.baseline.text().c_str(),
              ep.adapted.text().c_str());
  return 0;
}
