#include <gtest/gtest.h>

#include <cmath>

#include "asrtra/model.hpp"
#include "asrtra/pretrain.hpp"
#include "helpers.hpp"

using namespace asrtra;
using namespace asrtra::model;
using asrtra::testing::test_mel;
using asrtra::testing::tiny_model_config;

TEST(Tokens, TextRoundTrip) {
  EXPECT_EQ(decode_text(encode_text("hello")), "hello");
  EXPECT_EQ(encode_text("az"), (std::vector<int>{0, kUnk}));
  EXPECT_EQ(decode_text({0, 1, kEos, 2}), "ab");
  EXPECT_EQ(decode_text({kBos, 0, kPad, kUnk}), "a?");
  EXPECT_EQ(target_tokens("ba"), (std::vector<int>{1, 0, kEos}));
}

TEST(Prompt, ParameterCount) {
  EXPECT_EQ(count_prompt_params(4, 384), 1536u);
  EXPECT_EQ(count_prompt_params(4, 64), 256u);
  EXPECT_EQ(count_prompt_params(1, 1), 1u);
  EXPECT_THROW(count_prompt_params(0, 4), InputError);
}

TEST(Prompt, InitialisationScale) {
  const auto p = make_prompt(64, 64, 3, 0.02);
  EXPECT_EQ(p.length(), 64u);
  EXPECT_TRUE(p.p->requires_grad);
  double ss = 0.0;
  for (double v : p.p->data) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(p.p->size())), 0.02, 0.002);
  EXPECT_EQ(make_prompt(0, 64, 3).length(), 0u);
}

TEST(Temperature, ProbabilitiesNormalize) {
  const std::vector<double> logits{2.0, -1.0, 0.5, 3.0, 0.0};
  for (double t : {0.1, 0.4, 0.6, 1.0, 10.0}) {
    const auto p = tempered_probs(logits, t);
    double s = 0.0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9) << "t = " << t;
    EXPECT_EQ(argmax(p), argmax(logits)) << "t = " << t;
  }
}

TEST(Temperature, HandEvaluatedDistribution) {
  const auto p = tempered_probs(std::vector<double>{2, 1, 0}, 1.0);
  EXPECT_NEAR(p[0], 0.665, 5e-4);
  EXPECT_NEAR(p[1], 0.245, 5e-4);
  EXPECT_NEAR(p[2], 0.090, 5e-4);
}

TEST(Temperature, EntropyGrowsWithTemperature) {
  const std::vector<double> logits{2.0, -1.0, 0.5, 3.0};
  auto entropy = [&](double t) {
    double h = 0.0;
    for (double v : tempered_probs(logits, t))
      if (v > 0) h -= v * std::log(v);
    return h;
  };
  EXPECT_LT(entropy(0.1), entropy(0.5));
  EXPECT_LT(entropy(0.5), entropy(1.0));
  EXPECT_LT(entropy(1.0), entropy(10.0));
  EXPECT_THROW(tempered_probs(logits, 0.0), InputError);
}

TEST(Temperature, UniformLogitsSampleUniformly) {
  const std::size_t k = 8, n = 10000;
  for (double t : {0.5, 1.0}) {
    const auto p = tempered_probs(std::vector<double>(k, 0.3), t);
    Rng rng(5);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_index(p, rng.uniform()))];
    const double expected = static_cast<double>(n) / static_cast<double>(k);
    const double sigma = std::sqrt(static_cast<double>(n) * (1.0 / k) * (1.0 - 1.0 / k));
    for (auto c : counts) EXPECT_LT(std::abs(static_cast<double>(c) - expected), 3.0 * sigma);
  }
}

TEST(Temperature, SampleIndexSkipsZeroMass) {
  EXPECT_EQ(sample_index(std::vector<double>{0.0, 1.0, 0.0}, 0.0), 1);
  EXPECT_EQ(sample_index(std::vector<double>{0.5, 0.5, 0.0}, 0.999999999999), 1);
}

class TinyModel : public ::testing::Test {
 protected:
  ModelParams params = init_params(tiny_model_config(), 4);
  signal::LogMelSpectrogram mel = test_mel("abcd", 9);
};

TEST_F(TinyModel, EncoderShapeAndDeterminism) {
  auto t1 = Tape::inference();
  auto t2 = Tape::inference();
  const auto h1 = encode(t1, mel, params);
  const auto h2 = encode(t2, mel, params);
  EXPECT_EQ(h1->rows(), mel.n_frames);
  EXPECT_EQ(h1->cols(), params.cfg.d_model);
  EXPECT_EQ(h1->data, h2->data);
}

TEST_F(TinyModel, EncoderRejectsWrongMelCount) {
  signal::FrontendConfig fe;
  fe.n_mels = 20;
  const auto other = signal::log_mel(signal::synthesize("ab", 1), fe);
  auto tape = Tape::inference();
  EXPECT_THROW(encode(tape, other, params), ShapeError);
}

TEST_F(TinyModel, FourFramesGiveFourRows) {
  const auto short_mel = signal::log_mel(signal::synthesize("a", 2));
  ASSERT_EQ(short_mel.n_frames, 4u);
  auto tape = Tape::inference();
  EXPECT_EQ(encode(tape, short_mel, params)->rows(), 4u);
}

TEST_F(TinyModel, MalformedPrefixIsRejected) {
  auto tape = Tape::inference();
  const auto enc = encode_state(tape, mel, params);
  EXPECT_THROW(decode_logits(enc, std::vector<int>{}, nullptr, params), InputError);
  EXPECT_THROW(decode_logits(enc, std::vector<int>{0, 1}, nullptr, params), InputError);
  EXPECT_THROW(decode_logits(enc, std::vector<int>{kBos, 25}, nullptr, params), InputError);
  EXPECT_EQ(decode_logits(enc, std::vector<int>{kBos, 3}, nullptr, params).size(), std::size_t{kVocab});
}

TEST_F(TinyModel, ZeroOutputProjectionEmitsTieBreakWinner) {
  std::fill(params.embedding->data.begin(), params.embedding->data.end(), 0.0);
  const auto h = greedy_decode(mel, nullptr, params, 7);
  EXPECT_EQ(h.tokens, std::vector<int>(7, 0));
  for (double lp : h.token_log_probs) EXPECT_NEAR(lp, std::log(1.0 / kVocab), 1e-12);
}

TEST_F(TinyModel, ForcedTokensUnderUniformLogits) {
  std::fill(params.embedding->data.begin(), params.embedding->data.end(), 0.0);
  Tape tape;
  const auto enc = encode_state(tape, mel, params);
  const std::vector<int> tokens{3};
  EXPECT_NEAR(sequence_log_prob(tape, enc, tokens, nullptr, params)->item(), std::log(1.0 / kVocab), 1e-12);
}

TEST_F(TinyModel, GreedyIsDeterministic) {
  const auto prompt = make_prompt(4, params.cfg.d_model, 1);
  EXPECT_EQ(greedy_decode(mel, &prompt, params), greedy_decode(mel, &prompt, params));
}

TEST_F(TinyModel, NearZeroTemperatureMatchesGreedy) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto m = test_mel("hgfe", s);
    EXPECT_EQ(sample_decode(m, nullptr, params, DecodeConfig{1e-6, 32, s}).tokens,
              greedy_decode(m, nullptr, params).tokens);
  }
  EXPECT_THROW(sample_decode(mel, nullptr, params, DecodeConfig{0.0, 32, 0}), InputError);
}

TEST_F(TinyModel, SequenceLogProbMatchesDecodeBookkeeping) {
  const auto prompt = make_prompt(4, params.cfg.d_model, 2);
  for (const SoftPrompt* p : {static_cast<const SoftPrompt*>(nullptr), &prompt}) {
    const auto h = sample_decode(mel, p, params, DecodeConfig{0.8, 12, 3});
    Tape tape;
    const auto enc = encode_state(tape, mel, params);
    EXPECT_NEAR(sequence_log_prob(tape, enc, h.tokens, p, params)->item(), h.log_prob(), 1e-9);
  }
}

TEST_F(TinyModel, PromptWidthMismatchThrows) {
  const auto prompt = make_prompt(2, params.cfg.d_model + 1, 2);
  EXPECT_THROW(greedy_decode(mel, &prompt, params), ShapeError);
}

TEST_F(TinyModel, DecoderStepGradientsMatchFiniteDifferences) {
  auto prompt = make_prompt(3, params.cfg.d_model, 5, 0.5);
  const std::vector<int> tokens{2, 7, 1, kEos};
  auto f = [&](Tape& t, const TensorPtr&) {
    const auto enc = encode_state(t, mel, params);
    return sequence_log_prob(t, enc, tokens, &prompt, params);
  };
  EXPECT_LT(ad::grad_check(f, prompt.p), 1e-4);
  EXPECT_LT(ad::grad_check(f, params.decoder[0].cross_attn.q.w), 1e-4);
  EXPECT_LT(ad::grad_check(f, params.decoder_norm.gain), 1e-4);
  EXPECT_LT(ad::grad_check(f, params.encoder[0].ff_in.b), 1e-4);
}

TEST_F(TinyModel, CloneIsIndependent) {
  auto copy = params.clone();
  copy.embedding->data[0] += 1.0;
  EXPECT_NE(copy.embedding->data[0], params.embedding->data[0]);
  const auto a = params.named_tensors();
  const auto b = copy.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 1; i < a.size(); ++i) {
    if (a[i].first != "dec.embedding") {
      EXPECT_EQ(a[i].second->data, b[i].second->data) << a[i].first;
    }
  }
}

TEST(ModelConfig, Validation) {
  auto cfg = tiny_model_config();
  cfg.n_heads = 3;
  EXPECT_THROW(init_params(cfg, 1), ConfigError);
  cfg = tiny_model_config();
  cfg.vocab = 30;
  EXPECT_THROW(init_params(cfg, 1), ConfigError);
}

TEST(Pretrain, LossDecreasesOnTinySet) {
  corpus::CorpusConfig cc;
  cc.n_train = 24;
  cc.n_test = 4;
  cc.max_len = 4;
  const auto c = corpus::build_corpus(cc);
  const auto train = clean_examples(c.train);
  auto params = init_params(tiny_model_config(), 1);
  PretrainConfig pc;
  pc.max_epochs = 4;
  pc.batch_size = 8;
  pc.optimizer.lr = 1e-2;
  const auto res = pretrain(params, train, clean_examples(c.test), pc);
  ASSERT_EQ(res.curve.size(), 4u);
  EXPECT_EQ(res.status, TrainStatus::cap_reached);
  EXPECT_LT(res.curve.back().train_loss, res.initial_loss);
  EXPECT_LT(mean_token_nll(params, train), res.initial_loss);
}
