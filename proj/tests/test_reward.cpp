#include <gtest/gtest.h>

#include <cmath>

#include "asrtra/corpus.hpp"
#include "asrtra/reward.hpp"
#include "helpers.hpp"

using namespace asrtra;
using namespace asrtra::reward;
using asrtra::testing::test_mel;

namespace {

RewardModelConfig tiny_config() {
  RewardModelConfig cfg;
  cfg.width = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.audio_layers = 1;
  cfg.text_layers = 1;
  cfg.embed_dim = 8;
  return cfg;
}

double norm_of(const Embedding& e) { return std::sqrt(e.dot(e)); }

}  // namespace

class RewardTowers : public ::testing::Test {
 protected:
  RewardModelParams rp = init_reward_params(tiny_config(), 2);
  signal::LogMelSpectrogram mel = test_mel("abcd", 1);
};

TEST_F(RewardTowers, EmbeddingsAreUnitNormAndDeterministic) {
  const auto a = embed_audio(mel, rp);
  const auto t = embed_text("abcd", rp);
  EXPECT_EQ(a.vector.size(), 8u);
  EXPECT_NEAR(norm_of(a), 1.0, 1e-12);
  EXPECT_NEAR(norm_of(t), 1.0, 1e-12);
  EXPECT_EQ(embed_audio(mel, rp).vector, a.vector);
  EXPECT_EQ(embed_text("abcd", rp).vector, t.vector);
}

TEST_F(RewardTowers, RewardIsACosine) {
  for (const char* text : {"a", "abcd", "ponmlk", "aaaaaaaa"}) {
    const double r = clap_reward(mel, text, rp);
    EXPECT_GE(r, -1.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST_F(RewardTowers, EmptyTextScoresThePenalty) {
  EXPECT_EQ(clap_reward(mel, "", rp), -1.0);
  EXPECT_EQ(clap_reward(mel, "", rp, -0.25), -0.25);
  EXPECT_THROW(embed_text("", rp), InputError);
}

TEST_F(RewardTowers, IdenticalEmbeddingsScoreOne) {
  for (auto* l : {&rp.audio_proj, &rp.text_proj}) {
    std::fill(l->w->data.begin(), l->w->data.end(), 0.0);
    for (std::size_t i = 0; i < l->b->size(); ++i) l->b->data[i] = static_cast<double>(i) - 3.0;
  }
  EXPECT_NEAR(clap_reward(mel, "abc", rp), 1.0, 1e-12);
}

TEST_F(RewardTowers, MelCountMismatchIsAShapeError) {
  signal::FrontendConfig fe;
  fe.n_mels = 20;
  EXPECT_THROW(embed_audio(signal::log_mel(signal::synthesize("ab", 1), fe), rp), ShapeError);
}

TEST_F(RewardTowers, ContrastiveLossGradients) {
  const auto m2 = test_mel("hgf", 2);
  const auto m3 = test_mel("ooop", 3);
  const std::vector<const signal::LogMelSpectrogram*> audio{&mel, &m2, &m3};
  const std::vector<std::string> texts{"abcd", "hgf", "ooop"};
  auto f = [&](Tape& t, const TensorPtr&) { return contrastive_loss(t, audio, texts, rp); };
  EXPECT_LT(ad::grad_check(f, rp.log_scale), 1e-3);
  EXPECT_LT(ad::grad_check(f, rp.text_proj.w), 1e-3);
  EXPECT_LT(ad::grad_check(f, rp.char_embedding), 1e-3);
  EXPECT_LT(ad::grad_check(f, rp.audio_layers[0].ff_out.b), 1e-3);
}

TEST_F(RewardTowers, ContrastiveLossOfIndistinguishablePairsIsLogB) {
  for (auto* l : {&rp.audio_proj, &rp.text_proj}) {
    std::fill(l->w->data.begin(), l->w->data.end(), 0.0);
    std::fill(l->b->data.begin(), l->b->data.end(), 1.0);
  }
  const std::vector<const signal::LogMelSpectrogram*> audio{&mel, &mel, &mel, &mel};
  const std::vector<std::string> texts{"a", "b", "c", "d"};
  Tape tape;
  EXPECT_NEAR(contrastive_loss(tape, audio, texts, rp)->item(), std::log(4.0), 1e-12);
  Tape t2;
  EXPECT_THROW(contrastive_loss(t2, {&mel}, {"a"}, rp), InputError);
}

TEST(ContrastiveTraining, LossFallsOnASmallSet) {
  corpus::CorpusConfig cc;
  cc.n_train = 32;
  cc.n_test = 8;
  const auto c = corpus::build_corpus(cc);
  ContrastiveConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 5;
  cfg.target_retrieval = 1.1;
  const auto train = paired_examples(c.train, cfg);
  const auto held = paired_examples(c.test, cfg);
  for (const auto& ex : train) ASSERT_TRUE(ex.noisy.has_value());
  auto rp = init_reward_params(tiny_config(), 1);
  const auto res = train_contrastive(rp, train, held, cfg);
  EXPECT_FALSE(res.converged);
  ASSERT_EQ(res.curve.size(), 5u);
  EXPECT_LT(res.curve.back().loss, res.curve.front().loss);
  EXPECT_LE(rp.log_scale->item(), cfg.max_log_scale);
  const double r = retrieval_at_1(held, rp);
  EXPECT_GE(r, 0.0);
  EXPECT_LE(r, 1.0);
}

TEST(TrigramLm, InDistributionTextScoresHigher) {
  const auto lm = TrigramLm::train({"abcabc", "abcab", "bcabca", "cabcab"});
  EXPECT_GT(lm_score("abcabc", lm), lm_score("ponmlk", lm));
  EXPECT_EQ(lm_score("", lm), -1.0);
  EXPECT_EQ(lm_score("", lm, -0.5), -0.5);
  for (const char* t : {"a", "abc", "pppppp"}) {
    EXPECT_GT(lm_score(t, lm), -1.0);
    EXPECT_LT(lm_score(t, lm), 1.0);
  }
}

TEST(TrigramLm, UntrainedModelIsUniform) {
  const TrigramLm lm;
  EXPECT_NEAR(lm.mean_log_prob("abc"), std::log(1.0 / 17.0), 1e-12);
}

TEST(TrigramLm, SmoothedConditionalsNormalize) {
  // Every training text starts with 'a', so only the context "^a" has counts
  // after the start padding.
  const auto lm = TrigramLm::train({"abcabc", "abd"});
  const double k = TrigramLm::kSmoothing;
  double total = std::exp(lm.mean_log_prob(""));  // P(end | ^^)
  for (char c : signal::kAlphabet) {
    const double end_given_c = c == 'a' ? k / (2.0 + 17.0 * k) : 1.0 / 17.0;
    total += std::exp(2.0 * lm.mean_log_prob(std::string(1, c)) - std::log(end_given_c));
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(TrigramLm, SerializationRoundTrips) {
  const auto lm = TrigramLm::train({"hello", "help", "ponm"});
  const auto text = lm.serialize();
  const auto back = TrigramLm::deserialize(text);
  EXPECT_EQ(back, lm);
  EXPECT_EQ(back.serialize(), text);
  EXPECT_THROW(TrigramLm::deserialize("abcd 3\n"), FileError);
}

TEST(CombinedReward, ModesAndWeights) {
  const auto rp = init_reward_params(tiny_config(), 2);
  const auto lm = TrigramLm::train({"abcd", "abce"});
  const auto mel = test_mel("abcd", 5);
  const double clap = clap_reward(mel, "abce", rp);
  const double lms = lm_score("abce", lm);
  RewardConfig cfg;
  EXPECT_EQ(combined_reward(mel, "abce", &rp, nullptr, cfg), clap);
  cfg.mode = RewardMode::lm;
  EXPECT_EQ(combined_reward(mel, "abce", nullptr, &lm, cfg), lms);
  cfg.mode = RewardMode::clap_plus_lm;
  cfg.lm_weight = 0.0;
  EXPECT_EQ(combined_reward(mel, "abce", &rp, &lm, cfg), clap);
  cfg.lm_weight = 1.0;
  EXPECT_EQ(combined_reward(mel, "abce", &rp, &lm, cfg), lms);
  cfg.lm_weight = 0.5;
  EXPECT_NEAR(combined_reward(mel, "abce", &rp, &lm, cfg), 0.5 * clap + 0.5 * lms, 1e-15);
}

TEST(CombinedReward, MixingArithmetic) {
  EXPECT_NEAR((1.0 - 0.5) * 0.4 + 0.5 * 0.8, 0.6, 1e-15);
}

TEST(CombinedReward, MissingModelIsAConfigError) {
  const auto mel = test_mel("abcd", 5);
  const auto rp = init_reward_params(tiny_config(), 2);
  RewardConfig cfg;
  EXPECT_THROW(combined_reward(mel, "a", nullptr, nullptr, cfg), ConfigError);
  cfg.mode = RewardMode::clap_plus_lm;
  EXPECT_THROW(combined_reward(mel, "a", &rp, nullptr, cfg), ConfigError);
  cfg.lm_weight = 2.0;
  EXPECT_THROW(validate(cfg), ConfigError);
  EXPECT_THROW(parse_reward_mode("bleu"), ConfigError);
  for (auto m : {RewardMode::clap, RewardMode::lm, RewardMode::clap_plus_lm}) EXPECT_EQ(parse_reward_mode(to_string(m)), m);
}
