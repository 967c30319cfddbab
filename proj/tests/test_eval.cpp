#include <gtest/gtest.h>

#include "asrtra/eval.hpp"
#include "oracles.hpp"

using namespace asrtra;
using namespace asrtra::eval;

TEST(Wer, IdenticalIsZero) {
  EXPECT_EQ(wer("the cat sat", "the cat sat").wer, 0.0);
}

TEST(Wer, OneSubstitution) {
  const auto w = wer("the cat sat", "the bat sat");
  EXPECT_EQ(w.substitutions, 1u);
  EXPECT_EQ(w.errors(), 1u);
  EXPECT_NEAR(w.wer, 1.0 / 3.0, 1e-15);
}

TEST(Wer, EmptyHypothesisIsAllDeletions) {
  const auto w = wer("a b", "");
  EXPECT_EQ(w.deletions, 2u);
  EXPECT_EQ(w.wer, 1.0);
}

TEST(Wer, InsertionsCanExceedOne) {
  const auto w = wer("a", "a b c");
  EXPECT_EQ(w.insertions, 2u);
  EXPECT_EQ(w.wer, 2.0);
}

TEST(Wer, EmptyReferenceThrows) {
  EXPECT_THROW(wer("", "a"), InputError);
  EXPECT_THROW(wer("   ", "a"), InputError);
}

TEST(Wer, CharacterUnits) {
  EXPECT_NEAR(wer("abcd", "abd", Unit::chars).wer, 0.25, 1e-15);
  EXPECT_EQ(wer("abcd", "abd", Unit::chars).deletions, 1u);
}

TEST(Wer, BreakdownSumsToDistance) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::string a, b;
    for (auto n = rng.uniform_int(1, 7); n > 0; --n) a.push_back("abc"[rng.uniform_int(0, 2)]);
    for (auto n = rng.uniform_int(0, 7); n > 0; --n) b.push_back("abc"[rng.uniform_int(0, 2)]);
    const auto w = wer(a, b, Unit::chars);
    EXPECT_EQ(w.ref_words, a.size());
    EXPECT_EQ(a.size() - w.deletions + w.insertions, b.size());
    EXPECT_EQ(w.errors(), w.deletions + w.substitutions + w.insertions);
  }
}

TEST(Wer, MatchesBreadthFirstOracle) {
  const asrtra::testing::EditGraph graph("abcd", 4);
  const auto& strings = graph.strings();
  for (std::size_t i = 1; i < strings.size(); ++i) {
    const auto dist = graph.distances_from(i);
    for (std::size_t j = 0; j < strings.size(); ++j)
      ASSERT_EQ(wer(strings[i], strings[j], Unit::chars).errors(), static_cast<std::size_t>(dist[j]))
          << strings[i] << " vs " << strings[j];
  }
}

TEST(Spearman, HandExample) {
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {2, 1, 4, 3}), 0.6, 1e-12);
}

TEST(Spearman, MonotoneTransformsAreInvariant) {
  const std::vector<double> x{0.3, -1.0, 2.5, 7.0, 0.1};
  const std::vector<double> y{1.0, 4.0, 2.0, 8.0, 3.0};
  std::vector<double> ex;
  for (double v : x) ex.push_back(std::exp(v));
  EXPECT_NEAR(spearman(x, y), spearman(ex, y), 1e-15);
  EXPECT_NEAR(spearman(x, x), 1.0, 1e-15);
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v);
  EXPECT_NEAR(spearman(x, neg), -1.0, 1e-15);
}

TEST(Spearman, TiesUseAverageRanks) {
  EXPECT_EQ(average_ranks({5, 1, 5, 3}), (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(Spearman, DegenerateInputsThrow) {
  EXPECT_THROW(spearman({1, 2}, {1, 2}), InputError);
  EXPECT_THROW(spearman({1, 2, 3}, {1, 2}), InputError);
  EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), InputError);
}

namespace {

UtteranceRecord record(std::string id, std::string method, double w, double confidence, std::uint64_t seed = 1,
                       double latency = 0.0) {
  UtteranceRecord r;
  r.id = std::move(id);
  r.method = std::move(method);
  r.noise_kind = "gaussian";
  r.snr_db = 10.0;
  r.seed = seed;
  r.wer.wer = w;
  r.confidence = confidence;
  r.timings.decode = latency;
  return r;
}

}  // namespace

TEST(ConfidenceSubset, PicksMostConfident) {
  std::vector<UtteranceRecord> rs;
  const std::vector<double> conf{-0.1, -2.0, -0.5, -0.05};
  const std::vector<double> base{0.0, 1.0, 0.5, 0.2};
  const std::vector<double> adapted{0.0, 0.5, 0.5, 0.0};
  for (std::size_t i = 0; i < 4; ++i) rs.push_back(record("u" + std::to_string(i), "none", base[i], conf[i]));
  for (std::size_t i = 0; i < 4; ++i) rs.push_back(record("u" + std::to_string(i), "asr_tra", adapted[i], conf[i]));
  const auto rep = confidence_subset(rs, 2);
  EXPECT_EQ(rep.ids, (std::vector<std::string>{"u3", "u0"}));
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0].method, "none");
  EXPECT_NEAR(rep.rows[0].subset_wer, 0.1, 1e-15);
  EXPECT_NEAR(rep.rows[0].full_wer, 0.425, 1e-15);
  EXPECT_EQ(rep.rows[1].subset_wer, 0.0);
  EXPECT_EQ(rep.rows[1].subset_n, 2u);
  EXPECT_THROW(confidence_subset(rs, 5), InputError);
}

TEST(ConfidenceSubset, TiesBreakById) {
  std::vector<UtteranceRecord> rs{record("b", "none", 0, -1), record("a", "none", 0, -1), record("c", "none", 0, -1)};
  EXPECT_EQ(confidence_subset(rs, 2).ids, (std::vector<std::string>{"a", "b"}));
}

TEST(Report, AggregateGroupsBySeedAndDropsColdLatency) {
  std::vector<UtteranceRecord> rs{record("a", "none", 0.5, 0, 1, 9.0), record("b", "none", 0.0, 0, 1, 1.0),
                                  record("c", "none", 0.1, 0, 1, 3.0), record("a", "none", 1.0, 0, 2, 2.0)};
  const auto rows = aggregate(rs);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].seed, "1");
  EXPECT_EQ(rows[0].n, 3u);
  EXPECT_NEAR(rows[0].mean_wer, 0.2, 1e-15);
  EXPECT_NEAR(rows[0].mean_latency_s, 2.0, 1e-15);
  EXPECT_EQ(rows[1].mean_latency_s, 2.0);
  const auto with_means = with_seed_means(rows);
  ASSERT_EQ(with_means.size(), 3u);
  EXPECT_EQ(with_means.back().seed, "mean");
  EXPECT_NEAR(with_means.back().mean_wer, 0.6, 1e-15);
  EXPECT_EQ(with_means.back().n, 4u);
  EXPECT_EQ(with_seed_means(with_means), with_means);
}

TEST(Report, CsvRoundTripIsExact) {
  std::vector<ReportRow> rows{{"asr_tra", "gaussian", 10.0, 0.1 + 0.2, 0.0123456789, 200, "7"},
                              {"none", "tonal_babble", INFINITY, 1.0 / 3.0, 0.0, 5, "mean"}};
  const auto csv = to_csv(rows);
  EXPECT_EQ(csv.substr(0, kCsvHeader.size()), kCsvHeader);
  EXPECT_EQ(parse_csv(csv), rows);
  EXPECT_EQ(to_csv(parse_csv(csv)), csv);
}

TEST(Latency, PercentilesUseNearestRank) {
  std::vector<double> xs;
  for (int i = 1; i <= 20; ++i) xs.push_back(i);
  const auto s = phase_stats(xs);
  EXPECT_EQ(s.median, 10.5);
  EXPECT_EQ(s.p95, 19.0);
  EXPECT_EQ(s.mean, 10.5);
}

TEST(Latency, FirstEpisodeIsWarmUp) {
  std::vector<tta::Timings> ts(3);
  ts[0].decode = 100.0;
  ts[1].decode = 1.0;
  ts[2].decode = 3.0;
  const auto l = latency_stats(ts);
  EXPECT_EQ(l.n, 2u);
  EXPECT_EQ(l.decode.mean, 2.0);
  EXPECT_EQ(l.total.mean, 2.0);
  EXPECT_THROW(latency_stats({}), InputError);
}
