#pragma once

// Metrics: word error rate, rank correlation, confidence subsets, latency.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "asrtra/error.hpp"
#include "asrtra/tta.hpp"

namespace asrtra::eval {

struct WerBreakdown {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_words = 0;
  double wer = 0.0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
};

/// Error units. The tone corpus has no word boundaries, so each character
/// plays the role of a word there.
enum class Unit { words, chars };

inline std::vector<std::string> split_units(std::string_view s, Unit unit) {
  std::vector<std::string> out;
  if (unit == Unit::chars) {
    for (char c : s)
      if (!std::isspace(static_cast<unsigned char>(c))) out.emplace_back(1, c);
    return out;
  }
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

/// Levenshtein alignment over unit sequences. Among minimum-cost alignments
/// the one with the fewest substitutions, then fewest deletions, is reported.
/// Minimum-edit alignment; `wer` is left at 0 for an empty reference.
inline WerBreakdown align_units(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  // cost tuple: (total, substitutions, deletions); insertions follow from total.
  using Cost = std::tuple<std::size_t, std::size_t, std::size_t>;
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<Cost> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, 0, 0};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, 0, i};
    for (std::size_t j = 1; j <= m; ++j) {
      const auto& [dt, ds, dd] = prev[j];
      const auto& [it, is, id] = cur[j - 1];
      const auto& [st, ss, sd] = prev[j - 1];
      Cost best{dt + 1, ds, dd + 1};                               // delete ref[i-1]
      best = std::min(best, Cost{it + 1, is, id});                  // insert hyp[j-1]
      if (ref[i - 1] == hyp[j - 1]) best = std::min(best, Cost{st, ss, sd});
      else best = std::min(best, Cost{st + 1, ss + 1, sd});
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const auto [total, subs, dels] = prev[m];
  WerBreakdown w;
  w.substitutions = subs;
  w.deletions = dels;
  w.insertions = total - subs - dels;
  w.ref_words = n;
  if (n) w.wer = static_cast<double>(total) / static_cast<double>(n);
  return w;
}

inline WerBreakdown wer_units(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  if (ref.empty()) throw InputError("wer: empty reference (WER undefined)");
  return align_units(ref, hyp);
}

inline WerBreakdown wer(std::string_view reference, std::string_view hypothesis, Unit unit = Unit::words) {
  return wer_units(split_units(reference, unit), split_units(hypothesis, unit));
}

// ---------------------------------------------------------------------------
// Spearman rank correlation

/// 1-based ranks; ties receive the average of the ranks they span.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw InputError("correlation undefined for a constant vector");
  return sxy / std::sqrt(sxx * syy);
}

/// Spearman's rho: Pearson correlation of average ranks.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InputError("spearman: length mismatch");
  if (x.size() < 3) throw InputError("spearman: need at least 3 pairs");
  return pearson(average_ranks(x), average_ranks(y));
}

// ---------------------------------------------------------------------------
// Per-utterance records and run reports

/// One decoded utterance under one method and condition.
struct UtteranceRecord {
  std::string id;
  std::string method;
  std::string noise_kind;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  std::string reference;
  std::string hypothesis;
  WerBreakdown wer;
  double confidence = 0.0;  // unadapted model, mean token log-prob
  double reward = 0.0;      // audio-text reward of the unadapted hypothesis
  tta::Timings timings;
};

struct ReportRow {
  std::string method;
  std::string noise_kind;
  double snr_db = 0.0;
  double mean_wer = 0.0;
  double mean_latency_s = 0.0;
  std::size_t n = 0;
  std::string seed;  // run seed, or "mean" for an across-seed row

  bool operator==(const ReportRow&) const = default;
};

/// Mean of `xs`, leaving out the first (cold) value when there are others.
inline double warm_mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  const std::size_t skip = xs.size() > 1 ? 1 : 0;
  return std::accumulate(xs.begin() + static_cast<long>(skip), xs.end(), 0.0) /
         static_cast<double>(xs.size() - skip);
}

/// One row per (method, noise kind, SNR, seed), in sorted key order.
/// Records keep processing order so the first of each group is the cold one.
inline std::vector<ReportRow> aggregate(const std::vector<UtteranceRecord>& records) {
  using Key = std::tuple<std::string, std::string, double, std::uint64_t>;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : records) {
    auto& g = groups[{r.method, r.noise_kind, r.snr_db, r.seed}];
    g.first.push_back(r.wer.wer);
    g.second.push_back(r.timings.total());
  }
  std::vector<ReportRow> rows;
  for (const auto& [k, g] : groups) {
    ReportRow row;
    std::uint64_t seed = 0;
    std::tie(row.method, row.noise_kind, row.snr_db, seed) = k;
    row.seed = std::to_string(seed);
    row.n = g.first.size();
    row.mean_wer = std::accumulate(g.first.begin(), g.first.end(), 0.0) / static_cast<double>(row.n);
    row.mean_latency_s = warm_mean(g.second);
    rows.push_back(row);
  }
  return rows;
}

/// Per-seed rows followed by one "mean" row per (method, noise kind, SNR)
/// averaging mean_wer and mean_latency_s over seeds; n sums the utterances.
/// Existing "mean" rows in the input are dropped and recomputed.
inline std::vector<ReportRow> with_seed_means(const std::vector<ReportRow>& rows) {
  std::vector<ReportRow> out;
  for (const auto& r : rows)
    if (r.seed != "mean") out.push_back(r);
  auto key = [](const ReportRow& r) { return std::tie(r.method, r.noise_kind, r.snr_db, r.seed); };
  std::sort(out.begin(), out.end(), [&](const ReportRow& a, const ReportRow& b) { return key(a) < key(b); });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  using Group = std::tuple<std::string, std::string, double>;
  std::map<Group, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < out.size(); ++i) groups[{out[i].method, out[i].noise_kind, out[i].snr_db}].push_back(i);
  for (const auto& [k, idx] : groups) {
    ReportRow m;
    std::tie(m.method, m.noise_kind, m.snr_db) = k;
    m.seed = "mean";
    for (auto i : idx) {
      m.mean_wer += out[i].mean_wer;
      m.mean_latency_s += out[i].mean_latency_s;
      m.n += out[i].n;
    }
    m.mean_wer /= static_cast<double>(idx.size());
    m.mean_latency_s /= static_cast<double>(idx.size());
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confidence subsets

struct SubsetRow {
  std::string method;
  double full_wer = 0.0;
  double subset_wer = 0.0;
  std::size_t full_n = 0;
  std::size_t subset_n = 0;
};

struct SubsetReport {
  std::size_t k = 0;
  std::vector<std::string> ids;  // selected utterances, most confident first
  std::vector<SubsetRow> rows;   // one per method, in first-appearance order
};

/// Top-k utterances by unadapted-model confidence (ties broken by id);
/// every method's mean WER on that subset and on all records. All methods
/// must cover the same utterance ids.
inline SubsetReport confidence_subset(const std::vector<UtteranceRecord>& records, std::size_t k) {
  std::vector<std::string> methods;
  std::map<std::string, double> conf;
  for (const auto& r : records) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    conf.emplace(r.id, r.confidence);
  }
  if (k > conf.size())
    throw InputError("confidence_subset: k = " + std::to_string(k) + " exceeds " + std::to_string(conf.size()) +
                     " utterances");
  std::vector<std::pair<std::string, double>> ranked(conf.begin(), conf.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  SubsetReport rep;
  rep.k = k;
  for (std::size_t i = 0; i < k; ++i) rep.ids.push_back(ranked[i].first);
  const std::set<std::string> chosen(rep.ids.begin(), rep.ids.end());
  for (const auto& m : methods) {
    SubsetRow row;
    row.method = m;
    double full = 0.0, sub = 0.0;
    for (const auto& r : records) {
      if (r.method != m) continue;
      full += r.wer.wer;
      ++row.full_n;
      if (chosen.count(r.id)) {
        sub += r.wer.wer;
        ++row.subset_n;
      }
    }
    row.full_wer = row.full_n ? full / static_cast<double>(row.full_n) : 0.0;
    row.subset_wer = row.subset_n ? sub / static_cast<double>(row.subset_n) : 0.0;
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Latency

struct PhaseStats {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
};

struct LatencyStats {
  PhaseStats decode, sample, reward, update, total;
  std::size_t n = 0;  // episodes aggregated (after the warm-up exclusion)
};

inline PhaseStats phase_stats(std::vector<double> xs) {
  PhaseStats s;
  if (xs.empty()) return s;
  std::sort(xs.begin(), xs.end());
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  const std::size_t n = xs.size();
  s.median = n % 2 ? xs[n / 2] : (xs[n / 2 - 1] + xs[n / 2]) / 2.0;
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95 = xs[std::max<std::size_t>(rank, 1) - 1];
  return s;
}

/// Per-phase wall-clock statistics; the first episode is treated as warm-up
/// and excluded when more than one is given.
inline LatencyStats latency_stats(const std::vector<tta::Timings>& timings) {
  if (timings.empty()) throw InputError("latency_stats: no episodes");
  const std::size_t skip = timings.size() > 1 ? 1 : 0;
  std::vector<double> d, s, r, u, t;
  for (std::size_t i = skip; i < timings.size(); ++i) {
    d.push_back(timings[i].decode);
    s.push_back(timings[i].sample);
    r.push_back(timings[i].reward);
    u.push_back(timings[i].update);
    t.push_back(timings[i].total());
  }
  return {phase_stats(d), phase_stats(s), phase_stats(r), phase_stats(u), phase_stats(t), t.size()};
}

// ---------------------------------------------------------------------------
// Report files

inline constexpr std::string_view kCsvHeader = "method,noise_kind,snr_db,mean_wer,mean_latency_s,n,seed";

inline std::string format_number(double x) { return fmt::format("{:.17g}", x); }

inline std::string to_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{},{},{}\n", r.method, r.noise_kind, format_number(r.snr_db),
                       format_number(r.mean_wer), format_number(r.mean_latency_s), r.n, r.seed);
  return out;
}

inline std::vector<ReportRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw FileError("report CSV: unexpected header '" + line + "'");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw FileError("report CSV: expected 7 fields in '" + line + "'");
    ReportRow r;
    r.method = f[0];
    r.noise_kind = f[1];
    r.snr_db = std::stod(f[2]);
    r.mean_wer = std::stod(f[3]);
    r.mean_latency_s = std::stod(f[4]);
    r.n = std::stoull(f[5]);
    r.seed = f[6];
    rows.push_back(r);
  }
  return rows;
}

/// Gnuplot-ready table: one block per method separated by blank lines.
inline std::string to_tsv(const std::vector<ReportRow>& rows) {
  std::string out = "# method\tnoise_kind\tsnr_db\tmean_wer\tn\tseed\n";
  std::string last;
  for (const auto& r : rows) {
    if (!last.empty() && r.method != last) out += "\n\n";
    last = r.method;
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\n", r.method, r.noise_kind, format_number(r.snr_db),
                       format_number(r.mean_wer), r.n, r.seed);
  }
  return out;
}

inline nlohmann::ordered_json to_json(const UtteranceRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["method"] = r.method;
  j["noise_kind"] = r.noise_kind;
  j["snr_db"] = r.snr_db;
  j["seed"] = r.seed;
  j["reference"] = r.reference;
  j["hypothesis"] = r.hypothesis;
  j["wer"] = r.wer.wer;
  j["substitutions"] = r.wer.substitutions;
  j["insertions"] = r.wer.insertions;
  j["deletions"] = r.wer.deletions;
  j["ref_units"] = r.wer.ref_words;
  j["confidence"] = r.confidence;
  j["reward"] = r.reward;
  j["latency_s"] = r.timings.total();
  return j;
}

inline nlohmann::ordered_json to_json(const ReportRow& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["noise_kind"] = r.noise_kind;
  j["snr_db"] = r.snr_db;
  j["mean_wer"] = r.mean_wer;
  j["mean_latency_s"] = r.mean_latency_s;
  j["n"] = r.n;
  j["seed"] = r.seed;
  return j;
}

inline nlohmann::ordered_json to_json(const SubsetReport& s) {
  nlohmann::ordered_json j;
  j["k"] = s.k;
  j["confidence"] = "mean token log-prob of the unadapted greedy decode";
  j["ids"] = s.ids;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : s.rows)
    j["rows"].push_back({{"method", r.method},
                         {"full_wer", r.full_wer},
                         {"subset_wer", r.subset_wer},
                         {"full_n", r.full_n},
                         {"subset_n", r.subset_n}});
  return j;
}

inline nlohmann::ordered_json to_json(const PhaseStats& p) {
  return {{"mean", p.mean}, {"median", p.median}, {"p95", p.p95}};
}

inline nlohmann::ordered_json to_json(const LatencyStats& l) {
  return {{"n", l.n},
          {"decode", to_json(l.decode)},
          {"sample", to_json(l.sample)},
          {"reward", to_json(l.reward)},
          {"update", to_json(l.update)},
          {"total", to_json(l.total)}};
}

/// Full report: rows, per-utterance detail, and optional analysis blocks.
struct RunReport {
  std::vector<ReportRow> rows;
  std::vector<UtteranceRecord> records;
  std::optional<SubsetReport> subset;
  std::optional<double> reward_wer_spearman;
  std::string unit = "chars";

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["wer_unit"] = unit;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) j["rows"].push_back(eval::to_json(r));
    if (subset) j["confidence_subset"] = eval::to_json(*subset);
    if (reward_wer_spearman) j["reward_wer_spearman"] = *reward_wer_spearman;
    j["records"] = nlohmann::ordered_json::array();
    for (const auto& r : records) j["records"].push_back(eval::to_json(r));
    return j;
  }
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path);
  out << text;
  if (!out) throw FileError("short write to " + path);
}

/// Writes `<stem>.csv`, `<stem>.json` and `<stem>.tsv`.
inline void emit_report(const RunReport& report, const std::string& stem) {
  write_text(stem + ".csv", to_csv(report.rows));
  write_text(stem + ".json", report.to_json().dump(2) + "\n");
  write_text(stem + ".tsv", to_tsv(report.rows));
}

}  // namespace asrtra::eval
