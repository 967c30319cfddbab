#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

namespace asrtra::testing {

/// Every string over `alphabet` of length 0..max_len, shortest first.
inline std::vector<std::string> all_strings(const std::string& alphabet, std::size_t max_len) {
  std::vector<std::string> out{""};
  std::size_t begin = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i)
      for (char c : alphabet) out.push_back(out[i] + c);
    begin = end;
  }
  return out;
}

/// Graph whose nodes are all strings up to `max_len` and whose edges are
/// single insertions, deletions and substitutions. Breadth-first distances
/// on it are exhaustive minimum edit costs: some optimal edit sequence never
/// leaves the length range spanned by its endpoints.
class EditGraph {
 public:
  EditGraph(const std::string& alphabet, std::size_t max_len) : strings_(all_strings(alphabet, max_len)) {
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < strings_.size(); ++i) index.emplace(strings_[i], static_cast<int>(i));
    adj_.resize(strings_.size());
    for (std::size_t i = 0; i < strings_.size(); ++i) {
      const auto& s = strings_[i];
      auto link = [&](const std::string& t) { adj_[i].push_back(index.at(t)); };
      for (std::size_t p = 0; p < s.size(); ++p) link(s.substr(0, p) + s.substr(p + 1));
      for (std::size_t p = 0; p < s.size(); ++p)
        for (char c : alphabet)
          if (c != s[p]) {
            std::string t = s;
            t[p] = c;
            link(t);
          }
      if (s.size() < max_len)
        for (std::size_t p = 0; p <= s.size(); ++p)
          for (char c : alphabet) link(s.substr(0, p) + c + s.substr(p));
    }
  }

  const std::vector<std::string>& strings() const { return strings_; }

  /// Edit distance from node `source` to every node.
  std::vector<int> distances_from(std::size_t source) const {
    std::vector<int> dist(strings_.size(), -1);
    std::deque<int> queue{static_cast<int>(source)};
    dist[source] = 0;
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (int v : adj_[static_cast<std::size_t>(u)])
        if (dist[static_cast<std::size_t>(v)] < 0) {
          dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
          queue.push_back(v);
        }
    }
    return dist;
  }

 private:
  std::vector<std::string> strings_;
  std::vector<std::vector<int>> adj_;
};

}  // namespace asrtra::testing
