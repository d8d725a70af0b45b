#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "imt/tokenizer.hpp"

namespace imt::testing {

using tok::Merge;

// Naive BPE: every word occurrence is kept separately and pairs are
// counted by scanning all occurrences; the winner is found by sorting.
inline std::vector<Merge> oracle_merges(const std::vector<std::string>& words, std::size_t num_merges) {
  std::vector<std::vector<std::string>> seqs;
  for (const auto& w : words) {
    std::vector<std::string> s;
    for (char c : w) s.emplace_back(1, c);
    s.back() += "</w>";
    seqs.push_back(s);
  }
  std::vector<Merge> trace;
  for (std::size_t step = 0; step < num_merges; ++step) {
    std::vector<std::pair<Merge, int>> counts;
    for (const auto& s : seqs) {
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        Merge p{s[i], s[i + 1]};
        auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& c) { return c.first == p; });
        if (it == counts.end()) counts.emplace_back(p, 1);
        else ++it->second;
      }
    }
    if (counts.empty()) break;
    std::sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    const Merge best = counts.front().first;
    trace.push_back(best);
    for (auto& s : seqs) {
      std::vector<std::string> out;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == best.first && s[i + 1] == best.second) {
          out.push_back(best.first + best.second);
          ++i;
        } else {
          out.push_back(s[i]);
        }
      }
      s = out;
    }
  }
  return trace;
}

}  // namespace imt::testing
