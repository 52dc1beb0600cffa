#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "topicview/error.hpp"
#include "topicview/etm.hpp"

namespace topicview {

using TopWords = std::vector<std::vector<std::string>>;
using ReferenceDoc = std::unordered_set<std::string>;

struct CoherenceScore {
  double value = 0.0;
  std::size_t zero_df_pairs = 0;  // pairs whose conditioning word never occurs
};

namespace detail {

inline void require_top_words(const TopWords& top, std::size_t n, const char* what) {
  if (top.empty()) throw InsufficientTopWords(std::string(what) + ": no topics");
  for (std::size_t k = 0; k < top.size(); ++k)
    if (top[k].size() < n)
      throw InsufficientTopWords(std::string(what) + ": topic " + std::to_string(k) + " has " +
                                 std::to_string(top[k].size()) + " words, need " + std::to_string(n));
}

}  // namespace detail

// Mean over topics of (2 / (n(n-1))) sum_{i<j} log((D(w_i, w_j) + 1) / D(w_j)),
// with D counting reference documents. D(w_j) = 0 is replaced by 1 and tallied.
inline CoherenceScore topic_coherence(const TopWords& top, std::span<const ReferenceDoc> docs, std::size_t n = 10) {
  if (n < 2) throw InsufficientTopWords("coherence needs n >= 2");
  detail::require_top_words(top, n, "coherence");
  if (docs.empty()) throw InvariantError("coherence: no reference documents");

  // Posting lists (ascending doc ids) for just the words we need.
  std::unordered_map<std::string, std::vector<std::size_t>> postings;
  for (const auto& words : top)
    for (std::size_t i = 0; i < n; ++i) postings.try_emplace(words[i]);
  for (std::size_t d = 0; d < docs.size(); ++d)
    for (auto& [w, list] : postings)
      if (docs[d].contains(w)) list.push_back(d);

  auto co_count = [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::size_t i = 0, j = 0, c = 0;
    while (i < a.size() && j < b.size()) {
      if (a[i] < b[j]) ++i;
      else if (b[j] < a[i]) ++j;
      else { ++c; ++i; ++j; }
    }
    return c;
  };

  CoherenceScore out;
  const double norm = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  for (const auto& words : top) {
    double topic_sum = 0.0;
    for (std::size_t j = 1; j < n; ++j) {
      const auto& pj = postings[words[j]];
      double dj = static_cast<double>(pj.size());
      if (pj.empty()) {
        dj = 1.0;
        out.zero_df_pairs += j;  // every i < j pairs with this w_j
      }
      for (std::size_t i = 0; i < j; ++i) {
        const auto co = static_cast<double>(co_count(postings[words[i]], pj));
        topic_sum += std::log((co + 1.0) / dj);
      }
    }
    out.value += norm * topic_sum;
  }
  out.value /= static_cast<double>(top.size());
  return out;
}

// |unique words over the K top-n lists| / (n K).
inline double topic_diversity(const TopWords& top, std::size_t n = 25) {
  if (n < 1) throw InsufficientTopWords("diversity needs n >= 1");
  detail::require_top_words(top, n, "diversity");
  std::unordered_set<std::string> unique;
  for (const auto& words : top) unique.insert(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(n));
  return static_cast<double>(unique.size()) / static_cast<double>(n * top.size());
}

struct EvalOptions {
  std::string model_name = "ETM";
  std::string condition = "all";
  std::size_t n_coherence = 10;
  std::size_t n_diversity = 25;
};

struct EvalReport {
  std::string model_name;
  std::string condition_tag;
  double coherence = 0.0;
  double diversity = 0.0;
  std::size_t top_n_coherence = 10;
  std::size_t top_n_diversity = 25;
  std::size_t reference_doc_count = 0;
  std::size_t zero_df_pairs = 0;

  bool operator==(const EvalReport&) const = default;
};

inline std::vector<ReferenceDoc> reference_docs(std::span<const std::vector<std::string>> token_lists) {
  std::vector<ReferenceDoc> out;
  out.reserve(token_lists.size());
  for (const auto& t : token_lists) out.emplace_back(t.begin(), t.end());
  return out;
}

inline EvalReport evaluate(const TopicModel& model, std::span<const ReferenceDoc> docs, const EvalOptions& opt = {}) {
  const auto top = top_words(model, std::max(opt.n_coherence, opt.n_diversity));
  const auto coh = topic_coherence(top, docs, opt.n_coherence);
  return {opt.model_name,         opt.condition,   coh.value,   topic_diversity(top, opt.n_diversity),
          opt.n_coherence,        opt.n_diversity, docs.size(), coh.zero_df_pairs};
}

inline void write_eval_csv(std::span<const EvalReport> reports, std::ostream& out) {
  out << "model,condition,coherence,diversity,n_coh,n_div,docs\n";
  char buf[64];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.coherence, r.diversity);
    out << r.model_name << ',' << r.condition_tag << ',' << buf << ',' << r.top_n_coherence << ','
        << r.top_n_diversity << ',' << r.reference_doc_count << '\n';
  }
}

// One row per model, a TC/TD column pair per condition.
inline void write_eval_table(std::span<const EvalReport> reports, std::ostream& out) {
  std::vector<std::string> models, conditions;
  auto add_unique = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& r : reports) {
    add_unique(models, r.model_name);
    add_unique(conditions, r.condition_tag);
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-10s", "");
  out << buf;
  for (const auto& c : conditions) {
    std::snprintf(buf, sizeof buf, " | %-21s", c.c_str());
    out << buf;
  }
  out << " |\n";
  std::snprintf(buf, sizeof buf, "%-10s", "");
  out << buf;
  for (std::size_t i = 0; i < conditions.size(); ++i) out << " | TC         TD        ";
  out << " |\n";
  for (const auto& m : models) {
    std::snprintf(buf, sizeof buf, "%-10s", m.c_str());
    out << buf;
    for (const auto& c : conditions) {
      auto it = std::find_if(reports.begin(), reports.end(),
                             [&](const EvalReport& r) { return r.model_name == m && r.condition_tag == c; });
      if (it == reports.end())
        std::snprintf(buf, sizeof buf, " | %-21s", "-");
      else
        std::snprintf(buf, sizeof buf, " | %-10.3f %-10.3f", it->coherence, it->diversity);
      out << buf;
    }
    out << " |\n";
  }
}

}  // namespace topicview
