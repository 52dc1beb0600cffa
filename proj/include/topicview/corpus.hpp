#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <json.hpp>

#include "topicview/error.hpp"
#include "topicview/hash.hpp"

namespace topicview {

enum class Speaker { patient, therapist };

inline std::string_view to_string(Speaker s) {
  return s == Speaker::patient ? "patient" : "therapist";
}

inline std::optional<Speaker> parse_speaker(std::string_view s) {
  if (s == "patient") return Speaker::patient;
  if (s == "therapist") return Speaker::therapist;
  return std::nullopt;
}

struct Turn {
  std::string session_id;
  std::size_t turn_index = 0;
  Speaker speaker = Speaker::patient;
  std::string text;
  std::optional<double> timestamp;  // seconds from session start

  bool operator==(const Turn&) const = default;
};

struct Session {
  std::string session_id;
  std::optional<std::string> condition_tag;
  std::vector<Turn> turns;

  bool operator==(const Session&) const = default;
};

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

inline bool is_token_char(UChar32 c) {
  if (u_isalnum(c)) return true;
  // Keep combining marks attached so decomposed accents stay in-word.
  const auto type = u_charType(c);
  return type == U_NON_SPACING_MARK || type == U_COMBINING_SPACING_MARK;
}

}  // namespace detail

// Lowercases, splits on anything that is not a letter, digit or combining
// mark, and drops tokens of a single code point. Digits are ordinary token
// characters, so "10" survives. Malformed UTF-8 bytes act as separators.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t current_cps = 0;
  auto flush = [&] {
    if (current_cps >= 2) tokens.push_back(current);
    current.clear();
    current_cps = 0;
  };

  const auto* bytes = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto length = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    if (c < 0 || !detail::is_token_char(c)) {
      flush();
      continue;
    }
    c = u_tolower(c);
    char buf[U8_MAX_LENGTH];
    std::int32_t n = 0;
    U8_APPEND_UNSAFE(buf, n, c);
    current.append(buf, static_cast<std::size_t>(n));
    ++current_cps;
  }
  flush();
  return tokens;
}

// ---------------------------------------------------------------------------
// Vocabulary

struct VocabConfig {
  std::int64_t min_count = 3;
  double max_doc_ratio = 0.3;
  std::vector<std::string> stopwords;  // empty by default; filler words stay
};

struct VocabEntry {
  std::string token;
  std::int64_t count = 0;
  std::int64_t doc_frequency = 0;
};

class Vocabulary {
 public:
  Vocabulary() = default;

  // Entries must already be in id order.
  Vocabulary(std::vector<VocabEntry> entries, std::int64_t total_docs,
             std::int64_t min_count, double max_doc_ratio)
      : total_docs_(total_docs), min_count_(min_count), max_doc_ratio_(max_doc_ratio) {
    tokens_.reserve(entries.size());
    counts_.reserve(entries.size());
    doc_freq_.reserve(entries.size());
    for (auto& e : entries) {
      const auto id = static_cast<std::int32_t>(tokens_.size());
      if (!ids_.emplace(e.token, id).second)
        throw InvariantError("duplicate vocabulary token '" + e.token + "'");
      tokens_.push_back(std::move(e.token));
      counts_.push_back(e.count);
      doc_freq_.push_back(e.doc_frequency);
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }

  std::optional<std::int32_t> id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::int64_t count(std::int32_t id) const { return counts_.at(static_cast<std::size_t>(id)); }
  std::int64_t doc_frequency(std::int32_t id) const { return doc_freq_.at(static_cast<std::size_t>(id)); }

  std::span<const std::string> tokens() const noexcept { return tokens_; }
  std::span<const std::int64_t> counts() const noexcept { return counts_; }
  std::int64_t total_docs() const noexcept { return total_docs_; }
  std::int64_t min_count() const noexcept { return min_count_; }
  double max_doc_ratio() const noexcept { return max_doc_ratio_; }

  std::string hash() const { return token_list_hash(tokens_); }

 private:
  std::unordered_map<std::string, std::int32_t> ids_;
  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::vector<std::int64_t> doc_freq_;
  std::int64_t total_docs_ = 0;
  std::int64_t min_count_ = 1;
  double max_doc_ratio_ = 1.0;
};

// Keeps tokens with corpus count >= min_count and document ratio
// <= max_doc_ratio. Ids go by descending count, ties lexicographic.
inline Vocabulary build_vocabulary(std::span<const std::vector<std::string>> documents,
                                   const VocabConfig& config = {}) {
  if (documents.empty()) throw ConfigError("build_vocabulary: no documents");
  if (config.min_count < 1) throw ConfigError("build_vocabulary: min_count must be >= 1");
  if (!(config.max_doc_ratio > 0.0 && config.max_doc_ratio <= 1.0))
    throw ConfigError("build_vocabulary: max_doc_ratio must be in (0, 1]");

  std::unordered_map<std::string, VocabEntry> stats;
  for (const auto& doc : documents) {
    std::unordered_set<std::string_view> seen;
    for (const auto& tok : doc) {
      auto& e = stats[tok];
      ++e.count;
      if (seen.insert(tok).second) ++e.doc_frequency;
    }
  }

  const std::unordered_set<std::string> stop(config.stopwords.begin(), config.stopwords.end());
  const auto total = static_cast<std::int64_t>(documents.size());
  std::vector<VocabEntry> kept;
  for (auto& [token, e] : stats) {
    if (e.count < config.min_count) continue;
    if (static_cast<double>(e.doc_frequency) / static_cast<double>(total) > config.max_doc_ratio)
      continue;
    if (stop.contains(token)) continue;
    e.token = token;
    kept.push_back(std::move(e));
  }
  if (kept.empty()) throw AllTokensFiltered("every token was removed by the vocabulary filters");

  std::sort(kept.begin(), kept.end(), [](const VocabEntry& a, const VocabEntry& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.token < b.token;
  });
  return Vocabulary(std::move(kept), total, config.min_count, config.max_doc_ratio);
}

// Line 1: "V total_docs"; then "token count doc_frequency" in id order.
inline void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << vocab.size() << ' ' << vocab.total_docs() << '\n';
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto id = static_cast<std::int32_t>(i);
    out << vocab.token(id) << ' ' << vocab.count(id) << ' ' << vocab.doc_frequency(id) << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

// The file does not record the filter thresholds; the caller supplies the
// ones it was built with.
inline Vocabulary load_vocabulary(const std::filesystem::path& path, const VocabConfig& filters = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocabulary file " + path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("missing header", lineno);
  std::size_t declared = 0;
  std::int64_t total_docs = 0;
  {
    std::istringstream hs(line);
    std::string extra;
    if (!(hs >> declared >> total_docs) || (hs >> extra))
      throw ParseError("header must be 'V total_docs'", lineno);
  }
  std::vector<VocabEntry> entries;
  entries.reserve(declared);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    VocabEntry e;
    std::string extra;
    if (!(ls >> e.token >> e.count >> e.doc_frequency) || (ls >> extra))
      throw ParseError("expected 'token count doc_frequency'", lineno);
    entries.push_back(std::move(e));
  }
  if (entries.size() != declared)
    throw ParseError("header declares " + std::to_string(declared) + " tokens, found " +
                     std::to_string(entries.size()));
  try {
    return Vocabulary(std::move(entries), total_docs, filters.min_count, filters.max_doc_ratio);
  } catch (const InvariantError& e) {
    throw ParseError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Bag of words

struct BowVector {
  std::vector<std::pair<std::int32_t, std::int32_t>> entries;  // (token_id, count), ids ascending

  std::int64_t total() const noexcept {
    std::int64_t n = 0;
    for (const auto& [id, c] : entries) n += c;
    return n;
  }
  bool operator==(const BowVector&) const = default;
};

inline BowVector to_bow(std::span<const std::string> document, const Vocabulary& vocab) {
  std::map<std::int32_t, std::int32_t> counts;
  for (const auto& tok : document)
    if (auto id = vocab.id(tok)) ++counts[*id];
  BowVector bow;
  bow.entries.assign(counts.begin(), counts.end());
  return bow;
}

inline std::vector<std::int32_t> to_ids(std::span<const std::string> document, const Vocabulary& vocab) {
  std::vector<std::int32_t> ids;
  ids.reserve(document.size());
  for (const auto& tok : document)
    if (auto id = vocab.id(tok)) ids.push_back(*id);
  return ids;
}

// ---------------------------------------------------------------------------
// Training documents

enum class DocumentUnit { session, turn };

struct Document {
  std::string session_id;
  std::optional<std::size_t> turn_index;  // set for per-turn documents
  std::vector<std::string> tokens;
};

inline std::vector<Document> make_documents(std::span<const Session> sessions, DocumentUnit unit) {
  std::vector<Document> docs;
  for (const auto& s : sessions) {
    if (unit == DocumentUnit::session) {
      Document d{s.session_id, std::nullopt, {}};
      for (const auto& t : s.turns) {
        auto toks = tokenize(t.text);
        d.tokens.insert(d.tokens.end(), std::make_move_iterator(toks.begin()),
                        std::make_move_iterator(toks.end()));
      }
      docs.push_back(std::move(d));
    } else {
      for (const auto& t : s.turns) docs.push_back({s.session_id, t.turn_index, tokenize(t.text)});
    }
  }
  return docs;
}

inline std::vector<std::vector<std::string>> token_lists(std::span<const Document> docs) {
  std::vector<std::vector<std::string>> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(d.tokens);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL transcripts
//
// One turn per line:
//   {"session_id": str, "turn_index": int, "speaker": "patient"|"therapist",
//    "text": str, "timestamp": number?, "condition": str?}

namespace detail {

class TranscriptReader {
 public:
  void read(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      add(parse_line(line, lineno, source), lineno, source);
    }
  }

  std::vector<Session> finish() {
    for (auto& s : sessions_) {
      std::sort(s.turns.begin(), s.turns.end(),
                [](const Turn& a, const Turn& b) { return a.turn_index < b.turn_index; });
      for (std::size_t i = 0; i < s.turns.size(); ++i) {
        if (s.turns[i].turn_index == i) continue;
        if (s.turns[i].turn_index < i)
          throw InvariantError("session '" + s.session_id + "': duplicate turn_index " +
                               std::to_string(s.turns[i].turn_index));
        throw InvariantError("session '" + s.session_id + "': missing turn_index " +
                             std::to_string(i));
      }
    }
    return std::move(sessions_);
  }

 private:
  struct Parsed {
    Turn turn;
    std::optional<std::string> condition;
  };

  static Parsed parse_line(const std::string& line, std::size_t lineno, const std::string& source) {
    auto fail = [&](const std::string& msg) -> ParseError {
      return ParseError(source.empty() ? msg : source + ": " + msg, lineno);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw fail("expected a JSON object");
    Parsed p;
    auto sid = j.find("session_id");
    if (sid == j.end() || !sid->is_string()) throw fail("'session_id' must be a string");
    p.turn.session_id = sid->get<std::string>();
    auto idx = j.find("turn_index");
    if (idx == j.end() || !(idx->is_number_unsigned() || (idx->is_number_integer() && idx->get<std::int64_t>() >= 0)))
      throw fail("'turn_index' must be a non-negative integer");
    p.turn.turn_index = idx->get<std::size_t>();
    auto spk = j.find("speaker");
    if (spk == j.end() || !spk->is_string()) throw fail("'speaker' must be a string");
    auto speaker = parse_speaker(spk->get<std::string>());
    if (!speaker) throw fail("'speaker' must be \"patient\" or \"therapist\"");
    p.turn.speaker = *speaker;
    auto text = j.find("text");
    if (text == j.end() || !text->is_string()) throw fail("'text' must be a string");
    p.turn.text = text->get<std::string>();
    if (auto ts = j.find("timestamp"); ts != j.end() && !ts->is_null()) {
      if (!ts->is_number()) throw fail("'timestamp' must be a number");
      p.turn.timestamp = ts->get<double>();
    }
    if (auto c = j.find("condition"); c != j.end() && !c->is_null()) {
      if (!c->is_string()) throw fail("'condition' must be a string");
      p.condition = c->get<std::string>();
    }
    return p;
  }

  void add(Parsed p, std::size_t lineno, const std::string& source) {
    auto [it, inserted] = index_.emplace(p.turn.session_id, sessions_.size());
    if (inserted) sessions_.push_back({p.turn.session_id, p.condition, {}});
    auto& s = sessions_[it->second];
    if (p.condition) {
      if (s.condition_tag && *s.condition_tag != *p.condition)
        throw ParseError(source + ": conflicting condition for session '" + s.session_id + "'", lineno);
      s.condition_tag = p.condition;
    }
    s.turns.push_back(std::move(p.turn));
  }

  std::vector<Session> sessions_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace detail

// Sessions come back in order of first appearance, turns sorted by index.
inline std::vector<Session> load_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open transcript file " + path.string());
  detail::TranscriptReader reader;
  reader.read(in, path.filename().string());
  return reader.finish();
}

inline std::vector<Session> parse_transcripts(std::string_view jsonl) {
  std::istringstream in{std::string(jsonl)};
  detail::TranscriptReader reader;
  reader.read(in, "");
  return reader.finish();
}

// Every *.jsonl file in the directory, in filename order.
inline std::vector<Session> load_transcript_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  detail::TranscriptReader reader;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw ParseError("cannot open transcript file " + f.string());
    reader.read(in, f.filename().string());
  }
  return reader.finish();
}

inline nlohmann::json turn_to_json(const Turn& t, const std::optional<std::string>& condition = std::nullopt) {
  nlohmann::json j{{"session_id", t.session_id},
                   {"turn_index", t.turn_index},
                   {"speaker", to_string(t.speaker)},
                   {"text", t.text}};
  if (t.timestamp) j["timestamp"] = *t.timestamp;
  if (condition) j["condition"] = *condition;
  return j;
}

inline void write_transcripts(std::span<const Session> sessions, std::ostream& out) {
  for (const auto& s : sessions)
    for (const auto& t : s.turns) out << turn_to_json(t, s.condition_tag).dump() << '\n';
}

inline void save_transcripts(std::span<const Session> sessions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_transcripts(sessions, out);
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace topicview
