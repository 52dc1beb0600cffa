#pragma once

#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>

#include <toml.hpp>

#include "topicview/corpus.hpp"
#include "topicview/embeddings.hpp"
#include "topicview/error.hpp"
#include "topicview/etm.hpp"
#include "topicview/imagegen.hpp"

namespace topicview {

struct ImageGenConfig {
  std::string backend = "mock";  // "mock" | "http"
  std::size_t max_chars = kMaxPromptChars;
  std::size_t max_in_flight = 2;
  std::string reject_token = "REJECTME";  // mock only
  std::string url;                        // http; IMAGEGEN_URL overrides
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path static_dir;  // built dashboard bundle, optional
  std::size_t threads = 8;
};

// Layout under data_dir:
//   transcripts/*.jsonl            ingested sessions
//   artifacts/vocab.txt            vocabulary
//   artifacts/embeddings.txt       word vectors
//   artifacts/<model_file>         topic model
//   <session_id>/images/           generated PNGs + outcomes.json
struct AppConfig {
  std::filesystem::path data_dir = "data";
  VocabConfig vocab;
  DocumentUnit document_unit = DocumentUnit::session;
  SgnsConfig sgns;
  EtmConfig etm;
  std::string etm_condition;  // empty: universal model over every session
  std::string model_file = "model.json";
  std::size_t topic_words = 10;  // words per topic embedding when scoring
  ImageGenConfig imagegen;
  ServerConfig server;

  std::filesystem::path transcripts_dir() const { return data_dir / "transcripts"; }
  std::filesystem::path artifacts_dir() const { return data_dir / "artifacts"; }
  std::filesystem::path vocab_path() const { return artifacts_dir() / "vocab.txt"; }
  std::filesystem::path embeddings_path() const { return artifacts_dir() / "embeddings.txt"; }
  std::filesystem::path model_path() const { return artifacts_dir() / model_file; }
  std::filesystem::path media_dir(const std::string& session_id) const { return data_dir / session_id / "images"; }
};

namespace detail {

class TomlSection {
 public:
  TomlSection(const toml::table& root, std::string name) : name_(std::move(name)) {
    if (auto node = root.get(name_)) {
      table_ = node->as_table();
      if (!table_) throw ConfigError("[" + name_ + "] must be a table");
    }
  }

  // Rejects keys that were never read.
  void done() const {
    if (!table_) return;
    for (const auto& [key, value] : *table_)
      if (!seen_.contains(std::string(key.str())))
        throw ConfigError("unknown key '" + std::string(key.str()) + "' in [" + name_ + "]");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!table_) return;
    auto node = table_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value<bool>();
      if (!v) fail(key, "a boolean");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = node->value<std::string>();
      if (!v) fail(key, "a string");
      out = *v;
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v) fail(key, "a number");
      out = *v;
    } else {
      auto v = node->value<std::int64_t>();
      if (!v || *v < 0) fail(key, "a non-negative integer");
      out = static_cast<T>(*v);
    }
  }

  void read(const char* key, std::vector<std::string>& out) {
    seen_.insert(key);
    if (!table_) return;
    auto node = table_->get(key);
    if (!node) return;
    auto arr = node->as_array();
    if (!arr) fail(key, "an array of strings");
    out.clear();
    for (const auto& el : *arr) {
      auto v = el.value<std::string>();
      if (!v) fail(key, "an array of strings");
      out.push_back(*v);
    }
  }

 private:
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError("[" + name_ + "] " + key + " must be " + what);
  }

  const toml::table* table_ = nullptr;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

// Relative paths in the file resolve against the file's directory.
inline AppConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir = ".") {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("config: ") + std::string(e.description()) + " at line " +
                      std::to_string(e.source().begin.line));
  }
  static const std::set<std::string> sections = {"corpus", "embeddings", "etm", "imagegen", "server"};
  for (const auto& [key, value] : root)
    if (!sections.contains(std::string(key.str())))
      throw ConfigError("unknown config section [" + std::string(key.str()) + "]");

  AppConfig c;
  std::string data_dir = c.data_dir.string(), unit = "session", static_dir;
  {
    detail::TomlSection s(root, "corpus");
    s.read("data_dir", data_dir);
    s.read("min_count", c.vocab.min_count);
    s.read("max_doc_ratio", c.vocab.max_doc_ratio);
    s.read("stopwords", c.vocab.stopwords);
    s.read("document_unit", unit);
    s.done();
  }
  {
    detail::TomlSection s(root, "embeddings");
    s.read("dim", c.sgns.dim);
    s.read("window", c.sgns.window);
    s.read("negatives", c.sgns.negatives);
    s.read("epochs", c.sgns.epochs);
    s.read("initial_lr", c.sgns.initial_lr);
    s.read("min_lr", c.sgns.min_lr);
    s.read("seed", c.sgns.seed);
    s.read("unigram_power", c.sgns.unigram_power);
    s.read("deterministic", c.sgns.deterministic);
    s.read("threads", c.sgns.threads);
    s.done();
  }
  {
    detail::TomlSection s(root, "etm");
    s.read("topics", c.etm.topics);
    s.read("epochs", c.etm.epochs);
    s.read("batch_size", c.etm.batch_size);
    s.read("lr", c.etm.lr);
    s.read("hidden", c.etm.hidden);
    s.read("seed", c.etm.seed);
    s.read("train_embeddings", c.etm.train_embeddings);
    s.read("condition", c.etm_condition);
    s.read("model_file", c.model_file);
    s.read("topic_words", c.topic_words);
    s.done();
  }
  {
    detail::TomlSection s(root, "imagegen");
    s.read("backend", c.imagegen.backend);
    s.read("max_chars", c.imagegen.max_chars);
    s.read("max_in_flight", c.imagegen.max_in_flight);
    s.read("reject_token", c.imagegen.reject_token);
    s.read("url", c.imagegen.url);
    s.done();
  }
  {
    detail::TomlSection s(root, "server");
    s.read("host", c.server.host);
    s.read("port", c.server.port);
    s.read("static_dir", static_dir);
    s.read("threads", c.server.threads);
    s.done();
  }

  if (unit == "session") c.document_unit = DocumentUnit::session;
  else if (unit == "turn") c.document_unit = DocumentUnit::turn;
  else throw ConfigError("[corpus] document_unit must be \"session\" or \"turn\"");
  if (c.imagegen.backend != "mock" && c.imagegen.backend != "http")
    throw ConfigError("[imagegen] backend must be \"mock\" or \"http\"");
  if (c.imagegen.max_chars < 1) throw ConfigError("[imagegen] max_chars must be >= 1");
  if (c.topic_words < 1) throw ConfigError("[etm] topic_words must be >= 1");
  c.sgns.validate();
  c.etm.validate();

  auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base_dir / p; };
  c.data_dir = resolve(data_dir);
  if (!static_dir.empty()) c.server.static_dir = resolve(static_dir);
  return c;
}

inline AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

inline std::unique_ptr<ImageBackend> make_image_backend(const ImageGenConfig& c) {
  if (c.backend == "mock") return std::make_unique<MockImageBackend>(c.reject_token);
  const char* env_url = std::getenv("IMAGEGEN_URL");
  const std::string url = env_url && *env_url ? env_url : c.url;
  if (url.empty()) throw ConfigError("http image backend needs IMAGEGEN_URL or [imagegen] url");
  const char* token = std::getenv("IMAGEGEN_TOKEN");
  return std::make_unique<HttpImageBackend>(url, token ? token : "");
}

}  // namespace topicview
