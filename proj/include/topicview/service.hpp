#pragma once

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "topicview/config.hpp"
#include "topicview/corpus.hpp"
#include "topicview/embeddings.hpp"
#include "topicview/error.hpp"
#include "topicview/etm.hpp"
#include "topicview/imagegen.hpp"
#include "topicview/temporal.hpp"

namespace topicview {

struct TopicSummary {
  std::size_t index = 0;
  std::vector<std::pair<std::string, double>> words;  // by weight, descending
};

inline std::vector<TopicSummary> topic_summaries(const TopicModel& model, std::size_t n = 10) {
  const auto ids = top_word_ids(model, std::min(n, model.vocab_size()));
  std::vector<TopicSummary> out;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    auto& t = out.emplace_back();
    t.index = k;
    for (auto id : ids[k])
      t.words.emplace_back(model.rho.tokens[static_cast<std::size_t>(id)], model.beta(static_cast<Eigen::Index>(k), id));
  }
  return out;
}

// One line per topic: "<k>\t<word>:<weight> <word>:<weight> ...".
inline void write_topics(std::span<const TopicSummary> topics, std::ostream& out) {
  char buf[32];
  for (const auto& t : topics) {
    out << t.index << '\t';
    for (std::size_t i = 0; i < t.words.size(); ++i) {
      std::snprintf(buf, sizeof buf, ":%.6f", t.words[i].second);
      out << (i ? " " : "") << t.words[i].first << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Application state: an immutable (vocabulary, embeddings, model) snapshot,
// the session store, a lazily filled score cache and the image store.

class AppState {
 public:
  explicit AppState(AppConfig config) : config_(std::move(config)) {
    if (!std::filesystem::is_directory(config_.transcripts_dir()))
      throw ConfigError("transcript directory does not exist: " + config_.transcripts_dir().string());
    for (const auto& p : {config_.vocab_path(), config_.embeddings_path(), config_.model_path()})
      if (!std::filesystem::is_regular_file(p)) throw ConfigError("missing artifact: " + p.string());

    vocab_ = load_vocabulary(config_.vocab_path(), config_.vocab);
    embeddings_ = load_embeddings(config_.embeddings_path());
    if (vocab_.hash() != embeddings_.vocab_hash())
      throw ArtifactMismatch("embeddings " + config_.embeddings_path().string() +
                             " were built for a different vocabulary than " + config_.vocab_path().string());
    model_ = load_model(config_.model_path(), embeddings_);
    backend_ = make_image_backend(config_.imagegen);
    refresh_sessions();
  }

  const AppConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const EmbeddingMatrix& embeddings() const noexcept { return embeddings_; }
  const TopicModel& model() const noexcept { return model_; }

  void set_image_backend(std::unique_ptr<ImageBackend> backend) {
    std::unique_lock lock(backend_mutex_);
    backend_ = std::move(backend);
  }

  // Re-reads the transcript directory; changed sessions drop their cached scores.
  void refresh_sessions() {
    auto loaded = load_transcript_dir(config_.transcripts_dir());
    std::unique_lock lock(mutex_);
    std::map<std::string, std::shared_ptr<const Session>> next;
    for (auto& s : loaded) {
      auto it = sessions_.find(s.session_id);
      if (it != sessions_.end() && *it->second == s) {
        next.emplace(s.session_id, it->second);
        continue;
      }
      std::string id = s.session_id;
      scores_.erase(id);
      next.emplace(std::move(id), std::make_shared<const Session>(std::move(s)));
    }
    sessions_ = std::move(next);
  }

  std::vector<std::shared_ptr<const Session>> sessions() const {
    std::shared_lock lock(mutex_);
    std::vector<std::shared_ptr<const Session>> out;
    for (const auto& [id, s] : sessions_) out.push_back(s);
    return out;
  }

  // Unknown ids trigger one rescan so sessions ingested while running appear.
  std::shared_ptr<const Session> find_session(const std::string& id) {
    if (auto s = lookup(id)) return s;
    refresh_sessions();
    return lookup(id);
  }

  std::shared_ptr<const TopicScoreSeries> scores(const Session& session) {
    {
      std::shared_lock lock(mutex_);
      if (auto it = scores_.find(session.session_id); it != scores_.end()) return it->second;
    }
    auto series = std::make_shared<const TopicScoreSeries>(
        score_session(session, model_, vocab_, embeddings_, config_.topic_words));
    std::unique_lock lock(mutex_);
    return scores_.try_emplace(session.session_id, std::move(series)).first->second;
  }

  bool is_cached(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return scores_.contains(id);
  }

  std::filesystem::path outcomes_path(const std::string& id) const {
    return config_.media_dir(id) / "outcomes.json";
  }

  std::vector<ImageRequestOutcome> stored_images(const std::string& id) const {
    std::ifstream in(outcomes_path(id));
    if (!in) return {};
    std::vector<ImageRequestOutcome> out;
    for (const auto& j : nlohmann::json::parse(in)) out.push_back(outcome_from_json(j));
    return out;
  }

  // Chunks the session text, regenerates every image and replaces the stored
  // set. Serialized per session.
  std::vector<ImageRequestOutcome> regenerate_images(const Session& session) {
    auto lock = lock_session_images(session.session_id);
    const auto dir = config_.media_dir(session.session_id);
    if (std::filesystem::is_directory(dir))
      for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().extension() == ".png") std::filesystem::remove(e.path());

    const auto excerpts = chunk_transcript(session_text(session), config_.imagegen.max_chars, session.session_id);
    std::vector<ImageRequestOutcome> outcomes;
    {
      std::shared_lock backend_lock(backend_mutex_);
      outcomes = generate_images(excerpts, *backend_, dir, config_.imagegen.max_in_flight);
    }
    auto j = nlohmann::json::array();
    for (auto& o : outcomes) {
      if (o.image_path) o.image_path = std::filesystem::relative(*o.image_path, config_.data_dir);
      j.push_back(outcome_to_json(o));
    }
    std::filesystem::create_directories(dir);
    const auto tmp = outcomes_path(session.session_id).string() + ".tmp";
    {
      std::ofstream out(tmp);
      out << j.dump(1) << '\n';
      if (!out) throw Error("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, outcomes_path(session.session_id));
    return outcomes;
  }

 private:
  std::shared_ptr<const Session> lookup(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::unique_lock<std::mutex> lock_session_images(const std::string& id) {
    std::mutex* m;
    {
      std::unique_lock lock(mutex_);
      auto& slot = image_locks_[id];
      if (!slot) slot = std::make_unique<std::mutex>();
      m = slot.get();
    }
    return std::unique_lock(*m);
  }

  AppConfig config_;
  Vocabulary vocab_;
  EmbeddingMatrix embeddings_;
  TopicModel model_;

  mutable std::shared_mutex mutex_;  // sessions_, scores_, image_locks_
  std::map<std::string, std::shared_ptr<const Session>> sessions_;
  std::map<std::string, std::shared_ptr<const TopicScoreSeries>> scores_;
  std::map<std::string, std::unique_ptr<std::mutex>> image_locks_;

  mutable std::shared_mutex backend_mutex_;
  std::unique_ptr<ImageBackend> backend_;
};

inline std::unique_ptr<AppState> load_state(const std::filesystem::path& config_path) {
  return std::make_unique<AppState>(load_config(config_path));
}

// ---------------------------------------------------------------------------
// JSON views shared by the HTTP API and tests

inline nlohmann::json scores_to_json(const TopicScoreSeries& s) {
  auto turns = nlohmann::json::array();
  auto matrix = nlohmann::json::array();
  for (const auto& r : s.rows) {
    turns.push_back({{"turn_index", r.turn_index}, {"speaker", to_string(r.speaker)}});
    matrix.push_back(r.scores);
  }
  return {{"session_id", s.session_id}, {"K", s.topic_count}, {"N", s.rows.size()},
          {"turns", std::move(turns)},  {"scores", std::move(matrix)}};
}

inline nlohmann::json topics_to_json(std::span<const TopicSummary> topics) {
  auto out = nlohmann::json::array();
  for (const auto& t : topics) {
    auto words = nlohmann::json::array();
    for (const auto& [w, p] : t.words) words.push_back({{"word", w}, {"weight", p}});
    out.push_back({{"index", t.index}, {"words", std::move(words)}});
  }
  return out;
}

enum class ApiErrorCode { not_found, bad_request, backend_error, invariant_violation };

struct ApiError {
  int http_status = 500;
  ApiErrorCode code = ApiErrorCode::invariant_violation;
  std::string message;

  nlohmann::json to_json() const {
    static constexpr const char* names[] = {"not_found", "bad_request", "backend_error", "invariant_violation"};
    return {{"status", http_status}, {"code", names[static_cast<int>(code)]}, {"message", message}};
  }
};

namespace detail {

struct ApiException {
  ApiError error;
};

[[noreturn]] inline void not_found(std::string msg) { throw ApiException{{404, ApiErrorCode::not_found, std::move(msg)}}; }
[[noreturn]] inline void bad_request(std::string msg) {
  throw ApiException{{400, ApiErrorCode::bad_request, std::move(msg)}};
}

inline std::size_t parse_index(const std::string& s, const char* what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    bad_request(std::string(what) + " must be a non-negative integer, got '" + s + "'");
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// HTTP API
//
//   GET  /healthz
//   GET  /api/sessions
//   GET  /api/sessions/{id}/scores
//   GET  /api/sessions/{id}/trajectory?topics=a,b,c
//   GET  /api/sessions/{id}/transcript?from=&to=
//   GET  /api/sessions/{id}/images
//   POST /api/sessions/{id}/images
//   GET  /api/topics
//   GET  /media/{id}/{file}.png
//   GET  /  (static dashboard bundle, when configured)

class ApiServer {
 public:
  explicit ApiServer(AppState& state) : state_(state) {
    server_.new_task_queue = [n = state.config().server.threads] {
      return new httplib::ThreadPool(std::max<std::size_t>(2, n));
    };
    route_get("/healthz", [](const httplib::Request&) { return nlohmann::json{{"status", "ok"}}; });
    route_get("/api/sessions", [this](const httplib::Request&) { return list_sessions(); });
    route_get(R"(/api/sessions/([^/]+)/scores)", [this](const httplib::Request& req) {
      return scores_to_json(*state_.scores(*session(req)));
    });
    route_get(R"(/api/sessions/([^/]+)/trajectory)", [this](const httplib::Request& req) { return get_trajectory(req); });
    route_get(R"(/api/sessions/([^/]+)/transcript)", [this](const httplib::Request& req) { return get_transcript(req); });
    route_get(R"(/api/sessions/([^/]+)/images)", [this](const httplib::Request& req) {
      auto s = session(req);
      return images_json(s->session_id, state_.stored_images(s->session_id));
    });
    server_.Post(R"(/api/sessions/([^/]+)/images)", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] {
        auto s = session(req);
        try {
          return images_json(s->session_id, state_.regenerate_images(*s));
        } catch (const BackendUnreachable& e) {
          throw detail::ApiException{{502, ApiErrorCode::backend_error, e.what()}};
        }
      });
    });
    route_get("/api/topics", [this](const httplib::Request&) {
      return topics_to_json(topic_summaries(state_.model(), 10));
    });
    server_.Get(R"(/media/([^/]+)/([A-Za-z0-9_.\-]+\.png))", [this](const httplib::Request& req, httplib::Response& res) {
      serve_media(req, res);
    });

    const auto& static_dir = state.config().server.static_dir;
    if (!static_dir.empty() && std::filesystem::is_directory(static_dir))
      server_.set_mount_point("/", static_dir.string());

    server_.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      const ApiError e{res.status, res.status == 404 ? ApiErrorCode::not_found : ApiErrorCode::bad_request,
                       "no route for " + req.method + " " + req.path};
      res.set_content(e.to_json().dump(), "application/json; charset=utf-8");
    });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string msg = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        msg = e.what();
      } catch (...) {
      }
      res.status = 500;
      res.set_content(ApiError{500, ApiErrorCode::invariant_violation, msg}.to_json().dump(),
                      "application/json; charset=utf-8");
    });
  }

  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    return server_.bind_to_port(host, port) ? port : -1;
  }
  bool listen() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  httplib::Server& raw() { return server_; }

 private:
  template <typename F>
  void route_get(const std::string& pattern, F&& handler) {
    server_.Get(pattern, [this, handler = std::forward<F>(handler)](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] { return handler(req); });
    });
  }

  template <typename F>
  static void respond(httplib::Response& res, F&& body) {
    try {
      res.set_content(body().dump(), "application/json; charset=utf-8");
      res.status = 200;
    } catch (const detail::ApiException& e) {
      res.status = e.error.http_status;
      res.set_content(e.error.to_json().dump(), "application/json; charset=utf-8");
    } catch (const Error& e) {
      res.status = 500;
      res.set_content(ApiError{500, ApiErrorCode::invariant_violation, e.what()}.to_json().dump(),
                      "application/json; charset=utf-8");
    }
  }

  std::shared_ptr<const Session> session(const httplib::Request& req) {
    const std::string id = req.matches[1];
    auto s = state_.find_session(id);
    if (!s) detail::not_found("no session '" + id + "'");
    return s;
  }

  nlohmann::json list_sessions() {
    state_.refresh_sessions();
    auto out = nlohmann::json::array();
    for (const auto& s : state_.sessions()) {
      nlohmann::json j{{"session_id", s->session_id}, {"turns", s->turns.size()}, {"condition", nullptr}};
      if (s->condition_tag) j["condition"] = *s->condition_tag;
      out.push_back(std::move(j));
    }
    return out;
  }

  nlohmann::json get_trajectory(const httplib::Request& req) {
    auto s = session(req);
    std::array<std::size_t, 3> topics{0, 1, 2};
    if (req.has_param("topics")) {
      const auto raw = req.get_param_value("topics");
      std::vector<std::string> parts;
      for (std::size_t start = 0;;) {
        const auto comma = raw.find(',', start);
        parts.push_back(raw.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      if (parts.size() != 3) detail::bad_request("topics must be three comma-separated indices, got '" + raw + "'");
      for (std::size_t i = 0; i < 3; ++i) topics[i] = detail::parse_index(parts[i], "topic");
    }
    auto series = state_.scores(*s);
    std::vector<TrajectoryPoint> points;
    try {
      points = trajectory(*series, topics);
    } catch (const IndexError& e) {
      detail::bad_request(e.what());
    } catch (const DuplicateTopic& e) {
      detail::bad_request(e.what());
    }
    auto arr = nlohmann::json::array();
    for (const auto& p : points) arr.push_back({{"turn_index", p.turn_index}, {"x", p.x}, {"y", p.y}, {"z", p.z}});
    return {{"session_id", s->session_id}, {"topics", topics}, {"points", std::move(arr)}};
  }

  nlohmann::json get_transcript(const httplib::Request& req) {
    auto s = session(req);
    const std::size_t n = s->turns.size();
    std::size_t from = 0, to = n - 1;
    if (req.has_param("from")) from = detail::parse_index(req.get_param_value("from"), "from");
    if (req.has_param("to")) to = detail::parse_index(req.get_param_value("to"), "to");
    if (from > to) detail::bad_request("inverted range: from=" + std::to_string(from) + " > to=" + std::to_string(to));
    if (to >= n) detail::bad_request("turn " + std::to_string(to) + " out of range, session has " + std::to_string(n));
    const auto starts = turn_char_offsets(*s);
    auto turns = nlohmann::json::array();
    for (std::size_t i = from; i <= to; ++i) {
      auto j = turn_to_json(s->turns[i]);
      j.erase("session_id");
      j["char_start"] = starts[i];
      turns.push_back(std::move(j));
    }
    return {{"session_id", s->session_id}, {"N", n}, {"turns", std::move(turns)}};
  }

  nlohmann::json images_json(const std::string& id, const std::vector<ImageRequestOutcome>& outcomes) const {
    auto arr = nlohmann::json::array();
    for (const auto& o : outcomes) {
      auto j = outcome_to_json(o);
      j["image_url"] = o.image_path ? nlohmann::json("/media/" + id + "/" + o.image_path->filename().string())
                                    : nlohmann::json(nullptr);
      arr.push_back(std::move(j));
    }
    return {{"session_id", id}, {"outcomes", std::move(arr)}};
  }

  void serve_media(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1], file = req.matches[2];
    std::ifstream in;
    if (state_.find_session(id)) in.open(state_.config().media_dir(id) / file, std::ios::binary);
    if (!in) {
      res.status = 404;
      res.set_content(ApiError{404, ApiErrorCode::not_found, "no image '" + file + "' for session '" + id + "'"}
                          .to_json()
                          .dump(),
                      "application/json; charset=utf-8");
      return;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    res.set_content(ss.str(), "image/png");
  }

  AppState& state_;
  httplib::Server server_;
};

}  // namespace topicview
