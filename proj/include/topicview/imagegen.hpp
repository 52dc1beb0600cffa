#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <openssl/evp.h>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <httplib.h>
#include <json.hpp>

#include "topicview/corpus.hpp"
#include "topicview/error.hpp"
#include "topicview/hash.hpp"
#include "topicview/png.hpp"

namespace topicview {

inline constexpr std::size_t kMaxPromptChars = 1000;

// A slice of the session text; offsets count code points.
struct Excerpt {
  std::string session_id;
  std::size_t ordinal = 0;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::string text;
};

// Turn texts joined by '\n'. Excerpt offsets index into this string.
inline std::string session_text(const Session& s) {
  std::string out;
  for (std::size_t i = 0; i < s.turns.size(); ++i) {
    if (i) out += '\n';
    out += s.turns[i].text;
  }
  return out;
}

namespace detail {

// Byte offset of every code point, plus a final entry for text.size().
// A malformed byte counts as one code point.
inline std::vector<std::size_t> code_point_offsets(std::string_view text, std::vector<UChar32>* cps = nullptr) {
  std::vector<std::size_t> offsets;
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto length = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  while (i < length) {
    offsets.push_back(static_cast<std::size_t>(i));
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    if (cps) cps->push_back(c);
  }
  offsets.push_back(text.size());
  return offsets;
}

inline bool is_space(UChar32 c) { return c >= 0 && u_isUWhiteSpace(c); }

}  // namespace detail

// Code-point offset where each turn starts inside session_text().
inline std::vector<std::size_t> turn_char_offsets(const Session& s) {
  std::vector<std::size_t> starts;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < s.turns.size(); ++i) {
    starts.push_back(pos);
    pos += detail::code_point_offsets(s.turns[i].text).size();  // code points + '\n'
  }
  return starts;
}

// Greedy tiling into pieces of at most max_chars code points. A cut that
// would split a word backs up to just after the last whitespace in the
// window; only a run of non-space longer than the window is cut mid-word.
inline std::vector<Excerpt> chunk_transcript(std::string_view text, std::size_t max_chars = kMaxPromptChars,
                                             const std::string& session_id = {}) {
  if (max_chars < 1) throw ConfigError("chunk_transcript: max_chars must be >= 1");
  std::vector<UChar32> cps;
  const auto offsets = detail::code_point_offsets(text, &cps);
  const std::size_t n = cps.size();
  std::vector<Excerpt> out;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = n;
    if (n - start > max_chars) {
      end = start + max_chars;
      if (!detail::is_space(cps[end - 1]) && !detail::is_space(cps[end])) {
        std::size_t p = end - 1;
        while (p > start && !detail::is_space(cps[p])) --p;
        if (detail::is_space(cps[p])) end = p + 1;
      }
    }
    out.push_back({session_id, out.size(), start, end,
                   std::string(text.substr(offsets[start], offsets[end] - offsets[start]))});
    start = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backends

struct ImageResponse {
  enum class Kind { image, rejected, failed, transport_error };
  Kind kind = Kind::failed;
  std::vector<std::uint8_t> png;
  std::string detail;
};

// Implementations must be safe to call from several threads at once.
class ImageBackend {
 public:
  virtual ~ImageBackend() = default;
  virtual ImageResponse generate(const std::string& prompt) = 0;
  virtual std::string name() const = 0;
};

// Offline backend: a 32x32 image whose pixels are a pure function of the
// prompt; prompts containing reject_token come back as safety rejections.
class MockImageBackend : public ImageBackend {
 public:
  explicit MockImageBackend(std::string reject_token = "REJECTME") : reject_token_(std::move(reject_token)) {}

  ImageResponse generate(const std::string& prompt) override {
    if (!reject_token_.empty() && prompt.find(reject_token_) != std::string::npos)
      return {ImageResponse::Kind::rejected, {}, "mock: prompt rejected by content policy"};
    constexpr std::uint32_t side = 32;
    std::vector<std::uint8_t> rgb(side * side * 3);
    std::uint64_t state = fnv1a(prompt) | 1;
    for (auto& px : rgb) {
      state ^= state << 13;
      state ^= state >> 7;
      state ^= state << 17;
      px = static_cast<std::uint8_t>(state >> 56);
    }
    return {ImageResponse::Kind::image, encode_png_rgb(side, side, rgb), "mock"};
  }

  std::string name() const override { return "mock"; }

 private:
  std::string reject_token_;
};

namespace detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/?#]+)([^#]*)$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ConfigError("invalid URL '" + url + "'");
  return {m[1].str(), m[2].length() ? m[2].str() : "/"};
}

inline std::optional<std::vector<std::uint8_t>> base64_decode(std::string_view in) {
  std::string clean;
  for (char c : in)
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  if (clean.size() % 4 != 0) return std::nullopt;
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) return std::nullopt;
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

inline bool is_content_policy(const std::string& body) {
  std::string lower(body);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return lower.find("content_policy") != std::string::npos || lower.find("content policy") != std::string::npos ||
         lower.find("safety") != std::string::npos;
}

}  // namespace detail

// POST {"prompt": ...} -> 200 {"url": ...} | {"b64": ...}, or 400 with a
// content-policy body. The bearer token is sent when non-empty.
class HttpImageBackend : public ImageBackend {
 public:
  HttpImageBackend(std::string url, std::string token, int timeout_seconds = 60)
      : endpoint_(detail::parse_url(url)), token_(std::move(token)), timeout_(timeout_seconds) {}

  // IMAGEGEN_URL / IMAGEGEN_TOKEN.
  static std::unique_ptr<HttpImageBackend> from_env() {
    const char* url = std::getenv("IMAGEGEN_URL");
    if (!url || !*url) throw ConfigError("IMAGEGEN_URL is not set");
    const char* token = std::getenv("IMAGEGEN_TOKEN");
    return std::make_unique<HttpImageBackend>(url, token ? token : "");
  }

  ImageResponse generate(const std::string& prompt) override {
    httplib::Client cli(endpoint_.origin);
    cli.set_connection_timeout(timeout_, 0);
    cli.set_read_timeout(timeout_, 0);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = cli.Post(endpoint_.path, headers, nlohmann::json{{"prompt", prompt}}.dump(), "application/json");
    if (!res) return {ImageResponse::Kind::transport_error, {}, "transport: " + httplib::to_string(res.error())};
    if (res->status == 400 && detail::is_content_policy(res->body))
      return {ImageResponse::Kind::rejected, {}, res->body};
    if (res->status != 200)
      return {ImageResponse::Kind::failed, {}, "HTTP " + std::to_string(res->status) + ": " + res->body};

    nlohmann::json body = nlohmann::json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return {ImageResponse::Kind::failed, {}, "unparseable response"};
    if (auto d = body.find("data"); d != body.end() && d->is_array() && !d->empty()) body = (*d)[0];
    if (auto b = body.find("b64"); b != body.end() && b->is_string()) return from_b64(b->get<std::string>());
    if (auto b = body.find("b64_json"); b != body.end() && b->is_string()) return from_b64(b->get<std::string>());
    if (auto u = body.find("url"); u != body.end() && u->is_string()) return fetch(u->get<std::string>());
    return {ImageResponse::Kind::failed, {}, "response has neither 'url' nor 'b64'"};
  }

  std::string name() const override { return "http"; }

 private:
  static ImageResponse from_b64(const std::string& s) {
    auto bytes = detail::base64_decode(s);
    if (!bytes) return {ImageResponse::Kind::failed, {}, "invalid base64 image"};
    return {ImageResponse::Kind::image, std::move(*bytes), "b64"};
  }

  ImageResponse fetch(const std::string& url) const {
    detail::ParsedUrl u;
    try {
      u = detail::parse_url(url);
    } catch (const ConfigError& e) {
      return {ImageResponse::Kind::failed, {}, e.what()};
    }
    httplib::Client cli(u.origin);
    cli.set_connection_timeout(timeout_, 0);
    cli.set_read_timeout(timeout_, 0);
    auto res = cli.Get(u.path);
    if (!res) return {ImageResponse::Kind::transport_error, {}, "transport: " + httplib::to_string(res.error())};
    if (res->status != 200)
      return {ImageResponse::Kind::failed, {}, "image fetch HTTP " + std::to_string(res->status)};
    return {ImageResponse::Kind::image, std::vector<std::uint8_t>(res->body.begin(), res->body.end()), url};
  }

  detail::ParsedUrl endpoint_;
  std::string token_;
  int timeout_;
};

// ---------------------------------------------------------------------------
// Batch generation

enum class ImageStatus { generated, rejected_safety, failed };

inline std::string_view to_string(ImageStatus s) {
  switch (s) {
    case ImageStatus::generated: return "generated";
    case ImageStatus::rejected_safety: return "rejected_safety";
    case ImageStatus::failed: return "failed";
  }
  return "failed";
}

struct ImageRequestOutcome {
  std::size_t ordinal = 0;
  ImageStatus status = ImageStatus::failed;
  std::optional<std::filesystem::path> image_path;  // set iff generated
  std::string detail;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
};

inline std::string image_file_name(const std::string& session_id, std::size_t ordinal) {
  return session_id + "_" + std::to_string(ordinal) + ".png";
}

// One outcome per excerpt, in ordinal order. Rejections and failures are
// recorded, never thrown; BackendUnreachable only when every request failed
// at the transport level.
inline std::vector<ImageRequestOutcome> generate_images(std::span<const Excerpt> excerpts, ImageBackend& backend,
                                                        const std::filesystem::path& media_dir,
                                                        std::size_t max_in_flight = 2) {
  std::vector<ImageRequestOutcome> outcomes(excerpts.size());
  if (excerpts.empty()) return outcomes;
  std::filesystem::create_directories(media_dir);
  std::vector<char> transport_failed(excerpts.size(), 0);
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < excerpts.size(); i = next.fetch_add(1)) {
      const auto& ex = excerpts[i];
      auto& o = outcomes[i];
      o.ordinal = ex.ordinal;
      o.char_start = ex.char_start;
      o.char_end = ex.char_end;
      ImageResponse r;
      try {
        r = backend.generate(ex.text);
      } catch (const std::exception& e) {
        r = {ImageResponse::Kind::failed, {}, e.what()};
      }
      o.detail = r.detail;
      switch (r.kind) {
        case ImageResponse::Kind::rejected: o.status = ImageStatus::rejected_safety; break;
        case ImageResponse::Kind::transport_error: transport_failed[i] = 1; [[fallthrough]];
        case ImageResponse::Kind::failed: o.status = ImageStatus::failed; break;
        case ImageResponse::Kind::image: {
          const auto path = media_dir / image_file_name(ex.session_id, ex.ordinal);
          std::ofstream out(path, std::ios::binary | std::ios::trunc);
          out.write(reinterpret_cast<const char*>(r.png.data()), static_cast<std::streamsize>(r.png.size()));
          if (out) {
            o.status = ImageStatus::generated;
            o.image_path = path;
          } else {
            o.status = ImageStatus::failed;
            o.detail = "cannot write " + path.string();
          }
          break;
        }
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(max_in_flight, 1, excerpts.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
  }
  if (std::all_of(transport_failed.begin(), transport_failed.end(), [](char f) { return f != 0; }))
    throw BackendUnreachable("image backend '" + backend.name() + "' unreachable: " + outcomes.front().detail);
  return outcomes;
}

inline nlohmann::json outcome_to_json(const ImageRequestOutcome& o) {
  nlohmann::json j{{"ordinal", o.ordinal},
                   {"status", to_string(o.status)},
                   {"detail", o.detail},
                   {"char_start", o.char_start},
                   {"char_end", o.char_end},
                   {"image_path", nullptr}};
  if (o.image_path) j["image_path"] = o.image_path->string();
  return j;
}

inline ImageRequestOutcome outcome_from_json(const nlohmann::json& j) {
  ImageRequestOutcome o;
  o.ordinal = j.at("ordinal").get<std::size_t>();
  const auto s = j.at("status").get<std::string>();
  o.status = s == "generated" ? ImageStatus::generated
             : s == "rejected_safety" ? ImageStatus::rejected_safety
                                      : ImageStatus::failed;
  o.detail = j.value("detail", "");
  o.char_start = j.value("char_start", std::size_t{0});
  o.char_end = j.value("char_end", std::size_t{0});
  if (auto p = j.find("image_path"); p != j.end() && p->is_string()) o.image_path = p->get<std::string>();
  return o;
}

}  // namespace topicview
