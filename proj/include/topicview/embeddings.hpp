#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "topicview/corpus.hpp"
#include "topicview/error.hpp"
#include "topicview/hash.hpp"

namespace topicview {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Word vectors, one row per vocabulary id. tokens[i] labels row i.
struct EmbeddingMatrix {
  std::vector<std::string> tokens;
  RowMatrix vectors;

  std::size_t size() const noexcept { return static_cast<std::size_t>(vectors.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors.cols()); }
  std::span<const double> row(std::size_t i) const {
    return {vectors.data() + i * dim(), dim()};
  }
  std::string vocab_hash() const { return token_list_hash(tokens); }
};

// Returns 0 when either vector has zero norm ("no evidence").
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionMismatch("cosine: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return cosine(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

// ---------------------------------------------------------------------------
// Skip-gram with negative sampling

struct SgnsConfig {
  std::size_t dim = 128;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double initial_lr = 0.025;
  double min_lr = 1e-4;
  std::uint64_t seed = 42;
  double unigram_power = 0.75;
  bool deterministic = true;  // false: lock-free sharded updates across threads
  std::size_t threads = 0;    // fast mode only; 0 = hardware concurrency

  void validate() const {
    if (dim < 2) throw ConfigError("sgns: dim must be >= 2");
    if (window < 1) throw ConfigError("sgns: window must be >= 1");
    if (negatives < 1) throw ConfigError("sgns: negatives must be >= 1");
    if (epochs < 1) throw ConfigError("sgns: epochs must be >= 1");
    if (!(initial_lr > 0.0)) throw ConfigError("sgns: initial_lr must be > 0");
  }
};

struct SgnsModel {
  EmbeddingMatrix embeddings;      // input-side vectors
  std::vector<double> epoch_loss;  // mean per-pair loss per epoch
  bool deterministic = true;
};

namespace detail {

inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// Gradients of one (center, context, negatives) term, each sized like its vector.
struct SgnsPairGrad {
  std::vector<double> center;
  std::vector<double> context;
  std::vector<std::vector<double>> negatives;
};

// loss = -log s(c.o) - sum_k log s(-c.n_k). Writes d loss / d (each input).
inline double sgns_pair_loss(std::span<const double> center, std::span<const double> context,
                             std::span<const std::span<const double>> negatives,
                             SgnsPairGrad* grad = nullptr) {
  const std::size_t d = center.size();
  auto dot = [d](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
  };
  if (grad) {
    grad->center.assign(d, 0.0);
    grad->context.assign(d, 0.0);
    grad->negatives.resize(negatives.size());
  }
  const double pos = dot(center, context);
  double loss = -detail::log_sigmoid(pos);
  if (grad) {
    const double g = detail::sigmoid(pos) - 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      grad->center[i] += g * context[i];
      grad->context[i] = g * center[i];
    }
  }
  for (std::size_t k = 0; k < negatives.size(); ++k) {
    const double s = dot(center, negatives[k]);
    loss -= detail::log_sigmoid(-s);
    if (grad) {
      const double g = detail::sigmoid(s);
      auto& gn = grad->negatives[k];
      gn.assign(d, 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        grad->center[i] += g * negatives[k][i];
        gn[i] = g * center[i];
      }
    }
  }
  return loss;
}

namespace detail {

// Row storage shared by the deterministic and lock-free trainers. In fast
// mode every element access goes through a relaxed atomic_ref, which is the
// classic unsynchronized SGD without data-race UB.
class SgnsTables {
 public:
  SgnsTables(std::size_t vocab, std::size_t dim, std::mt19937_64& rng)
      : dim_(dim), input_(vocab * dim), output_(vocab * dim, 0.0) {
    std::uniform_real_distribution<double> init(-0.5 / static_cast<double>(dim),
                                                0.5 / static_cast<double>(dim));
    for (auto& x : input_) x = init(rng);
  }

  template <bool Shared>
  void load(bool output_side, std::int32_t row, std::vector<double>& dst) {
    auto* base = (output_side ? output_.data() : input_.data()) + static_cast<std::size_t>(row) * dim_;
    dst.resize(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      if constexpr (Shared)
        dst[i] = std::atomic_ref<double>(base[i]).load(std::memory_order_relaxed);
      else
        dst[i] = base[i];
    }
  }

  template <bool Shared>
  void add(bool output_side, std::int32_t row, const std::vector<double>& delta, double scale) {
    auto* base = (output_side ? output_.data() : input_.data()) + static_cast<std::size_t>(row) * dim_;
    for (std::size_t i = 0; i < dim_; ++i) {
      if constexpr (Shared) {
        std::atomic_ref<double> ref(base[i]);
        ref.store(ref.load(std::memory_order_relaxed) + scale * delta[i], std::memory_order_relaxed);
      } else {
        base[i] += scale * delta[i];
      }
    }
  }

  std::vector<double>& input() { return input_; }

 private:
  std::size_t dim_;
  std::vector<double> input_;
  std::vector<double> output_;
};

struct SgnsWorker {
  const SgnsConfig& config;
  std::discrete_distribution<std::int32_t>& noise_proto;
  std::size_t total_centers;  // over all epochs
  std::atomic<std::size_t>& progress;

  // Trains one epoch over docs[begin, end). Returns (loss sum, pair count).
  template <bool Shared>
  std::pair<double, std::size_t> run(SgnsTables& tables, std::span<const std::vector<std::int32_t>> docs,
                                     std::mt19937_64& rng) {
    std::discrete_distribution<std::int32_t> noise(noise_proto.param());
    std::vector<double> center, context;
    std::vector<std::vector<double>> negs(config.negatives);
    std::vector<std::int32_t> neg_ids(config.negatives);
    std::vector<std::span<const double>> neg_spans(config.negatives);
    SgnsPairGrad grad;
    double loss_sum = 0.0;
    std::size_t pairs = 0;
    std::uniform_int_distribution<std::size_t> window_dist(1, config.window);

    for (const auto& doc : docs) {
      for (std::size_t pos = 0; pos < doc.size(); ++pos) {
        const double frac = static_cast<double>(progress.fetch_add(1, std::memory_order_relaxed)) /
                            static_cast<double>(total_centers);
        const double lr = std::max(config.min_lr, config.initial_lr * (1.0 - frac));
        const std::size_t b = window_dist(rng);
        const std::size_t lo = pos >= b ? pos - b : 0;
        const std::size_t hi = std::min(doc.size() - 1, pos + b);
        for (std::size_t c = lo; c <= hi; ++c) {
          if (c == pos) continue;
          const std::int32_t target = doc[c];
          for (std::size_t k = 0; k < config.negatives; ++k) {
            std::int32_t n;
            do n = noise(rng);
            while (n == target && noise.probabilities().size() > 1);
            neg_ids[k] = n;
          }
          tables.load<Shared>(false, doc[pos], center);
          tables.load<Shared>(true, target, context);
          for (std::size_t k = 0; k < config.negatives; ++k) {
            tables.load<Shared>(true, neg_ids[k], negs[k]);
            neg_spans[k] = negs[k];
          }
          loss_sum += sgns_pair_loss(center, context, neg_spans, &grad);
          ++pairs;
          tables.add<Shared>(true, target, grad.context, -lr);
          for (std::size_t k = 0; k < config.negatives; ++k)
            tables.add<Shared>(true, neg_ids[k], grad.negatives[k], -lr);
          tables.add<Shared>(false, doc[pos], grad.center, -lr);
        }
      }
    }
    return {loss_sum, pairs};
  }
};

}  // namespace detail

// documents hold vocabulary ids (out-of-vocabulary tokens already dropped).
inline SgnsModel train_sgns(std::span<const std::vector<std::int32_t>> documents, const Vocabulary& vocab,
                            const SgnsConfig& config = {}) {
  config.validate();
  const std::size_t V = vocab.size();
  std::size_t total_centers = 0;
  bool trainable = false;
  std::vector<double> freq(V, 0.0);
  for (const auto& doc : documents) {
    if (doc.size() >= 2) trainable = true;
    total_centers += doc.size();
    for (auto id : doc) {
      if (id < 0 || static_cast<std::size_t>(id) >= V) throw IndexError("sgns: token id out of range");
      freq[static_cast<std::size_t>(id)] += 1.0;
    }
  }
  if (!trainable) throw DegenerateCorpus("sgns: no document has two or more tokens");

  std::vector<double> weights(V);
  for (std::size_t i = 0; i < V; ++i) weights[i] = std::pow(freq[i], config.unigram_power);
  std::discrete_distribution<std::int32_t> noise(weights.begin(), weights.end());

  std::mt19937_64 rng(config.seed);
  detail::SgnsTables tables(V, config.dim, rng);
  std::atomic<std::size_t> progress{0};
  detail::SgnsWorker worker{config, noise, total_centers * config.epochs, progress};

  SgnsModel model;
  model.deterministic = config.deterministic;
  const std::size_t threads =
      config.deterministic ? 1
                           : std::max<std::size_t>(1, config.threads ? config.threads
                                                                     : std::thread::hardware_concurrency());
  std::vector<std::mt19937_64> rngs;
  for (std::size_t t = 0; t < threads; ++t) rngs.emplace_back(config.seed + 0x9e3779b97f4a7c15ULL * (t + 1));

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss = 0.0;
    std::size_t pairs = 0;
    if (threads == 1) {
      auto [l, p] = config.deterministic ? worker.run<false>(tables, documents, rng)
                                         : worker.run<true>(tables, documents, rngs[0]);
      loss = l;
      pairs = p;
    } else {
      std::vector<std::pair<double, std::size_t>> parts(threads);
      {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (documents.size() + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
          const std::size_t b = std::min(documents.size(), t * chunk);
          const std::size_t e = std::min(documents.size(), b + chunk);
          pool.emplace_back([&, t, b, e] {
            parts[t] = worker.run<true>(tables, documents.subspan(b, e - b), rngs[t]);
          });
        }
      }
      for (auto& [l, p] : parts) {
        loss += l;
        pairs += p;
      }
    }
    const double mean = pairs ? loss / static_cast<double>(pairs) : 0.0;
    if (!std::isfinite(mean)) throw NumericalError("sgns: non-finite loss in epoch " + std::to_string(epoch + 1));
    model.epoch_loss.push_back(mean);
  }

  model.embeddings.tokens.assign(vocab.tokens().begin(), vocab.tokens().end());
  model.embeddings.vectors = Eigen::Map<RowMatrix>(tables.input().data(), static_cast<Eigen::Index>(V),
                                                   static_cast<Eigen::Index>(config.dim));
  if (!model.embeddings.vectors.allFinite()) throw NumericalError("sgns: non-finite embedding entries");
  return model;
}

// ---------------------------------------------------------------------------
// Text format: "V D" header, then "token x1 ... xD" per row, %.9g values.

inline void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << m.size() << ' ' << m.dim() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.tokens[i];
    for (std::size_t j = 0; j < m.dim(); ++j) {
      std::snprintf(buf, sizeof buf, " %.9g", m.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open embedding file " + path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("missing header", lineno);

  auto next_field = [](std::string_view& rest) -> std::string_view {
    const auto b = rest.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
      rest = {};
      return {};
    }
    rest.remove_prefix(b);
    const auto e = rest.find_first_of(" \t\r");
    auto field = rest.substr(0, e);
    rest.remove_prefix(e == std::string_view::npos ? rest.size() : e);
    return field;
  };
  auto parse_size = [&](std::string_view f, std::size_t& out) {
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), out);
    if (f.empty() || ec != std::errc() || p != f.data() + f.size()) throw ParseError("header must be 'V D'", 1);
  };

  std::size_t V = 0, D = 0;
  {
    std::string_view rest = line;
    parse_size(next_field(rest), V);
    parse_size(next_field(rest), D);
    if (!next_field(rest).empty()) throw ParseError("header must be 'V D'", 1);
  }

  EmbeddingMatrix m;
  m.vectors.resize(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(D));
  m.tokens.reserve(V);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view rest = line;
    auto token = next_field(rest);
    if (token.empty()) continue;
    if (row >= V) throw ParseError("more rows than the header's " + std::to_string(V), lineno);
    m.tokens.emplace_back(token);
    for (std::size_t j = 0; j < D; ++j) {
      auto f = next_field(rest);
      if (f.empty()) throw ParseError("expected " + std::to_string(D) + " values", lineno);
      double v = 0.0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v))
        throw ParseError("bad value '" + std::string(f) + "'", lineno);
      m.vectors(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = v;
    }
    if (!next_field(rest).empty()) throw ParseError("expected " + std::to_string(D) + " values", lineno);
    ++row;
  }
  if (row != V)
    throw ParseError("header declares " + std::to_string(V) + " rows, found " + std::to_string(row), lineno);
  return m;
}

}  // namespace topicview
