#pragma once

// Embedded topic model. A topic is a vector alpha_k in word-embedding space;
// its word distribution is beta_k = softmax(rho alpha_k). Document-topic
// proportions theta = softmax(mu + sigma * eps) come from an amortized
// encoder, and training maximizes the single-sample ELBO with Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "topicview/corpus.hpp"
#include "topicview/embeddings.hpp"
#include "topicview/error.hpp"

namespace topicview {

inline constexpr double kLogFloor = 1e-12;

// Numerically stable softmax.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) return logits;
  Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

// Row k of the result is softmax over the vocabulary of rho * alpha_k.
inline RowMatrix beta_from(const RowMatrix& alpha, const RowMatrix& rho) {
  if (alpha.cols() != rho.cols())
    throw DimensionMismatch("beta_from: alpha has D=" + std::to_string(alpha.cols()) + ", rho has D=" +
                            std::to_string(rho.cols()));
  RowMatrix logits = alpha * rho.transpose();
  for (Eigen::Index k = 0; k < logits.rows(); ++k) {
    auto row = logits.row(k);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return logits;
}

// ---------------------------------------------------------------------------
// Encoder: x -> relu(W1 x + b1) -> relu(W2 h1 + b2) -> (mu, logvar) heads.
// w1 is stored V x H (one row per word) so sparse inputs touch only their rows.

struct EncoderParams {
  RowMatrix w1;  // V x H
  Eigen::VectorXd b1;
  RowMatrix w2;  // H x H
  Eigen::VectorXd b2;
  RowMatrix w_mu;  // K x H
  Eigen::VectorXd b_mu;
  RowMatrix w_lv;  // K x H
  Eigen::VectorXd b_lv;

  static EncoderParams zeros(std::size_t vocab, std::size_t hidden, std::size_t topics) {
    const auto V = static_cast<Eigen::Index>(vocab), H = static_cast<Eigen::Index>(hidden),
               K = static_cast<Eigen::Index>(topics);
    return {RowMatrix::Zero(V, H), Eigen::VectorXd::Zero(H), RowMatrix::Zero(H, H), Eigen::VectorXd::Zero(H),
            RowMatrix::Zero(K, H), Eigen::VectorXd::Zero(K), RowMatrix::Zero(K, H), Eigen::VectorXd::Zero(K)};
  }

  // Glorot-uniform weights, zero biases.
  template <typename Rng>
  static EncoderParams glorot(std::size_t vocab, std::size_t hidden, std::size_t topics, Rng& rng) {
    auto p = zeros(vocab, hidden, topics);
    auto fill = [&rng](RowMatrix& m, double fan_in, double fan_out) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = limit * u(rng);
    };
    const auto V = static_cast<double>(vocab), H = static_cast<double>(hidden),
               K = static_cast<double>(topics);
    fill(p.w1, V, H);
    fill(p.w2, H, H);
    fill(p.w_mu, H, K);
    fill(p.w_lv, H, K);
    return p;
  }

  // Visits every tensor as a flat span, in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f) {
    auto flat = [](auto& m) { return std::span<double>(m.data(), static_cast<std::size_t>(m.size())); };
    f(flat(w1)); f(flat(b1)); f(flat(w2)); f(flat(b2));
    f(flat(w_mu)); f(flat(b_mu)); f(flat(w_lv)); f(flat(b_lv));
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    auto flat = [](const auto& m) {
      return std::span<const double>(m.data(), static_cast<std::size_t>(m.size()));
    };
    f(flat(w1)); f(flat(b1)); f(flat(w2)); f(flat(b2));
    f(flat(w_mu)); f(flat(b_mu)); f(flat(w_lv)); f(flat(b_lv));
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&ok](std::span<const double> t) {
      for (double v : t) ok = ok && std::isfinite(v);
    });
    return ok;
  }
};

struct EncoderOutput {
  Eigen::VectorXd mu;
  Eigen::VectorXd logvar;
};

namespace detail {

struct EncoderTrace {
  Eigen::VectorXd a1, h1, a2, h2;
  EncoderOutput out;
};

// Input given as sparse (id, weight) pairs already normalized to sum 1.
inline EncoderTrace encode_trace(std::span<const std::pair<std::int32_t, double>> x, const EncoderParams& p) {
  EncoderTrace t;
  t.a1 = p.b1;
  for (const auto& [id, w] : x) t.a1 += w * p.w1.row(id).transpose();
  t.h1 = t.a1.cwiseMax(0.0);
  t.a2 = p.w2 * t.h1 + p.b2;
  t.h2 = t.a2.cwiseMax(0.0);
  t.out.mu = p.w_mu * t.h2 + p.b_mu;
  t.out.logvar = p.w_lv * t.h2 + p.b_lv;
  return t;
}

inline std::vector<std::pair<std::int32_t, double>> normalized(const BowVector& bow) {
  std::vector<std::pair<std::int32_t, double>> x;
  const auto n = static_cast<double>(bow.total());
  if (n == 0.0) return x;
  x.reserve(bow.entries.size());
  for (const auto& [id, c] : bow.entries) x.emplace_back(id, static_cast<double>(c) / n);
  return x;
}

}  // namespace detail

// bow_norm is a dense V-vector on the simplex (all zeros for an empty doc).
inline EncoderOutput encode(const Eigen::VectorXd& bow_norm, const EncoderParams& params) {
  if (bow_norm.size() != params.w1.rows())
    throw DimensionMismatch("encode: input has " + std::to_string(bow_norm.size()) + " entries, encoder expects " +
                            std::to_string(params.w1.rows()));
  std::vector<std::pair<std::int32_t, double>> x;
  for (Eigen::Index i = 0; i < bow_norm.size(); ++i)
    if (bow_norm[i] != 0.0) x.emplace_back(static_cast<std::int32_t>(i), bow_norm[i]);
  return detail::encode_trace(x, params).out;
}

inline EncoderOutput encode(const BowVector& bow, const EncoderParams& params) {
  return detail::encode_trace(detail::normalized(bow), params).out;
}

inline Eigen::VectorXd theta_from(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar,
                                  const Eigen::VectorXd& noise) {
  return softmax(mu + ((0.5 * logvar.array()).exp() * noise.array()).matrix());
}

// KL(N(mu, diag(exp(logvar))) || N(0, I)).
inline double gaussian_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar) {
  return -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum();
}

// ---------------------------------------------------------------------------
// ELBO and gradients

struct ElboResult {
  double elbo = 0.0;            // sum over documents
  double log_likelihood = 0.0;  // sum over documents
  double kl = 0.0;              // sum over documents
  std::vector<double> doc_kl;
  double theta_sum_error = 0.0;  // max over documents of |sum(theta) - 1|
  EncoderParams grad_params;  // d elbo / d params
  RowMatrix grad_alpha;       // d elbo / d alpha
  RowMatrix grad_rho;         // d elbo / d rho; empty unless requested
};

// ELBO = sum_d [ sum_w c_dw log(theta_d . beta_{:,w}) - KL_d ], one noise
// vector per document. The likelihood uses max(p, 1e-12) inside the log.
inline ElboResult elbo_and_grads(std::span<const BowVector> batch, const EncoderParams& params,
                                 const RowMatrix& alpha, const RowMatrix& rho,
                                 std::span<const Eigen::VectorXd> noise, bool want_rho_grad = false) {
  if (batch.empty()) throw InvariantError("elbo_and_grads: empty batch");
  if (noise.size() != batch.size()) throw DimensionMismatch("elbo_and_grads: one noise vector per document");
  const Eigen::Index K = alpha.rows(), V = rho.rows();
  if (params.w1.rows() != V || params.w_mu.rows() != K)
    throw DimensionMismatch("elbo_and_grads: encoder shape does not match alpha/rho");

  const RowMatrix beta = beta_from(alpha, rho);
  ElboResult r;
  r.grad_params = EncoderParams::zeros(static_cast<std::size_t>(V), static_cast<std::size_t>(params.b1.size()),
                                       static_cast<std::size_t>(K));
  auto& g = r.grad_params;
  // dL/dlogits_kw = beta_kw (A_kw - s_k), accumulated over the batch.
  RowMatrix acc = RowMatrix::Zero(K, V);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(K);

  for (std::size_t d = 0; d < batch.size(); ++d) {
    const auto& bow = batch[d];
    if (noise[d].size() != K) throw DimensionMismatch("elbo_and_grads: noise must have K entries");
    const auto x = detail::normalized(bow);
    const auto tr = detail::encode_trace(x, params);
    const auto& mu = tr.out.mu;
    const auto& lv = tr.out.logvar;
    const Eigen::VectorXd sigma = (0.5 * lv.array()).exp();
    const Eigen::VectorXd theta = softmax(mu + (sigma.array() * noise[d].array()).matrix());
    r.theta_sum_error = std::max(r.theta_sum_error, std::abs(theta.sum() - 1.0));

    double ll = 0.0;
    Eigen::VectorXd g_theta = Eigen::VectorXd::Zero(K);
    for (const auto& [w, c] : bow.entries) {
      const double p = theta.dot(beta.col(w));
      ll += c * std::log(std::max(p, kLogFloor));
      if (p > kLogFloor) {
        const double coef = c / p;
        g_theta += coef * beta.col(w);
        acc.col(w) += coef * theta;
      }
    }
    s += theta.cwiseProduct(g_theta);

    const double kl = gaussian_kl(mu, lv);
    r.doc_kl.push_back(kl);
    r.log_likelihood += ll;
    r.kl += kl;

    // Through the softmax: dz = theta * (g_theta - theta . g_theta).
    const Eigen::VectorXd dz = theta.cwiseProduct((g_theta.array() - theta.dot(g_theta)).matrix());
    const Eigen::VectorXd dmu = dz - mu;
    const Eigen::VectorXd dlv =
        (0.5 * dz.array() * noise[d].array() * sigma.array() - 0.5 * (lv.array().exp() - 1.0)).matrix();

    g.w_mu += dmu * tr.h2.transpose();
    g.b_mu += dmu;
    g.w_lv += dlv * tr.h2.transpose();
    g.b_lv += dlv;
    const Eigen::VectorXd da2 =
        ((params.w_mu.transpose() * dmu + params.w_lv.transpose() * dlv).array() * (tr.a2.array() > 0.0).cast<double>())
            .matrix();
    g.w2 += da2 * tr.h1.transpose();
    g.b2 += da2;
    const Eigen::VectorXd da1 =
        ((params.w2.transpose() * da2).array() * (tr.a1.array() > 0.0).cast<double>()).matrix();
    g.b1 += da1;
    for (const auto& [id, wgt] : x) g.w1.row(id) += wgt * da1.transpose();
  }

  const RowMatrix dlogits = beta.cwiseProduct(acc - s * Eigen::RowVectorXd::Ones(V));
  r.grad_alpha = dlogits * rho;
  if (want_rho_grad) r.grad_rho = dlogits.transpose() * alpha;

  r.elbo = r.log_likelihood - r.kl;
  if (std::isnan(r.elbo)) throw NumericalError("ELBO is NaN; lower the learning rate");
  return r;
}

// ---------------------------------------------------------------------------
// Adam (ascent or descent is the caller's sign choice on the gradient).

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  std::size_t add_slot(std::size_t size) {
    m_.emplace_back(size, 0.0);
    v_.emplace_back(size, 0.0);
    return m_.size() - 1;
  }

  void next_step() { ++t_; }

  // Minimizes: param -= lr * mhat / (sqrt(vhat) + eps).
  void update(std::size_t slot, std::span<double> param, std::span<const double> grad) {
    auto& m = m_[slot];
    auto& v = v_[slot];
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      param[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Model

struct EtmConfig {
  std::size_t topics = 10;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 5e-3;
  std::size_t hidden = 128;
  std::uint64_t seed = 42;
  bool train_embeddings = false;  // rho frozen by default

  void validate() const {
    if (topics < 2) throw ConfigError("etm: topics must be >= 2");
    if (epochs < 1) throw ConfigError("etm: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("etm: batch_size must be >= 1");
    if (hidden < 1) throw ConfigError("etm: hidden must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("etm: lr must be > 0");
  }
};

struct EtmTrainMeta {
  EtmConfig config;
  std::string vocab_hash;
  std::vector<double> epoch_elbo;  // mean per-document ELBO per epoch
  double theta_sum_error = 0.0;    // worst sampled-theta row sum error seen in training
};

struct TopicModel {
  RowMatrix alpha;      // K x D
  EmbeddingMatrix rho;  // the embeddings alpha lives with
  RowMatrix beta;       // K x V
  std::vector<std::vector<std::int32_t>> ranking;  // per topic, ids by beta desc, ties by id
  EtmTrainMeta meta;

  std::size_t topics() const noexcept { return static_cast<std::size_t>(alpha.rows()); }
  std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(beta.cols()); }
};

inline std::vector<std::int32_t> rank_row(const RowMatrix& beta, Eigen::Index k) {
  std::vector<std::int32_t> ids(static_cast<std::size_t>(beta.cols()));
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](std::int32_t a, std::int32_t b) { return beta(k, a) > beta(k, b); });
  return ids;
}

inline TopicModel make_topic_model(RowMatrix alpha, EmbeddingMatrix rho, EtmTrainMeta meta) {
  TopicModel m;
  m.beta = beta_from(alpha, rho.vectors);
  m.alpha = std::move(alpha);
  m.rho = std::move(rho);
  m.meta = std::move(meta);
  if (m.meta.vocab_hash.empty()) m.meta.vocab_hash = m.rho.vocab_hash();
  for (Eigen::Index k = 0; k < m.beta.rows(); ++k) m.ranking.push_back(rank_row(m.beta, k));
  return m;
}

inline std::vector<std::vector<std::int32_t>> top_word_ids(const TopicModel& model, std::size_t n) {
  if (n > model.vocab_size())
    throw InsufficientTopWords("requested " + std::to_string(n) + " top words from a vocabulary of " +
                               std::to_string(model.vocab_size()));
  std::vector<std::vector<std::int32_t>> out;
  for (const auto& r : model.ranking) out.emplace_back(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

inline std::vector<std::vector<std::string>> top_words(const TopicModel& model, std::size_t n) {
  std::vector<std::vector<std::string>> out;
  for (const auto& ids : top_word_ids(model, n)) {
    auto& words = out.emplace_back();
    for (auto id : ids) words.push_back(model.rho.tokens[static_cast<std::size_t>(id)]);
  }
  return out;
}

namespace detail {

inline void check_simplex_rows(const RowMatrix& beta, const std::string& where) {
  for (Eigen::Index k = 0; k < beta.rows(); ++k) {
    const double sum = beta.row(k).sum();
    if (!(std::abs(sum - 1.0) <= 1e-6) || beta.row(k).minCoeff() < 0.0)
      throw NumericalError(where + ": beta row " + std::to_string(k) + " is not a distribution");
  }
}

}  // namespace detail

// Called after each epoch with (epoch index, mean ELBO, current beta).
using EpochCallback = std::function<void(std::size_t, double, const RowMatrix&)>;

inline TopicModel train_etm(std::span<const BowVector> corpus, const EmbeddingMatrix& rho,
                            const EtmConfig& config = {}, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (corpus.empty()) throw DegenerateCorpus("etm: empty corpus");
  const std::size_t V = rho.size(), D = rho.dim(), K = config.topics;
  for (const auto& bow : corpus)
    for (const auto& [id, c] : bow.entries)
      if (id < 0 || static_cast<std::size_t>(id) >= V)
        throw VocabMismatch("etm: token id " + std::to_string(id) + " outside embedding table of " +
                            std::to_string(V));

  std::mt19937_64 rng(config.seed);
  auto params = EncoderParams::glorot(V, config.hidden, K, rng);
  RowMatrix alpha(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
  {
    std::normal_distribution<double> n01(0.0, 1.0);
    for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha.data()[i] = n01(rng);
  }
  EmbeddingMatrix embeddings = rho;

  Adam adam(config.lr);
  std::vector<std::size_t> slots;
  params.for_each_tensor([&](std::span<double> t) { slots.push_back(adam.add_slot(t.size())); });
  const auto alpha_slot = adam.add_slot(static_cast<std::size_t>(alpha.size()));
  const auto rho_slot = adam.add_slot(config.train_embeddings ? static_cast<std::size_t>(embeddings.vectors.size()) : 0);

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::normal_distribution<double> n01(0.0, 1.0);
  EtmTrainMeta meta{config, rho.vocab_hash(), {}};
  std::vector<BowVector> batch;
  std::vector<Eigen::VectorXd> noise;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double elbo_sum = 0.0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      noise.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(corpus[order[i]]);
        Eigen::VectorXd eps(static_cast<Eigen::Index>(K));
        for (Eigen::Index k = 0; k < eps.size(); ++k) eps[k] = n01(rng);
        noise.push_back(std::move(eps));
      }
      const std::string where = "etm epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b + 1);
      ElboResult res;
      try {
        res = elbo_and_grads(batch, params, alpha, embeddings.vectors, noise, config.train_embeddings);
      } catch (const NumericalError& e) {
        throw NumericalError(where + ": " + e.what());
      }
      for (double kl : res.doc_kl)
        if (!(kl >= -1e-12)) throw NumericalError(where + ": negative KL");
      if (!(res.theta_sum_error <= 1e-6)) throw NumericalError(where + ": theta is not a distribution");
      meta.theta_sum_error = std::max(meta.theta_sum_error, res.theta_sum_error);
      elbo_sum += res.elbo;

      // Ascend the mean per-document ELBO.
      const double scale = -1.0 / static_cast<double>(batch.size());
      adam.next_step();
      std::size_t t = 0;
      std::vector<std::span<const double>> grads;
      res.grad_params.for_each_tensor([&](std::span<const double> gspan) { grads.push_back(gspan); });
      std::vector<double> scaled;
      params.for_each_tensor([&](std::span<double> p) {
        scaled.assign(grads[t].begin(), grads[t].end());
        for (auto& v : scaled) v *= scale;
        adam.update(slots[t], p, scaled);
        ++t;
      });
      scaled.assign(res.grad_alpha.data(), res.grad_alpha.data() + res.grad_alpha.size());
      for (auto& v : scaled) v *= scale;
      adam.update(alpha_slot, {alpha.data(), static_cast<std::size_t>(alpha.size())}, scaled);
      if (config.train_embeddings) {
        scaled.assign(res.grad_rho.data(), res.grad_rho.data() + res.grad_rho.size());
        for (auto& v : scaled) v *= scale;
        adam.update(rho_slot, {embeddings.vectors.data(), static_cast<std::size_t>(embeddings.vectors.size())},
                    scaled);
      }
      if (!params.all_finite() || !alpha.allFinite() || !embeddings.vectors.allFinite())
        throw NumericalError(where + ": non-finite parameters; lower the learning rate");
    }
    const double mean = elbo_sum / static_cast<double>(corpus.size());
    meta.epoch_elbo.push_back(mean);
    const RowMatrix beta = beta_from(alpha, embeddings.vectors);
    detail::check_simplex_rows(beta, "etm epoch " + std::to_string(epoch + 1));
    if (on_epoch) on_epoch(epoch, mean, beta);
  }
  return make_topic_model(std::move(alpha), std::move(embeddings), std::move(meta));
}

// ---------------------------------------------------------------------------
// Model file: {version, K, D, alpha, vocab_hash, train_meta}. beta is
// recomputed from the embeddings on load.

inline nlohmann::json config_to_json(const EtmConfig& c) {
  return {{"topics", c.topics}, {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},
          {"hidden", c.hidden}, {"seed", c.seed},     {"train_embeddings", c.train_embeddings}};
}

inline void save_model(const TopicModel& model, const std::filesystem::path& path) {
  nlohmann::json alpha = nlohmann::json::array();
  for (Eigen::Index k = 0; k < model.alpha.rows(); ++k) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < model.alpha.cols(); ++j) row.push_back(model.alpha(k, j));
    alpha.push_back(std::move(row));
  }
  const nlohmann::json j{{"version", 1},
                         {"K", model.alpha.rows()},
                         {"D", model.alpha.cols()},
                         {"alpha", std::move(alpha)},
                         {"vocab_hash", model.meta.vocab_hash},
                         {"train_meta",
                          {{"config", config_to_json(model.meta.config)},
                           {"seed", model.meta.config.seed},
                           {"epoch_elbo", model.meta.epoch_elbo}}}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

inline TopicModel load_model(const std::filesystem::path& path, const EmbeddingMatrix& rho) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("version").get<int>() != 1) throw ParseError("unsupported model version");
    const auto K = j.at("K").get<std::size_t>(), D = j.at("D").get<std::size_t>();
    const auto hash = j.at("vocab_hash").get<std::string>();
    if (hash != rho.vocab_hash())
      throw ArtifactMismatch("model " + path.string() + " was trained on vocabulary " + hash +
                             ", embeddings have " + rho.vocab_hash());
    if (D != rho.dim())
      throw ArtifactMismatch("model has D=" + std::to_string(D) + ", embeddings have D=" + std::to_string(rho.dim()));
    const auto& rows = j.at("alpha");
    if (rows.size() != K) throw ParseError("alpha has " + std::to_string(rows.size()) + " rows, K=" + std::to_string(K));
    RowMatrix alpha(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
    for (std::size_t k = 0; k < K; ++k) {
      if (rows[k].size() != D) throw ParseError("alpha row " + std::to_string(k) + " has wrong width");
      for (std::size_t d = 0; d < D; ++d) alpha(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)) = rows[k][d].get<double>();
    }
    EtmTrainMeta meta;
    meta.vocab_hash = hash;
    if (auto tm = j.find("train_meta"); tm != j.end()) {
      if (auto c = tm->find("config"); c != tm->end()) {
        meta.config.topics = c->value("topics", meta.config.topics);
        meta.config.epochs = c->value("epochs", meta.config.epochs);
        meta.config.batch_size = c->value("batch_size", meta.config.batch_size);
        meta.config.lr = c->value("lr", meta.config.lr);
        meta.config.hidden = c->value("hidden", meta.config.hidden);
        meta.config.seed = c->value("seed", meta.config.seed);
        meta.config.train_embeddings = c->value("train_embeddings", meta.config.train_embeddings);
      }
      meta.epoch_elbo = tm->value("epoch_elbo", std::vector<double>{});
    }
    return make_topic_model(std::move(alpha), rho, std::move(meta));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace topicview
