#pragma once

#include <array>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "topicview/corpus.hpp"
#include "topicview/embeddings.hpp"
#include "topicview/error.hpp"
#include "topicview/etm.hpp"

namespace topicview {

struct ScoreRow {
  std::size_t turn_index = 0;
  Speaker speaker = Speaker::patient;
  std::vector<double> scores;  // one cosine per topic, in [-1, 1]
};

struct TopicScoreSeries {
  std::string session_id;
  std::size_t topic_count = 0;
  std::vector<ScoreRow> rows;
};

struct TrajectoryPoint {
  std::size_t turn_index = 0;
  double x = 0.0, y = 0.0, z = 0.0;
};

// Unweighted mean of the in-vocabulary token vectors. Zero vector when the
// turn has no in-vocabulary tokens.
inline Eigen::VectorXd embed_turn(const Turn& turn, const Vocabulary& vocab, const EmbeddingMatrix& rho) {
  if (rho.size() != vocab.size())
    throw VocabMismatch("embed_turn: vocabulary has " + std::to_string(vocab.size()) + " tokens, embeddings " +
                        std::to_string(rho.size()));
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rho.dim()));
  std::size_t n = 0;
  for (const auto& tok : tokenize(turn.text)) {
    if (auto id = vocab.id(tok)) {
      sum += rho.vectors.row(*id).transpose();
      ++n;
    }
  }
  if (n > 0) sum /= static_cast<double>(n);
  return sum;
}

// beta-weighted mean of topic k's top-m word vectors, weights renormalized
// over those m words.
inline Eigen::VectorXd embed_topic(const TopicModel& model, std::size_t k, std::size_t m = 10) {
  if (k >= model.topics())
    throw IndexError("topic " + std::to_string(k) + " out of range for K=" + std::to_string(model.topics()));
  m = std::min(m, model.vocab_size());
  const auto& ranked = model.ranking[k];
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.rho.dim()));
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) total += model.beta(static_cast<Eigen::Index>(k), ranked[i]);
  for (std::size_t i = 0; i < m; ++i) {
    const double w = model.beta(static_cast<Eigen::Index>(k), ranked[i]) / total;
    out += w * model.rho.vectors.row(ranked[i]).transpose();
  }
  return out;
}

// For every turn i and topic j: cosine(Emb(topic j), Emb(turn i)). Patient
// and therapist turns are independent rows tagged with their speaker.
inline TopicScoreSeries score_session(const Session& session, const TopicModel& model, const Vocabulary& vocab,
                                      const EmbeddingMatrix& rho, std::size_t topic_words = 10) {
  const auto vh = vocab.hash();
  if (vh != model.meta.vocab_hash)
    throw VocabMismatch("vocabulary " + vh + " differs from the model's " + model.meta.vocab_hash);
  if (rho.vocab_hash() != vh) throw VocabMismatch("embedding table was built for a different vocabulary");

  const std::size_t K = model.topics();
  std::vector<Eigen::VectorXd> topics;
  topics.reserve(K);
  for (std::size_t k = 0; k < K; ++k) topics.push_back(embed_topic(model, k, topic_words));

  TopicScoreSeries series{session.session_id, K, {}};
  series.rows.reserve(session.turns.size());
  for (const auto& turn : session.turns) {
    const auto e = embed_turn(turn, vocab, rho);
    ScoreRow row{turn.turn_index, turn.speaker, std::vector<double>(K)};
    for (std::size_t k = 0; k < K; ++k) row.scores[k] = cosine(topics[k], e);
    series.rows.push_back(std::move(row));
  }
  return series;
}

inline std::vector<TrajectoryPoint> trajectory(const TopicScoreSeries& series, std::array<std::size_t, 3> topics) {
  for (auto t : topics)
    if (t >= series.topic_count)
      throw IndexError("topic " + std::to_string(t) + " out of range for K=" + std::to_string(series.topic_count));
  if (topics[0] == topics[1] || topics[0] == topics[2] || topics[1] == topics[2])
    throw DuplicateTopic("trajectory topics must be distinct");
  std::vector<TrajectoryPoint> points;
  points.reserve(series.rows.size());
  for (const auto& r : series.rows)
    points.push_back({r.turn_index, r.scores[topics[0]], r.scores[topics[1]], r.scores[topics[2]]});
  return points;
}

// Header "turn_index,speaker,topic_0,...", values in 6-decimal fixed notation.
inline void write_scores_csv(const TopicScoreSeries& series, std::ostream& out) {
  out << "turn_index,speaker";
  for (std::size_t k = 0; k < series.topic_count; ++k) out << ",topic_" << k;
  out << '\n';
  char buf[32];
  for (const auto& r : series.rows) {
    out << r.turn_index << ',' << to_string(r.speaker);
    for (double s : r.scores) {
      std::snprintf(buf, sizeof buf, ",%.6f", s);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace topicview
