#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "support/planted.hpp"
#include "topicview/temporal.hpp"

using namespace topicview;

namespace {

const std::vector<std::string> kWords = {"anxious", "sleep", "mother", "work", "panic",
                                         "voices", "tired", "friend", "worry", "doctor", "night", "school"};

// Each word once, so ids follow lexicographic order.
Vocabulary small_vocab() {
  return build_vocabulary(std::vector<std::vector<std::string>>{kWords}, {1, 1.0, {}});
}

EmbeddingMatrix random_rho(const Vocabulary& v, std::mt19937_64& rng, Eigen::Index dim = 5) {
  std::normal_distribution<double> n(0.0, 1.0);
  EmbeddingMatrix m;
  m.tokens.assign(v.tokens().begin(), v.tokens().end());
  m.vectors.resize(static_cast<Eigen::Index>(v.size()), dim);
  for (Eigen::Index i = 0; i < m.vectors.size(); ++i) m.vectors.data()[i] = n(rng);
  return m;
}

TopicModel random_model(const EmbeddingMatrix& rho, std::mt19937_64& rng, Eigen::Index K) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix alpha(K, static_cast<Eigen::Index>(rho.dim()));
  for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha.data()[i] = n(rng);
  return make_topic_model(alpha, rho, {});
}

TopicModel model_with_beta(const EmbeddingMatrix& rho, RowMatrix beta) {
  TopicModel m = make_topic_model(RowMatrix::Zero(beta.rows(), static_cast<Eigen::Index>(rho.dim())), rho, {});
  m.beta = std::move(beta);
  m.ranking.clear();
  for (Eigen::Index k = 0; k < m.beta.rows(); ++k) m.ranking.push_back(rank_row(m.beta, k));
  return m;
}

Turn turn(std::size_t i, std::string text, Speaker s = Speaker::patient) {
  return Turn{"s", i, s, std::move(text), std::nullopt};
}

Session session_of(const std::vector<std::string>& texts) {
  Session s{"s", std::nullopt, {}};
  for (std::size_t i = 0; i < texts.size(); ++i)
    s.turns.push_back(turn(i, texts[i], i % 2 ? Speaker::therapist : Speaker::patient));
  return s;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

const planted::Pipeline& planted_k2() {
  static const auto p = planted::build(2);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(EmbedTurn, SingleTokenIsItsVector) {
  std::mt19937_64 rng(1);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  const auto e = embed_turn(turn(0, "Panic!"), v, rho);
  EXPECT_EQ(e, rho.vectors.row(*v.id("panic")).transpose());
}

TEST(EmbedTurn, OutOfVocabularyIsZero) {
  std::mt19937_64 rng(2);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  EXPECT_EQ(embed_turn(turn(0, "zzz qqq"), v, rho), Eigen::VectorXd::Zero(5));
  EXPECT_EQ(embed_turn(turn(0, ""), v, rho), Eigen::VectorXd::Zero(5));
}

TEST(EmbedTurn, MatchesExtendedPrecisionMean) {
  std::mt19937_64 rng(3);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  const std::vector<std::string> in_vocab = {"sleep", "worry", "sleep", "night", "mother"};
  const auto e = embed_turn(turn(0, "I can't sleep, the worry... sleep at night? my mother zzz"), v, rho);
  for (Eigen::Index d = 0; d < 5; ++d) {
    long double sum = 0;
    for (const auto& w : in_vocab) sum += rho.vectors(*v.id(w), d);
    EXPECT_NEAR(e[d], static_cast<double>(sum / in_vocab.size()), 1e-14);
  }
}

TEST(EmbedTurn, RejectsMismatchedTable) {
  std::mt19937_64 rng(4);
  const auto v = small_vocab();
  auto rho = random_rho(v, rng);
  rho.vectors.conservativeResize(5, Eigen::NoChange);
  rho.tokens.resize(5);
  EXPECT_THROW(embed_turn(turn(0, "sleep"), v, rho), VocabMismatch);
}

// ---------------------------------------------------------------------------

TEST(EmbedTopic, OneHotBetaGivesThatVector) {
  std::mt19937_64 rng(5);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  RowMatrix beta = RowMatrix::Zero(2, 12);
  beta(0, 7) = 1.0;
  beta(1, 2) = 1.0;
  const auto m = model_with_beta(rho, beta);
  for (std::size_t top_m : {1u, 3u, 10u}) EXPECT_EQ(embed_topic(m, 0, top_m), rho.vectors.row(7).transpose());
}

TEST(EmbedTopic, EqualTwoWordSupportIsMidpoint) {
  std::mt19937_64 rng(6);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  RowMatrix beta = RowMatrix::Zero(1, 12);
  beta(0, 3) = beta(0, 9) = 0.5;
  const auto e = embed_topic(model_with_beta(rho, beta), 0);
  const Eigen::VectorXd mid = 0.5 * (rho.vectors.row(3) + rho.vectors.row(9)).transpose();
  EXPECT_LT((e - mid).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EmbedTopic, MatchesWeightedMeanOracle) {
  std::mt19937_64 rng(7);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  const auto model = random_model(rho, rng, 4);
  for (std::size_t k = 0; k < 4; ++k) {
    // Top ten by a full sort of the row, ties by id.
    std::vector<std::pair<double, int>> order;
    for (int w = 0; w < 12; ++w) order.emplace_back(-model.beta(static_cast<Eigen::Index>(k), w), w);
    std::sort(order.begin(), order.end());
    long double total = 0;
    for (int i = 0; i < 10; ++i) total += -order[static_cast<std::size_t>(i)].first;
    const auto e = embed_topic(model, k, 10);
    for (Eigen::Index d = 0; d < 5; ++d) {
      long double acc = 0;
      for (int i = 0; i < 10; ++i)
        acc += (-order[static_cast<std::size_t>(i)].first / total) * rho.vectors(order[static_cast<std::size_t>(i)].second, d);
      EXPECT_NEAR(e[d], static_cast<double>(acc), 1e-13);
    }
  }
  EXPECT_THROW(embed_topic(model, 4), IndexError);
}

// ---------------------------------------------------------------------------

TEST(ScoreSession, ShapeAndRange) {
  std::mt19937_64 rng(8);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  const auto model = random_model(rho, rng, 10);
  const auto s = session_of({"I keep worrying about work", "Tell me about the worry", "voices at night", ""});
  const auto series = score_session(s, model, v, rho);
  EXPECT_EQ(series.session_id, "s");
  EXPECT_EQ(series.topic_count, 10u);
  ASSERT_EQ(series.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(series.rows[i].turn_index, i);
    EXPECT_EQ(series.rows[i].speaker, s.turns[i].speaker);
    ASSERT_EQ(series.rows[i].scores.size(), 10u);
    for (double x : series.rows[i].scores) {
      EXPECT_TRUE(std::isfinite(x));
      EXPECT_GE(x, -1.0);
      EXPECT_LE(x, 1.0);
    }
  }
  for (double x : series.rows[3].scores) EXPECT_EQ(x, 0.0);
}

TEST(ScoreSession, EntriesAreTopicTurnCosines) {
  std::mt19937_64 rng(9);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  const auto model = random_model(rho, rng, 3);
  const auto s = session_of({"school friend", "panic panic doctor"});
  const auto series = score_session(s, model, v, rho);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      EXPECT_DOUBLE_EQ(series.rows[i].scores[k], cosine(embed_topic(model, k), embed_turn(s.turns[i], v, rho)));
}

TEST(ScoreSession, ScaleInvariance) {
  std::mt19937_64 rng(10);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  const auto model = random_model(rho, rng, 5);
  // Scaling rho by c and alpha by 1/c keeps every logit and so beta fixed.
  auto scaled_rho = rho;
  scaled_rho.vectors *= 3.7;
  const auto scaled = make_topic_model(model.alpha / 3.7, scaled_rho, {});
  const auto s = session_of({"anxious about work", "sleep night tired", "mother friend school doctor"});
  const auto a = score_session(s, model, v, rho), b = score_session(s, scaled, v, scaled_rho);
  for (std::size_t i = 0; i < a.rows.size(); ++i)
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(a.rows[i].scores[k], b.rows[i].scores[k], 1e-9);
}

TEST(ScoreSession, TopicPermutationPermutesColumns) {
  std::mt19937_64 rng(11);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  const auto model = random_model(rho, rng, 4);
  const std::vector<Eigen::Index> perm = {2, 0, 3, 1};
  RowMatrix alpha(4, model.alpha.cols());
  for (Eigen::Index k = 0; k < 4; ++k) alpha.row(k) = model.alpha.row(perm[static_cast<std::size_t>(k)]);
  const auto permuted = make_topic_model(alpha, rho, {});
  const auto s = session_of({"worry worry", "voices", "tired of school"});
  const auto a = score_session(s, model, v, rho), b = score_session(s, permuted, v, rho);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k)
      EXPECT_EQ(b.rows[i].scores[k], a.rows[i].scores[static_cast<std::size_t>(perm[k])]);
}

TEST(ScoreSession, LeavesInputsUntouched) {
  std::mt19937_64 rng(12);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  const auto model = random_model(rho, rng, 3);
  const auto s = session_of({"work work", "doctor"});
  const auto s_copy = s;
  const auto rho_copy = rho.vectors;
  const auto beta_copy = model.beta;
  score_session(s, model, v, rho);
  EXPECT_EQ(s, s_copy);
  EXPECT_EQ(rho.vectors, rho_copy);
  EXPECT_EQ(model.beta, beta_copy);
}

TEST(ScoreSession, VocabularyMismatch) {
  std::mt19937_64 rng(13);
  const auto v = small_vocab();
  const auto rho = random_rho(v, rng);
  const auto model = random_model(rho, rng, 2);
  const auto other = build_vocabulary(std::vector<std::vector<std::string>>{{"one", "two", "three"}}, {1, 1.0, {}});
  EXPECT_THROW(score_session(session_of({"x"}), model, other, rho), VocabMismatch);
}

TEST(ScoreSession, PlantedHalvesFollowTheirTopic) {
  const auto& p = planted_k2();
  const std::size_t a = planted::topic_for_group_a(p), b = 1 - a;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto series = score_session(planted::half_and_half(p.corpus, 12, seed), p.model, p.vocab, p.sgns.embeddings);
    double first_a = 0, first_b = 0, second_a = 0, second_b = 0;
    for (std::size_t i = 0; i < 12; ++i) {
      auto& fa = i < 6 ? first_a : second_a;
      auto& fb = i < 6 ? first_b : second_b;
      fa += series.rows[i].scores[a];
      fb += series.rows[i].scores[b];
    }
    EXPECT_GT(first_a, first_b) << seed;
    EXPECT_LT(second_a, second_b) << seed;
  }
}

TEST(ScoreSession, TopWordTurnScoresAtLeastRandomTurnsOnAverage) {
  const auto& p = planted_k2();
  std::mt19937_64 rng(14);
  const auto tokens = p.vocab.tokens();
  for (std::size_t k = 0; k < 2; ++k) {
    const auto top = top_words(p.model, 1)[k][0];
    const double top_score = score_session(session_of({top}), p.model, p.vocab, p.sgns.embeddings).rows[0].scores[k];
    double random_mean = 0;
    for (int t = 0; t < 100; ++t) {
      std::vector<std::string> words;
      for (int w = 0; w < 5; ++w) words.push_back(tokens[rng() % tokens.size()]);
      random_mean += score_session(session_of({join(words)}), p.model, p.vocab, p.sgns.embeddings).rows[0].scores[k];
    }
    EXPECT_GE(top_score, random_mean / 100) << "topic " << k;
  }
}

// ---------------------------------------------------------------------------

TopicScoreSeries known_series() {
  TopicScoreSeries s{"s", 4, {}};
  s.rows.push_back({0, Speaker::patient, {0.1, 0.2, 0.3, 0.4}});
  s.rows.push_back({1, Speaker::therapist, {-0.5, 0.0, 0.25, 1.0}});
  s.rows.push_back({2, Speaker::patient, {0.9, -0.9, 0.0, -1.0}});
  return s;
}

TEST(Trajectory, ProjectsRowsVerbatim) {
  const auto s = known_series();
  const auto pts = trajectory(s, {0, 1, 2});
  ASSERT_EQ(pts.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(pts[i].turn_index, i);
    EXPECT_EQ(pts[i].x, s.rows[i].scores[0]);
    EXPECT_EQ(pts[i].y, s.rows[i].scores[1]);
    EXPECT_EQ(pts[i].z, s.rows[i].scores[2]);
  }
  const auto other = trajectory(s, {3, 0, 2});
  EXPECT_EQ(other[1].x, 1.0);
  EXPECT_EQ(other[1].y, -0.5);
}

TEST(Trajectory, RejectsBadSelections) {
  const auto s = known_series();
  EXPECT_THROW(trajectory(s, {1, 1, 2}), DuplicateTopic);
  EXPECT_THROW(trajectory(s, {0, 1, 4}), IndexError);
}

TEST(ScoresCsv, HeaderAndFixedDecimals) {
  std::ostringstream out;
  write_scores_csv(known_series(), out);
  EXPECT_EQ(out.str(),
            "turn_index,speaker,topic_0,topic_1,topic_2,topic_3\n"
            "0,patient,0.100000,0.200000,0.300000,0.400000\n"
            "1,therapist,-0.500000,0.000000,0.250000,1.000000\n"
            "2,patient,0.900000,-0.900000,0.000000,-1.000000\n");
}
