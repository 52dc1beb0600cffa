#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "support/etm_check.hpp"
#include "support/oracles.hpp"
#include "support/planted.hpp"
#include "topicview/etm.hpp"

using namespace topicview;
using namespace etm_check;
namespace fs = std::filesystem;

namespace {

// Built once: the planted pipeline with per-epoch beta checks recorded.
struct PlantedRun {
  planted::Pipeline p;
  double worst_row_sum_error = 0.0;
  double min_beta = 1.0;
  std::size_t epochs_seen = 0;
};

const PlantedRun& planted_run() {
  static const PlantedRun run = [] {
    PlantedRun r;
    r.p = planted::build(2, [&r](std::size_t, double, const RowMatrix& beta) {
      ++r.epochs_seen;
      for (Eigen::Index k = 0; k < beta.rows(); ++k)
        r.worst_row_sum_error = std::max(r.worst_row_sum_error, std::abs(beta.row(k).sum() - 1.0));
      r.min_beta = std::min(r.min_beta, beta.minCoeff());
    });
    return r;
  }();
  return run;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(BetaFrom, ZeroAlphaGivesUniformRows) {
  std::mt19937_64 rng(1);
  const auto beta = beta_from(RowMatrix::Zero(3, 4), random_matrix(rng, 7, 4));
  for (Eigen::Index i = 0; i < beta.size(); ++i) EXPECT_NEAR(beta.data()[i], 1.0 / 7.0, 1e-15);
}

TEST(BetaFrom, ShiftInvariance) {
  // A constant column in rho lets one alpha coordinate add c to every logit.
  std::mt19937_64 rng(2);
  RowMatrix rho = random_matrix(rng, 9, 5);
  rho.col(4).setOnes();
  RowMatrix alpha = random_matrix(rng, 3, 5);
  alpha.col(4).setZero();
  const auto base = beta_from(alpha, rho);
  for (double c : {-50.0, -1.0, 0.5, 30.0, 300.0}) {
    alpha.col(4).setConstant(c);
    EXPECT_LT((beta_from(alpha, rho) - base).cwiseAbs().maxCoeff(), 1e-12) << c;
  }
}

TEST(BetaFrom, MatchesExtendedPrecisionOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto alpha = random_matrix(rng, 3, 4, 2.0);
    const auto rho = random_matrix(rng, 5, 4, 2.0);
    const auto beta = beta_from(alpha, rho);
    for (Eigen::Index k = 0; k < 3; ++k) {
      std::vector<long double> logits(5);
      for (Eigen::Index w = 0; w < 5; ++w)
        for (Eigen::Index d = 0; d < 4; ++d)
          logits[static_cast<std::size_t>(w)] += static_cast<long double>(rho(w, d)) * alpha(k, d);
      const auto expect = oracle::softmax_ld(logits);
      for (Eigen::Index w = 0; w < 5; ++w)
        EXPECT_NEAR(beta(k, w), static_cast<double>(expect[static_cast<std::size_t>(w)]), 1e-14);
    }
  }
}

TEST(BetaFrom, RowsAreDistributionsUnderExtremeLogits) {
  std::mt19937_64 rng(4);
  const auto beta = beta_from(random_matrix(rng, 4, 3, 200.0), random_matrix(rng, 50, 3, 10.0));
  EXPECT_TRUE(beta.allFinite());
  for (Eigen::Index k = 0; k < 4; ++k) EXPECT_NEAR(beta.row(k).sum(), 1.0, 1e-9);
  EXPECT_GE(beta.minCoeff(), 0.0);
}

TEST(BetaFrom, DimensionMismatch) {
  EXPECT_THROW(beta_from(RowMatrix::Zero(2, 3), RowMatrix::Zero(5, 4)), DimensionMismatch);
}

// ---------------------------------------------------------------------------

TEST(Encode, ZeroParamsGiveZeroOutputs) {
  const auto p = EncoderParams::zeros(6, 4, 3);
  Eigen::VectorXd x(6);
  x << 0.5, 0, 0.25, 0, 0, 0.25;
  const auto out = encode(x, p);
  EXPECT_EQ(out.mu, Eigen::VectorXd::Zero(3));
  EXPECT_EQ(out.logvar, Eigen::VectorXd::Zero(3));
  const auto empty = encode(Eigen::VectorXd::Zero(6), p);
  EXPECT_EQ(empty.mu, Eigen::VectorXd::Zero(3));
}

TEST(Encode, MatchesScalarArithmeticOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index V = 10, H = 6, K = 3;
    const auto p = random_params(rng, V, H, K);
    Eigen::VectorXd x = random_vector(rng, V).cwiseAbs();
    x /= x.sum();
    const auto out = encode(x, p);

    auto relu = [](long double v) { return v > 0 ? v : 0.0L; };
    std::vector<long double> h1(H), h2(H);
    for (Eigen::Index j = 0; j < H; ++j) {
      long double a = p.b1[j];
      for (Eigen::Index i = 0; i < V; ++i) a += static_cast<long double>(x[i]) * p.w1(i, j);
      h1[static_cast<std::size_t>(j)] = relu(a);
    }
    for (Eigen::Index j = 0; j < H; ++j) {
      long double a = p.b2[j];
      for (Eigen::Index i = 0; i < H; ++i) a += static_cast<long double>(p.w2(j, i)) * h1[static_cast<std::size_t>(i)];
      h2[static_cast<std::size_t>(j)] = relu(a);
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      long double mu = p.b_mu[k], lv = p.b_lv[k];
      for (Eigen::Index j = 0; j < H; ++j) {
        mu += static_cast<long double>(p.w_mu(k, j)) * h2[static_cast<std::size_t>(j)];
        lv += static_cast<long double>(p.w_lv(k, j)) * h2[static_cast<std::size_t>(j)];
      }
      EXPECT_NEAR(out.mu[k], static_cast<double>(mu), 1e-10);
      EXPECT_NEAR(out.logvar[k], static_cast<double>(lv), 1e-10);
    }
  }
}

TEST(Encode, BowAndDenseInputsAgreeAndAreDeterministic) {
  std::mt19937_64 rng(6);
  const auto p = random_params(rng, 8, 5, 2);
  BowVector bow{{{1, 2}, {4, 1}, {7, 5}}};
  Eigen::VectorXd dense = Eigen::VectorXd::Zero(8);
  dense[1] = 2.0 / 8.0;
  dense[4] = 1.0 / 8.0;
  dense[7] = 5.0 / 8.0;
  const auto a = encode(bow, p), b = encode(dense, p), c = encode(bow, p);
  EXPECT_LT((a.mu - b.mu).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(a.mu, c.mu);
  EXPECT_EQ(a.logvar, c.logvar);
  EXPECT_THROW(encode(Eigen::VectorXd::Zero(5), p), DimensionMismatch);
}

// ---------------------------------------------------------------------------

TEST(ThetaFrom, ZeroMeanZeroNoiseIsUniform) {
  std::mt19937_64 rng(7);
  const auto theta = theta_from(Eigen::VectorXd::Zero(4), random_vector(rng, 4), Eigen::VectorXd::Zero(4));
  for (double t : theta) EXPECT_NEAR(t, 0.25, 1e-15);
}

TEST(ThetaFrom, DrawsAreDistributions) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 1000; ++i) {
    const auto theta = theta_from(random_vector(rng, 5, 3.0), random_vector(rng, 5), random_vector(rng, 5));
    EXPECT_NEAR(theta.sum(), 1.0, 1e-9);
    EXPECT_GE(theta.minCoeff(), 0.0);
  }
}

TEST(ThetaFrom, MonteCarloMatchesIndependentSampler) {
  Eigen::VectorXd mu(3), lv(3);
  mu << 0.4, -1.0, 0.2;
  lv << -0.5, 0.3, 0.0;
  std::mt19937_64 lib_rng(9), ref_rng(9);
  std::normal_distribution<double> lib_n(0.0, 1.0), ref_n(0.0, 1.0);
  Eigen::VectorXd lib_mean = Eigen::VectorXd::Zero(3);
  std::vector<long double> ref_mean(3);
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    Eigen::VectorXd eps(3);
    for (auto& e : eps) e = lib_n(lib_rng);
    lib_mean += theta_from(mu, lv, eps);

    std::vector<long double> z(3);
    for (std::size_t k = 0; k < 3; ++k) {
      const long double e = ref_n(ref_rng);
      z[k] = mu[static_cast<Eigen::Index>(k)] + std::exp(0.5L * lv[static_cast<Eigen::Index>(k)]) * e;
    }
    const auto t = oracle::softmax_ld(z);
    for (std::size_t k = 0; k < 3; ++k) ref_mean[k] += t[k];
  }
  for (Eigen::Index k = 0; k < 3; ++k)
    EXPECT_NEAR(lib_mean[k] / draws, static_cast<double>(ref_mean[static_cast<std::size_t>(k)] / draws), 1e-12);
}

// ---------------------------------------------------------------------------

TEST(Elbo, SingleTopicMatchesHandFormula) {
  std::mt19937_64 rng(10);
  const auto p = random_params(rng, 6, 4, 1);
  const auto alpha = random_matrix(rng, 1, 3);
  const auto rho = random_matrix(rng, 6, 3);
  const BowVector doc{{{0, 2}, {3, 1}, {5, 4}}};
  const std::vector<BowVector> batch{doc};
  const std::vector<Eigen::VectorXd> noise{random_vector(rng, 1)};
  const auto r = elbo_and_grads(batch, p, alpha, rho, noise);

  std::vector<long double> logits(6);
  for (int w = 0; w < 6; ++w)
    for (int d = 0; d < 3; ++d) logits[static_cast<std::size_t>(w)] += static_cast<long double>(rho(w, d)) * alpha(0, d);
  const auto beta = oracle::softmax_ld(logits);
  long double ll = 0;
  for (const auto& [w, c] : doc.entries) ll += c * std::log(beta[static_cast<std::size_t>(w)]);
  const auto enc = encode(doc, p);
  const long double mu = enc.mu[0], lv = enc.logvar[0];
  const long double kl = -0.5L * (1.0L + lv - mu * mu - std::exp(lv));
  EXPECT_NEAR(r.log_likelihood, static_cast<double>(ll), 1e-10);
  EXPECT_NEAR(r.kl, static_cast<double>(kl), 1e-10);
  EXPECT_NEAR(r.elbo, static_cast<double>(ll - kl), 1e-10);
  EXPECT_GE(r.kl, 0.0);
}

TEST(Elbo, GradientsMatchFiniteDifferencesOnTwentyInstances) {
  for (std::uint64_t seed = 100; seed < 120; ++seed) EXPECT_LT(gradient_check(seed), 1e-4) << seed;
}

TEST(Elbo, AdditiveOverDocuments) {
  std::mt19937_64 rng(12);
  const auto p = random_params(rng, 8, 4, 3);
  const auto alpha = random_matrix(rng, 3, 2), rho = random_matrix(rng, 8, 2);
  std::vector<BowVector> batch{random_bow(rng, 8), random_bow(rng, 8), random_bow(rng, 8)};
  std::vector<Eigen::VectorXd> noise{random_vector(rng, 3), random_vector(rng, 3), random_vector(rng, 3)};
  const double base = elbo_and_grads(batch, p, alpha, rho, noise).elbo;
  const double single = elbo_and_grads(std::span(batch).subspan(1, 1), p, alpha, rho, std::span(noise).subspan(1, 1)).elbo;
  batch.push_back(batch[1]);
  noise.push_back(noise[1]);
  EXPECT_NEAR(elbo_and_grads(batch, p, alpha, rho, noise).elbo - base, single, 1e-8);
}

TEST(Elbo, RejectsEmptyBatchAndShapeErrors) {
  const auto p = EncoderParams::zeros(4, 2, 2);
  const RowMatrix alpha = RowMatrix::Zero(2, 3), rho = RowMatrix::Zero(4, 3);
  EXPECT_THROW(elbo_and_grads({}, p, alpha, rho, {}), InvariantError);
  const std::vector<BowVector> batch{BowVector{{{0, 1}}}};
  const std::vector<Eigen::VectorXd> noise{Eigen::VectorXd::Zero(2)};
  EXPECT_THROW(elbo_and_grads(batch, p, RowMatrix::Zero(3, 3), rho, noise), DimensionMismatch);
  EXPECT_THROW(elbo_and_grads(batch, p, alpha, rho, {}), DimensionMismatch);
}

TEST(Elbo, KlIsNonNegative) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 1000; ++i) EXPECT_GE(gaussian_kl(random_vector(rng, 4, 3.0), random_vector(rng, 4, 3.0)), 0.0);
}

// ---------------------------------------------------------------------------

TEST(TrainEtm, ConfigInvariants) {
  EtmConfig cfg;
  cfg.epochs = 0;
  const std::vector<BowVector> corpus{BowVector{{{0, 1}}}};
  EXPECT_THROW(train_etm(corpus, named(RowMatrix::Zero(2, 2)), cfg), ConfigError);
  cfg = {};
  cfg.topics = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TrainEtm, RejectsOutOfRangeTokenIds) {
  const std::vector<BowVector> corpus{BowVector{{{5, 1}}}};
  EtmConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_etm(corpus, named(RowMatrix::Zero(3, 2)), cfg), VocabMismatch);
}

TEST(TrainEtm, PlantedTopicsAreRecovered) {
  const auto& run = planted_run();
  const auto top = top_words(run.p.model, 10);
  ASSERT_EQ(top.size(), 2u);
  std::set<int> majority;
  for (const auto& words : top) {
    const double pa = oracle::purity(words, run.p.corpus.group_a);
    const double pb = oracle::purity(words, run.p.corpus.group_b);
    EXPECT_GE(std::max(pa, pb), 0.8);
    majority.insert(pa >= pb ? 0 : 1);
  }
  EXPECT_EQ(majority.size(), 2u) << "both topics collapsed onto one group";
}

TEST(TrainEtm, SimplexInvariantsHoldEveryEpoch) {
  const auto& run = planted_run();
  EXPECT_EQ(run.epochs_seen, 100u);
  EXPECT_LE(run.worst_row_sum_error, 1e-6);
  EXPECT_GE(run.min_beta, 0.0);
  EXPECT_EQ(run.p.model.meta.epoch_elbo.size(), 100u);
  EXPECT_LE(run.p.model.meta.theta_sum_error, 1e-6);
}

TEST(TrainEtm, ElboImproves) {
  const auto& e = planted_run().p.model.meta.epoch_elbo;
  ASSERT_EQ(e.size(), 100u);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += e[i];
    last += e[e.size() - 1 - i];
  }
  EXPECT_GT(last / 10, first / 10);
}

TEST(TrainEtm, SeededRunsAreBitIdentical) {
  std::mt19937_64 rng(14);
  std::vector<BowVector> corpus;
  for (int d = 0; d < 20; ++d) corpus.push_back(random_bow(rng, 10));
  const auto rho = named(random_matrix(rng, 10, 4));
  EtmConfig cfg;
  cfg.topics = 3;
  cfg.epochs = 5;
  cfg.hidden = 8;
  const auto a = train_etm(corpus, rho, cfg), b = train_etm(corpus, rho, cfg);
  EXPECT_EQ(std::memcmp(a.beta.data(), b.beta.data(), sizeof(double) * static_cast<std::size_t>(a.beta.size())), 0);
  EXPECT_EQ(a.meta.epoch_elbo, b.meta.epoch_elbo);
}

TEST(TrainEtm, JointEmbeddingTrainingMovesRho) {
  std::mt19937_64 rng(15);
  std::vector<BowVector> corpus;
  for (int d = 0; d < 20; ++d) corpus.push_back(random_bow(rng, 10));
  const auto rho = named(random_matrix(rng, 10, 4));
  EtmConfig cfg;
  cfg.topics = 2;
  cfg.epochs = 3;
  cfg.hidden = 8;
  const auto frozen = train_etm(corpus, rho, cfg);
  EXPECT_EQ(frozen.rho.vectors, rho.vectors);
  cfg.train_embeddings = true;
  const auto joint = train_etm(corpus, rho, cfg);
  EXPECT_GT((joint.rho.vectors - rho.vectors).cwiseAbs().maxCoeff(), 0.0);
  for (Eigen::Index k = 0; k < 2; ++k) EXPECT_NEAR(joint.beta.row(k).sum(), 1.0, 1e-9);
}

// ---------------------------------------------------------------------------

TopicModel model_with_beta(RowMatrix beta) {
  TopicModel m;
  m.alpha = RowMatrix::Zero(beta.rows(), 1);
  m.rho = named(RowMatrix::Zero(beta.cols(), 1));
  m.beta = std::move(beta);
  for (Eigen::Index k = 0; k < m.beta.rows(); ++k) m.ranking.push_back(rank_row(m.beta, k));
  return m;
}

TEST(TopWords, OneHotRowLeadsWithItsToken) {
  RowMatrix beta = RowMatrix::Zero(2, 5);
  beta(0, 3) = 1.0;
  beta(1, 0) = 1.0;
  const auto top = top_words(model_with_beta(beta), 2);
  EXPECT_EQ(top[0], (std::vector<std::string>{"w3", "w0"}));
  EXPECT_EQ(top[1], (std::vector<std::string>{"w0", "w1"}));
}

TEST(TopWords, FullLengthIsPermutation) {
  std::mt19937_64 rng(16);
  const auto m = model_with_beta(beta_from(random_matrix(rng, 3, 2), random_matrix(rng, 9, 2)));
  for (auto ids : top_word_ids(m, 9)) {
    std::sort(ids.begin(), ids.end());
    for (int i = 0; i < 9; ++i) EXPECT_EQ(ids[static_cast<std::size_t>(i)], i);
  }
  EXPECT_THROW(top_word_ids(m, 10), InsufficientTopWords);
}

TEST(TopWords, MatchesFullSortOracleWithTies) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    // Quantized weights force ties; ties must resolve by ascending id.
    RowMatrix beta(3, 20);
    for (Eigen::Index i = 0; i < beta.size(); ++i) beta.data()[i] = static_cast<double>(rng() % 5);
    const auto ids = top_word_ids(model_with_beta(beta), 7);
    for (Eigen::Index k = 0; k < 3; ++k) {
      std::vector<std::pair<double, int>> all;
      for (int w = 0; w < 20; ++w) all.emplace_back(-beta(k, w), w);
      std::sort(all.begin(), all.end());
      for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(ids[static_cast<std::size_t>(k)][i], all[i].second);
    }
  }
}

// ---------------------------------------------------------------------------

TEST(ModelFile, RoundTripAndMismatch) {
  std::mt19937_64 rng(18);
  const auto rho = named(random_matrix(rng, 6, 3));
  const auto m = make_topic_model(random_matrix(rng, 2, 3), rho, {});
  const auto dir = fs::temp_directory_path() / "topicview_etm_test";
  fs::create_directories(dir);
  const auto path = dir / "model.json";
  save_model(m, path);
  const auto back = load_model(path, rho);
  EXPECT_EQ(back.alpha, m.alpha);
  EXPECT_EQ(back.beta, m.beta);
  EXPECT_EQ(back.ranking, m.ranking);
  EXPECT_EQ(back.meta.vocab_hash, rho.vocab_hash());

  auto renamed = rho;
  renamed.tokens[0] = "other";
  EXPECT_THROW(load_model(path, renamed), ArtifactMismatch);
  const auto wider = named(random_matrix(rng, 6, 4));
  EXPECT_THROW(load_model(path, wider), ArtifactMismatch);
  std::ofstream(dir / "broken.json") << "{\"version\": 1, \"K\": 2";
  EXPECT_THROW(load_model(dir / "broken.json", rho), ParseError);
}
