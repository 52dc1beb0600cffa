#pragma once

// The CLI subcommands. Each one is a plain function over an AppConfig so the
// binary, the service and the tests run the same code.

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "topicview/config.hpp"
#include "topicview/corpus.hpp"
#include "topicview/embeddings.hpp"
#include "topicview/etm.hpp"
#include "topicview/metrics.hpp"
#include "topicview/service.hpp"
#include "topicview/temporal.hpp"

namespace topicview {

// Validates the JSONL file and stores each session as
// transcripts/<session_id>.jsonl, replacing an earlier copy.
inline std::vector<Session> cmd_ingest(const AppConfig& config, const std::filesystem::path& jsonl,
                                       std::ostream& log) {
  auto sessions = load_transcripts(jsonl);
  std::filesystem::create_directories(config.transcripts_dir());
  for (const auto& s : sessions) {
    if (s.session_id.find_first_of("/\\") != std::string::npos || s.session_id.empty() || s.session_id[0] == '.')
      throw InvariantError("session id '" + s.session_id + "' cannot be used as a file name");
    save_transcripts(std::span(&s, 1), config.transcripts_dir() / (s.session_id + ".jsonl"));
    log << "ingested " << s.session_id << " (" << s.turns.size() << " turns)\n";
  }
  return sessions;
}

// Sessions the topic model trains on: all of them, or one condition.
inline std::vector<Session> training_sessions(const AppConfig& config) {
  auto sessions = load_transcript_dir(config.transcripts_dir());
  if (config.etm_condition.empty()) return sessions;
  std::erase_if(sessions, [&](const Session& s) { return s.condition_tag != config.etm_condition; });
  if (sessions.empty()) throw ConfigError("no sessions with condition '" + config.etm_condition + "'");
  return sessions;
}

inline SgnsModel cmd_train_embeddings(const AppConfig& config, std::ostream& log) {
  const auto sessions = load_transcript_dir(config.transcripts_dir());
  if (sessions.empty()) throw ConfigError("no transcripts under " + config.transcripts_dir().string());
  const auto docs = make_documents(sessions, config.document_unit);
  const auto lists = token_lists(docs);
  const auto vocab = build_vocabulary(lists, config.vocab);
  std::vector<std::vector<std::int32_t>> ids;
  ids.reserve(lists.size());
  for (const auto& l : lists) ids.push_back(to_ids(l, vocab));
  log << "vocabulary: " << vocab.size() << " tokens over " << vocab.total_docs() << " documents\n";

  auto model = train_sgns(ids, vocab, config.sgns);
  for (std::size_t e = 0; e < model.epoch_loss.size(); ++e)
    log << "sgns epoch " << e + 1 << " loss " << model.epoch_loss[e] << '\n';
  if (!model.deterministic) log << "note: fast mode, embeddings are not reproducible\n";

  std::filesystem::create_directories(config.artifacts_dir());
  save_vocabulary(vocab, config.vocab_path());
  save_embeddings(model.embeddings, config.embeddings_path());
  return model;
}

inline std::vector<BowVector> bows_for(std::span<const Session> sessions, const AppConfig& config,
                                       const Vocabulary& vocab) {
  std::vector<BowVector> bows;
  for (const auto& d : make_documents(sessions, config.document_unit)) bows.push_back(to_bow(d.tokens, vocab));
  return bows;
}

inline TopicModel cmd_train_etm(const AppConfig& config, std::ostream& log) {
  const auto vocab = load_vocabulary(config.vocab_path(), config.vocab);
  const auto rho = load_embeddings(config.embeddings_path());
  if (vocab.hash() != rho.vocab_hash())
    throw ArtifactMismatch("embeddings and vocabulary disagree; rerun train-embeddings");
  const auto sessions = training_sessions(config);
  const auto bows = bows_for(sessions, config, vocab);
  log << "training " << config.etm.topics << " topics on " << bows.size() << " documents\n";

  auto model = train_etm(bows, rho, config.etm, [&](std::size_t epoch, double elbo, const RowMatrix&) {
    if ((epoch + 1) % 10 == 0 || epoch == 0) log << "etm epoch " << epoch + 1 << " elbo " << elbo << '\n';
  });
  save_model(model, config.model_path());
  if (config.etm.train_embeddings) save_embeddings(model.rho, config.embeddings_path());
  return model;
}

struct Snapshot {
  Vocabulary vocab;
  EmbeddingMatrix rho;
  TopicModel model;
};

inline Snapshot load_snapshot(const AppConfig& config) {
  Snapshot s;
  s.vocab = load_vocabulary(config.vocab_path(), config.vocab);
  s.rho = load_embeddings(config.embeddings_path());
  if (s.vocab.hash() != s.rho.vocab_hash()) throw ArtifactMismatch("embeddings and vocabulary disagree");
  s.model = load_model(config.model_path(), s.rho);
  return s;
}

inline TopicScoreSeries cmd_score(const AppConfig& config, const std::string& session_id, std::ostream& csv) {
  const auto snap = load_snapshot(config);
  for (const auto& s : load_transcript_dir(config.transcripts_dir())) {
    if (s.session_id != session_id) continue;
    auto series = score_session(s, snap.model, snap.vocab, snap.rho, config.topic_words);
    write_scores_csv(series, csv);
    return series;
  }
  throw IndexError("no session '" + session_id + "'");
}

inline EvalReport cmd_eval(const AppConfig& config, std::ostream& csv, std::ostream& table,
                           const EvalOptions& base = {}) {
  const auto snap = load_snapshot(config);
  const auto sessions = training_sessions(config);
  const auto docs = make_documents(sessions, config.document_unit);
  const auto refs = reference_docs(token_lists(docs));
  EvalOptions opt = base;
  opt.condition = config.etm_condition.empty() ? "all" : config.etm_condition;
  const auto report = evaluate(snap.model, refs, opt);
  write_eval_csv(std::span(&report, 1), csv);
  write_eval_table(std::span(&report, 1), table);
  if (report.zero_df_pairs)
    table << report.zero_df_pairs << " word pair(s) had a conditioning word absent from the reference documents\n";
  return report;
}

inline std::vector<TopicSummary> cmd_topics(const AppConfig& config, std::ostream& out, std::size_t n = 10) {
  const auto snap = load_snapshot(config);
  auto topics = topic_summaries(snap.model, n);
  write_topics(topics, out);
  return topics;
}

}  // namespace topicview
