#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "topicview/topicview.hpp"

namespace {

topicview::ApiServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw topicview::Error("cannot write " + p.string());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace topicview;
  CLI::App app{"topicview: turn-level topic analytics for dialogue transcripts"};
  app.require_subcommand(1);

  std::string config_path = "topicview.toml";
  std::string data_dir;
  app.add_option("-c,--config", config_path, "TOML config file (defaults apply when absent)");
  app.add_option("--data-dir", data_dir, "override [corpus] data_dir");

  std::string jsonl;
  auto* ingest = app.add_subcommand("ingest", "validate a JSONL transcript file and add it to the store");
  ingest->add_option("jsonl", jsonl, "transcript file")->required()->check(CLI::ExistingFile);

  auto* train_emb = app.add_subcommand("train-embeddings", "build the vocabulary and train word embeddings");
  auto* train_etm_cmd = app.add_subcommand("train-etm", "train the topic model over the stored embeddings");

  std::string session_id, out_path;
  auto* score = app.add_subcommand("score", "write per-turn topic scores for one session as CSV");
  score->add_option("session_id", session_id)->required();
  score->add_option("--out", out_path, "CSV path (stdout when omitted)");

  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "topic coherence and diversity of the trained model");
  eval->add_option("--out", eval_out, "CSV path (stdout when omitted)");

  std::size_t n_words = 10;
  auto* topics = app.add_subcommand("topics", "list each topic's top words with weights");
  topics->add_option("-n", n_words, "words per topic")->check(CLI::PositiveNumber);

  int port = -1;
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  serve->add_option("--port", port, "listen port (default from config, 8080)");
  serve->add_option("--data-dir", data_dir, "override [corpus] data_dir");

  CLI11_PARSE(app, argc, argv);

  try {
    AppConfig config = std::filesystem::exists(config_path) ? load_config(config_path) : AppConfig{};
    if (!data_dir.empty()) config.data_dir = data_dir;

    if (*ingest) {
      cmd_ingest(config, jsonl, std::cerr);
    } else if (*train_emb) {
      cmd_train_embeddings(config, std::cerr);
    } else if (*train_etm_cmd) {
      cmd_train_etm(config, std::cerr);
    } else if (*score) {
      if (out_path.empty()) {
        cmd_score(config, session_id, std::cout);
      } else {
        auto out = open_out(out_path);
        cmd_score(config, session_id, out);
      }
    } else if (*eval) {
      if (eval_out.empty()) {
        cmd_eval(config, std::cout, std::cerr);
      } else {
        auto out = open_out(eval_out);
        cmd_eval(config, out, std::cout);
      }
    } else if (*topics) {
      cmd_topics(config, std::cout, n_words);
    } else if (*serve) {
      if (port >= 0) config.server.port = port;
      AppState state(config);
      ApiServer server(state);
      const int bound = server.bind(config.server.host, config.server.port);
      if (bound < 0) throw Error("cannot bind " + config.server.host + ":" + std::to_string(config.server.port));
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cerr << "serving " << state.sessions().size() << " sessions, K=" << state.model().topics() << " on http://"
                << config.server.host << ':' << bound << '\n';
      server.listen();
      g_server = nullptr;
    }
  } catch (const std::exception& e) {
    std::cerr << "topicview: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
