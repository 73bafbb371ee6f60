#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prccf/app.hpp"
#include "prccf/errors.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace prccf;

  CLI::App cli{"Persona-guided retrieval and causality-aware cognitive filtering for emotional support dialogue"};
  cli.require_subcommand(0, 1);
  std::string config_path;
  std::vector<std::string> overrides;
  bool dump_config = false;
  cli.add_option("-c,--config", config_path, "JSON config file");
  cli.add_option("--set", overrides, "Override a config key: --set training.lr=1e-4")->allow_extra_args(false);
  cli.add_flag("--dump-config", dump_config, "Print the resolved config with provenance and exit");

  auto* ingest = cli.add_subcommand("ingest", "Load the corpus, attach personas, split, build the vocabulary");
  auto* index = cli.add_subcommand("index", "Build the persona-aware retrieval index from the train split");
  auto* train = cli.add_subcommand("train", "Train and keep the checkpoint with the lowest validation PPL");
  auto* eval = cli.add_subcommand("eval", "Evaluate a checkpoint on the configured split");
  auto* ablate = cli.add_subcommand("ablate", "Train and evaluate the full model and its ablations");
  auto* sweep = cli.add_subcommand("sweep-pairs", "Sweep the number of retrieved demonstration pairs");
  auto* chat = cli.add_subcommand("chat", "Interactive support chat on stdin/stdout");

  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: the train output)");
  chat->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: the train output)");
  std::string variants;
  ablate->add_option("--variants", variants, "Comma-separated subset of: PRCCF,w/o PR,w/o Per_sim,w/o CCF,w/o Causal,w/o Filter");
  std::vector<int> pairs_values;
  sweep->add_option("--values", pairs_values, "Pairs values (default: sweep.pairs)");

  CLI11_PARSE(cli, argc, argv);

  try {
    const auto resolved = config::resolve(config_path, overrides);
    if (dump_config) {
      std::cout << resolved.dump();
      return 0;
    }
    const auto cfg = resolved.build();

    if (ingest->parsed()) {
      app::cmd_ingest(cfg, std::cout);
    } else if (index->parsed()) {
      app::cmd_index(cfg, std::cout);
    } else if (train->parsed()) {
      app::cmd_train(cfg, resolved.fingerprint(), std::cout);
    } else if (eval->parsed()) {
      app::cmd_eval(cfg, checkpoint, std::cout);
    } else if (ablate->parsed()) {
      auto table = fusion::ablation_table();
      if (!variants.empty()) {
        std::vector<fusion::NamedAblation> chosen;
        for (const auto& name : split_list(variants)) {
          auto it = std::find_if(table.begin(), table.end(), [&](const auto& v) { return v.name == name; });
          if (it == table.end()) throw ConfigError("unknown ablation variant '" + name + "'");
          chosen.push_back(*it);
        }
        table = chosen;
      }
      app::cmd_ablate(cfg, table, std::cout);
    } else if (sweep->parsed()) {
      app::cmd_sweep_pairs(cfg, pairs_values.empty() ? cfg.sweep_pairs : pairs_values, std::cout);
    } else if (chat->parsed()) {
      app::cmd_chat(cfg, checkpoint, std::cin, std::cout);
    } else {
      std::cout << cli.help();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return app::exit_code_for(e);
  }
  return 0;
}
