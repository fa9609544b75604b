#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "thpn/commands.hpp"

namespace {

// Shared hyperparameter flags; every key is also settable from the config
// file ([subcommand] key=value), with the command line taking precedence.
void add_hyperparam_flags(CLI::App* cmd, thpn::Hyperparams& hp) {
  cmd->add_option("--seed", hp.seed, "rng seed");
  cmd->add_option("--theta", hp.theta, "retrieval similarity threshold in (0,1]");
  cmd->add_option("--method", hp.method, "retrieval backend: bm25|cosine|external")
      ->check(CLI::IsMember({"bm25", "cosine", "external"}));
  cmd->add_option("--hops", hp.hops, "encoder memory hops");
  cmd->add_option("--dim", hp.dim, "model dimension");
  cmd->add_option("--lr", hp.lr, "Adam learning rate");
  cmd->add_option("--clip", hp.clip, "global gradient-norm clip threshold");
  cmd->add_option("--dropout", hp.dropout, "GRU input/output dropout rate");
  cmd->add_option("--epochs", hp.epochs, "training epochs");
  cmd->add_option("--batch-size", hp.batch_size, "examples per optimizer step");
  cmd->add_option("--max-len", hp.max_len, "max decoded tokens");
  cmd->add_flag("--no-ir", hp.no_ir, "ablation: drop retrieval guidance");
  cmd->add_flag("--no-ptr", hp.no_ptr, "ablation: drop both pointer networks");
  cmd->add_flag("--no-gate", hp.no_gate, "ablation: bypass the answer gate");
  cmd->add_flag(
      "--no-mask-history",
      [&hp](std::int64_t) { hp.mask_history_new = false; },
      "disable R_h masking");
  cmd->add_flag(
      "--no-mask-retrieved",
      [&hp](std::int64_t) { hp.mask_retrieved_ew = false; },
      "disable R_r masking");
  cmd->add_option("--val-metric", hp.val_metric, "validation metric: accuracy|bleu")
      ->check(CLI::IsMember({"accuracy", "bleu"}));
  cmd->add_option("--external-vectors", hp.external_vector_file,
                  "JSON-lines file of precomputed question vectors");
  cmd->add_option("--embeddings", hp.pretrained_embedding_file,
                  "token-vector text file loaded into the embedding tables");
  cmd->add_flag("--learned-query-init", hp.learned_query_init,
                "use a learned encoder query instead of the last-utterance mean");
}

}  // namespace

int main(int argc, char** argv) {
  // hoist --config ahead of the subcommand so it may be written anywhere
  std::vector<char*> args;
  std::vector<char*> config_pair;
  for (int i = 0; i < argc; ++i) {
    if (std::string(argv[i]) == "--config" && i + 1 < argc) {
      config_pair.push_back(argv[i]);
      config_pair.push_back(argv[++i]);
    } else {
      args.push_back(argv[i]);
    }
  }
  args.insert(args.begin() + 1, config_pair.begin(), config_pair.end());
  argc = static_cast<int>(args.size());
  argv = args.data();

  CLI::App app{"template-guided hybrid pointer network for task-oriented dialogue"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file with [subcommand] sections");

  thpn::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dialogue corpus")->configurable();
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  gen_cmd->add_option("--n-dialogues", gen.n_dialogues, "dialogue count");
  gen_cmd->add_option("--n-restaurants", gen.n_restaurants, "restaurant pool size (>= 4)");
  gen_cmd->add_option("--style", gen.style, "slots|kb_lookup|full")
      ->check(CLI::IsMember({"slots", "kb_lookup", "full"}));
  gen_cmd->add_option("--split", gen.split, "train/valid/test percentages, e.g. 80/10/10");
  gen_cmd->add_option("--seed", gen.seed, "rng seed");

  thpn::TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model on a generated corpus")->configurable();
  train_cmd->add_option("--data", train.data_dir, "directory with train.jsonl/valid.jsonl")
      ->required();
  train_cmd->add_option("--out", train.out_dir, "output directory")->required();
  train_cmd->add_flag("--quiet", train.quiet, "suppress per-epoch stdout lines");
  add_hyperparam_flags(train_cmd, train.hp);

  thpn::EvalArgs eval;
  double eval_theta = -1.0;
  std::string eval_method;
  int eval_dim = -1;
  int eval_max_len = -1;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a test split")->configurable();
  eval_cmd->add_option("--ckpt", eval.ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data_dir, "directory with train.jsonl and the split")
      ->required();
  eval_cmd->add_option("--split", eval.split, "split name to score (default test)");
  eval_cmd->add_option("--report", eval.report_path, "report JSON path");
  eval_cmd->add_option("--dump", eval.dump_path, "per-example JSONL dump path");
  eval_cmd->add_option("--save-retrieval", eval.save_retrieval_path,
                       "write the retrieval cache JSONL");
  eval_cmd->add_option("--load-retrieval", eval.load_retrieval_path,
                       "replay retrieval from a cache JSONL");
  eval_cmd->add_option("--theta", eval_theta, "override the checkpoint theta");
  eval_cmd->add_option("--method", eval_method, "override the retrieval backend")
      ->check(CLI::IsMember({"bm25", "cosine", "external"}));
  eval_cmd->add_option("--dim", eval_dim, "assert the checkpoint dimension");
  eval_cmd->add_option("--max-len", eval_max_len, "override max decoded tokens");
  eval_cmd->add_option("--seed", eval_seed,
                       "accepted for interface parity; decoding is deterministic");

  thpn::SweepArgs sweep;
  std::uint64_t sweep_seed = 0;
  auto* sweep_cmd = app.add_subcommand("sweep-theta", "re-evaluate across theta values")->configurable();
  sweep_cmd->add_option("--ckpt", sweep.ckpt_path, "checkpoint file")->required();
  sweep_cmd->add_option("--data", sweep.data_dir, "data directory")->required();
  sweep_cmd->add_option("--split", sweep.split, "split name (default test)");
  sweep_cmd->add_option("--thetas", sweep.thetas, "theta values to sweep");
  sweep_cmd->add_option("--report", sweep.report_path, "report JSON path");
  auto* sweep_seed_opt = sweep_cmd->add_option("--seed", sweep_seed, "rng seed");

  thpn::ChatArgs chat;
  std::uint64_t chat_seed = 0;
  auto* chat_cmd = app.add_subcommand("chat", "interactive REPL over a checkpoint")->configurable();
  chat_cmd->add_option("--ckpt", chat.ckpt_path, "checkpoint file")->required();
  chat_cmd->add_option("--data", chat.data_dir, "data directory (rebuilds the repository)")
      ->required();
  chat_cmd->add_flag("!--no-color", chat.color, "disable ANSI provenance colors");
  auto* chat_seed_opt = chat_cmd->add_option("--seed", chat_seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return thpn::cmd_gen_data(gen);
    if (train_cmd->parsed()) return thpn::cmd_train(train);
    if (eval_cmd->parsed()) {
      if (eval_theta > 0.0) eval.theta_override = eval_theta;
      if (!eval_method.empty()) eval.method_override = eval_method;
      if (eval_dim > 0) eval.dim_check = eval_dim;
      if (eval_max_len > 0) eval.max_len_override = eval_max_len;
      return thpn::cmd_eval(eval);
    }
    if (sweep_cmd->parsed()) {
      if (sweep_seed_opt->count() > 0) sweep.seed_override = sweep_seed;
      return thpn::cmd_sweep_theta(sweep);
    }
    if (chat_cmd->parsed()) {
      if (chat_seed_opt->count() > 0) chat.seed_override = chat_seed;
      return thpn::cmd_chat(chat, std::cin, std::cout);
    }
  } catch (const thpn::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return thpn::kExitUsage;
  } catch (const thpn::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return thpn::kExitCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return thpn::kExitData;
  }
  return thpn::kExitUsage;
}
