#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "thpn/metrics.hpp"
#include "thpn/training.hpp"

namespace thpn {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitCheckpoint = 3;

struct GenDataArgs {
  std::string out_dir;
  int n_dialogues = 100;
  int n_restaurants = 6;
  std::string style = "slots";
  std::string split = "80/10/10";
  std::uint64_t seed = 1;
};

struct TrainArgs {
  std::string data_dir;  // expects train.jsonl and valid.jsonl
  std::string out_dir;   // receives thpn.ckpt, train_log.jsonl, train_config.json
  Hyperparams hp;
  bool quiet = false;
};

struct EvalArgs {
  std::string ckpt_path;
  std::string data_dir;  // train.jsonl rebuilds the repository; <split>.jsonl is scored
  std::string split = "test";
  std::string report_path;           // defaults to <data>/report.json
  std::string dump_path;             // optional per-example JSONL
  std::string save_retrieval_path;   // optional retrieval cache out
  std::string load_retrieval_path;   // optional retrieval cache in
  std::optional<double> theta_override;
  std::optional<std::string> method_override;
  std::optional<int> dim_check;  // must match the checkpoint when given
  std::optional<int> max_len_override;
};

struct SweepArgs {
  std::string ckpt_path;
  std::string data_dir;
  std::string split = "test";
  std::vector<double> thetas = {0.3, 0.4, 0.5, 0.6, 1.0};
  std::string report_path;  // defaults to <data>/theta_sweep.json
  std::optional<std::uint64_t> seed_override;
};

struct ChatArgs {
  std::string ckpt_path;
  std::string data_dir;
  bool color = true;
  std::optional<std::uint64_t> seed_override;
};

int cmd_gen_data(const GenDataArgs& args);
int cmd_train(const TrainArgs& args);
int cmd_eval(const EvalArgs& args, MetricsReport* report_out = nullptr);
int cmd_sweep_theta(const SweepArgs& args);
int cmd_chat(const ChatArgs& args, std::istream& in, std::ostream& out);

}  // namespace thpn
