#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "thpn/model.hpp"
#include "thpn/retrieval.hpp"

namespace thpn {

struct Hyperparams {
  int dim = 256;
  int hops = 3;
  double lr = 1e-4;
  double clip = 10.0;
  double dropout = 0.4;
  int epochs = 10;
  int batch_size = 1;  // per-example updates by default
  std::uint64_t seed = 1;
  double theta = 0.8;
  int max_candidates = 3;
  std::string method = "cosine";  // bm25 | cosine | external
  std::string external_vector_file;
  std::string pretrained_embedding_file;
  bool no_ir = false;
  bool no_ptr = false;
  bool no_gate = false;
  bool mask_history_new = true;   // R_h masking
  bool mask_retrieved_ew = true;  // R_r masking
  int max_len = 30;
  bool learned_query_init = false;
  std::string val_metric = "accuracy";  // accuracy | bleu
  double loss_w_vocab = 1.0;
  double loss_w_history = 1.0;
  double loss_w_retrieved = 1.0;
};

std::string serialize_hyperparams(const Hyperparams& hp);  // canonical key=value text
Hyperparams parse_hyperparams(const std::string& text);

ModelConfig model_config_from(const Hyperparams& hp, int vocab_size);

struct PointerTargets {
  std::vector<int> vocab_t;
  std::vector<int> history_t;    // position in the context, sentinel when absent
  std::vector<int> retrieved_t;  // position in the flat answers, sentinel when absent
};

// One target triple per gold step. The gold sequence must already carry the
// EOS marker. Pointer targets take the LAST unmasked matching position; a
// disabled masking flag widens the match to every non-sentinel position.
PointerTargets build_targets(const TokenList& gold_with_eos, const EncodedContext& ctx,
                             const RetrievedAnswers& retrieved, const Vocabulary& vocab,
                             bool mask_history_new, bool mask_retrieved_ew);

// Mean over steps of the three negative log likelihoods (pointer terms
// dropped under no_ptr).
Tensor sequence_loss(const std::vector<StepOutput>& steps, const PointerTargets& targets,
                     const Hyperparams& hp);

struct NamedTensorF32 {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  Hyperparams hp;
  std::vector<std::string> vocab_tokens;
  std::vector<NamedTensorF32> tensors;
};

Checkpoint snapshot(const ThpnModel& model, const Hyperparams& hp);
void apply_checkpoint(const Checkpoint& ckpt, ThpnModel& model);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the seed-deterministic initial model (whose M^1 reproduces the
// training-time repository vectors), then applies the stored tensors.
struct LoadedModel {
  Checkpoint ckpt;
  ThpnModel model;
  Mat initial_encoder_embedding;  // pre-apply snapshot for repository builds
};
LoadedModel load_model(const std::string& path);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double seconds = 0.0;
};

struct TrainOutput {
  Checkpoint best;
  std::vector<EpochLog> logs;
};

// Teacher-forced training with per-example (or accumulated-batch) Adam
// updates, global-norm clipping and best-checkpoint selection on the
// validation metric. Deterministic under hp.seed. `repo_override` replaces
// the internally built repository (its query counter then observes every
// retrieval the run makes).
TrainOutput train(const std::vector<Dialogue>& train_set,
                  const std::vector<Dialogue>& valid_set, const Hyperparams& hp,
                  const std::function<void(const EpochLog&)>& on_epoch = nullptr,
                  const QARepository* repo_override = nullptr);

struct RetrievalCache {
  std::vector<std::vector<int>> pair_ids;  // per query ordinal
  std::vector<std::vector<double>> scores;
};

struct DecodeResult {
  std::vector<TokenList> references;
  std::vector<TokenList> hypotheses;
  std::vector<std::vector<GenStep>> provenance;
  std::vector<int> retrieved_counts;
  std::vector<std::string> domains;                    // per response
  std::vector<std::pair<int, int>> example_ids;        // (dialogue, turn)
  std::vector<std::vector<ScoredAnswer>> retrievals;   // per response
};

// Greedy decoding over every turn of `data` with gold history. No
// self-retrieval exclusion (test-time behavior). When `cache` is given the
// retrieval results are replayed from it instead of scored.
DecodeResult decode_corpus(ThpnModel& model, const std::vector<Dialogue>& data,
                           const QARepository* repo, const RetrievalConfig& rcfg,
                           const Hyperparams& hp,
                           const std::unordered_set<std::string>& global_entities,
                           const RetrievalCache* cache = nullptr);

std::unordered_set<std::string> corpus_entity_set(const std::vector<Dialogue>& dialogues);

// Flips requires_grad off for the scope (decoding does not need the tape).
class NoGradGuard {
 public:
  explicit NoGradGuard(ThpnModel& model) : model_(model) {
    model_.params().set_requires_grad(false);
  }
  ~NoGradGuard() { model_.params().set_requires_grad(true); }

 private:
  ThpnModel& model_;
};

}  // namespace thpn
