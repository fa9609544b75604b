#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "thpn/corpus.hpp"
#include "thpn/ops.hpp"
#include "thpn/retrieval.hpp"

namespace thpn {

struct ModelConfig {
  int vocab_size = 0;
  int dim = 256;
  int hops = 3;  // encoder hop count K; the decoder memory always runs 3
  double dropout = 0.4;
  bool learned_query_init = false;
  bool no_ir = false;
  bool no_ptr = false;
  bool no_gate = false;
  bool mask_history_new = true;
  bool mask_retrieved_ew = true;
};

// Ordered, named parameter registry; the order fixes both the Adam state
// layout and the checkpoint tensor order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<Tensor> tensors() const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  void zero_grads();
  void set_requires_grad(bool b);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

enum class Provenance { Vocab, History, Retrieved };
const char* provenance_name(Provenance p);

struct GenStep {
  std::string token;
  Provenance provenance = Provenance::Vocab;
  int source_pos = -1;  // memory position for pointer copies, vocab id otherwise
};

struct StepOutput {
  Tensor h;    // recurrent state after the GRU
  Tensor p_v;  // vocabulary distribution (V)
  Tensor p_h;  // history pointer distribution (n, sentinel last)
  Tensor p_r;  // retrieved pointer distribution (m, sentinel last)
  std::vector<Tensor> dec_attention;  // p_o^1..p_o^3 over the joint memory
};

class ThpnModel {
 public:
  ThpnModel(const ModelConfig& cfg, const Vocabulary& vocab, RngState& rng);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Mat& encoder_embedding() const;  // M^1 snapshot for retrieval vectors

  // Optional pretrained-embedding hook: "token v1 v2 ..." lines loaded into
  // M^1 and the decoder embedding; unknown tokens keep their init.
  int load_pretrained_embeddings(const std::string& path);

  std::size_t gate_calls() const { return gate_calls_; }

  // Per-example forward state. Memory embeddings are built once and reused
  // across decode steps; h_prev threads the recurrent state.
  struct Forward {
    const EncodedContext* ctx = nullptr;
    const RetrievedAnswers* retrieved = nullptr;
    bool training = false;
    RngState* rng = nullptr;
    int n = 0;  // history segment length (sentinel included)
    int m = 0;  // retrieved segment length (sentinel included)
    std::vector<Tensor> enc_mem;  // hops+1 tables -> (n x d)
    std::vector<Tensor> hops;     // c^1..c^K
    Tensor q_init;                // q^1
    Tensor q_final;               // q^{K+1}
    Tensor h_a;
    std::vector<Tensor> dec_mem;  // 4 tables -> (n+m x d)
    std::vector<std::uint8_t> hop2_keep, hop3_keep;  // decoder segment masks
    std::vector<std::uint8_t> allow_h, allow_r;      // copy masks (sentinel kept)
    std::vector<Tensor> enc_attention;               // encoder p^k, introspection
    Tensor h_prev;
    int t = 0;
  };

  Forward prepare(const EncodedContext& ctx, const RetrievedAnswers& retrieved,
                  bool training, RngState& rng);

  // One decode step: builds h*_{t-1} (h_a at t=1), runs the GRU, the decoder
  // memory hops, and the three output distributions.
  StepOutput step(Forward& fwd, int prev_token_id);

  GenStep select_token(const StepOutput& out, const EncodedContext& ctx,
                       const RetrievedAnswers& retrieved) const;

  std::vector<GenStep> generate(const EncodedContext& ctx, const RetrievedAnswers& retrieved,
                                int max_len, RngState& rng);

  // Exposed pieces (also used by tests)
  Tensor encode_answers(const Tensor& c_last, const std::vector<int>& answer_token_ids);
  Tensor hop_attention(const Tensor& h_prev, const std::vector<Tensor>& hops);
  Tensor gate(const Tensor& h_a, const Tensor& h_prev);
  Tensor gru_cell(const Tensor& x, const Tensor& h) const;

  std::vector<std::vector<int>> feature_bags(const std::vector<MemoryItem>& items) const;

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  ParamStore params_;
  std::vector<Tensor> enc_tables_;  // M^1..M^{K+1}
  std::vector<Tensor> dec_tables_;  // D^1..D^4
  Tensor ans_w1_, ans_w2_;
  Tensor emb_;  // decoder token embedding
  Tensor gru_wz_, gru_wr_, gru_wn_, gru_uz_, gru_ur_, gru_un_, gru_bz_, gru_br_, gru_bn_;
  Tensor attn_w_, attn_v_;
  Tensor ws_, wv_;
  Tensor q0_;  // learned query init (only when configured)
  mutable std::size_t gate_calls_ = 0;

  Tensor query_init(const EncodedContext& ctx);
};

int argmax(const Tensor& probs);

}  // namespace thpn
