#include "thpn/model.hpp"

#include <fstream>
#include <sstream>

#include "thpn/init.hpp"

namespace thpn {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  items_.emplace_back(name, t);
  return t;
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw ConfigError("unknown parameter: " + name);
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw ConfigError("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [n, t] : items_) out.push_back(t);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& [n, t] : items_) t.zero_grad();
}

void ParamStore::set_requires_grad(bool b) {
  for (auto& [n, t] : items_) t.set_requires_grad(b);
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Vocab: return "vocab";
    case Provenance::History: return "history";
    default: return "retrieved";
  }
}

ThpnModel::ThpnModel(const ModelConfig& cfg, const Vocabulary& vocab, RngState& rng)
    : cfg_(cfg), vocab_(vocab) {
  if (cfg.vocab_size != vocab.size())
    throw ConfigError("model vocab_size does not match the vocabulary");
  const int v = cfg.vocab_size, d = cfg.dim;
  if (cfg.hops < 1) throw ConfigError("hop count must be >= 1");

  auto normal = [&](const std::vector<int>& shape) { return init_normal(shape, 0.0, 0.01, rng); };

  for (int k = 0; k <= cfg.hops; ++k)
    enc_tables_.push_back(params_.add("enc.M" + std::to_string(k + 1), normal({v, d})));
  ans_w1_ = params_.add("ans.W1", normal({2 * d, d}));
  ans_w2_ = params_.add("ans.W2", normal({d, d}));
  emb_ = params_.add("dec.emb", normal({v, d}));
  gru_wz_ = params_.add("dec.gru.Wz", normal({d, d}));
  gru_wr_ = params_.add("dec.gru.Wr", normal({d, d}));
  gru_wn_ = params_.add("dec.gru.Wn", normal({d, d}));
  gru_uz_ = params_.add("dec.gru.Uz", init_orthogonal({d, d}, rng));
  gru_ur_ = params_.add("dec.gru.Ur", init_orthogonal({d, d}, rng));
  gru_un_ = params_.add("dec.gru.Un", init_orthogonal({d, d}, rng));
  gru_bz_ = params_.add("dec.gru.bz", init_zeros({d}));
  gru_br_ = params_.add("dec.gru.br", init_zeros({d}));
  gru_bn_ = params_.add("dec.gru.bn", init_zeros({d}));
  attn_w_ = params_.add("dec.attn.W", normal({2 * d, d}));
  attn_v_ = params_.add("dec.attn.v", normal({d}));
  ws_ = params_.add("dec.Ws", normal({3 * d, d}));
  wv_ = params_.add("dec.Wv", normal({2 * d, v}));
  for (int k = 0; k < 4; ++k)
    dec_tables_.push_back(params_.add("dec.D" + std::to_string(k + 1), normal({v, d})));
  if (cfg.learned_query_init) q0_ = params_.add("enc.q0", normal({d}));
}

const Mat& ThpnModel::encoder_embedding() const { return enc_tables_[0].value(); }

int ThpnModel::load_pretrained_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path);
  std::string line;
  int loaded = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    if (!vocab_.contains(token)) continue;
    const int row = vocab_.index(token);
    std::vector<double> vals;
    double x;
    while (ss >> x) vals.push_back(x);
    if (static_cast<int>(vals.size()) != cfg_.dim)
      throw DataError("embedding for '" + token + "' has dimension " +
                      std::to_string(vals.size()) + ", model dim is " +
                      std::to_string(cfg_.dim));
    for (int j = 0; j < cfg_.dim; ++j) {
      enc_tables_[0].value()(row, j) = vals[j];
      emb_.value()(row, j) = vals[j];
    }
    ++loaded;
  }
  return loaded;
}

std::vector<std::vector<int>> ThpnModel::feature_bags(
    const std::vector<MemoryItem>& items) const {
  std::vector<std::vector<int>> bags;
  bags.reserve(items.size());
  for (const auto& item : items) {
    std::vector<int> ids;
    ids.reserve(item.feature_tokens.size());
    for (const auto& tok : item.feature_tokens) ids.push_back(vocab_.index(tok));
    bags.push_back(std::move(ids));
  }
  return bags;
}

Tensor ThpnModel::query_init(const EncodedContext& ctx) {
  if (cfg_.learned_query_init) return q0_;
  // mean M^1 embedding of the last user utterance
  int last_user_turn = -1;
  for (const auto& item : ctx.items)
    if (item.kind == SlotKind::UserWord) last_user_turn = std::max(last_user_turn, item.turn_index);
  std::vector<int> ids;
  for (const auto& item : ctx.items)
    if (item.kind == SlotKind::UserWord && item.turn_index == last_user_turn)
      ids.push_back(vocab_.index(item.feature_tokens.front()));
  if (ids.empty()) throw DataError("context holds no user tokens");
  return embed_mean(enc_tables_[0], ids);
}

ThpnModel::Forward ThpnModel::prepare(const EncodedContext& ctx,
                                      const RetrievedAnswers& retrieved, bool training,
                                      RngState& rng) {
  if (ctx.items.empty()) throw DataError("prepare: empty context");
  Forward fwd;
  fwd.ctx = &ctx;
  fwd.retrieved = &retrieved;
  fwd.training = training;
  fwd.rng = &rng;
  fwd.n = static_cast<int>(ctx.items.size());
  fwd.m = static_cast<int>(retrieved.flat_items.size());

  const auto ctx_bags = feature_bags(ctx.items);
  for (const auto& table : enc_tables_) fwd.enc_mem.push_back(embed_bag(table, ctx_bags));

  // multi-hop encoder read; attention is unmasked (the sentinel is one of
  // the memory items like any other)
  Tensor q = query_init(ctx);
  fwd.q_init = q;
  for (int k = 0; k < cfg_.hops; ++k) {
    Tensor p = softmax(matvec(fwd.enc_mem[k], q));
    Tensor c = vecmat(p, fwd.enc_mem[k + 1]);
    fwd.enc_attention.push_back(p);
    fwd.hops.push_back(c);
    q = add(q, c);
  }
  fwd.q_final = q;

  if (cfg_.no_ir) {
    fwd.h_a = Tensor::zeros({cfg_.dim});
  } else {
    std::vector<int> answer_ids;
    answer_ids.reserve(retrieved.flat_items.size());
    for (const auto& item : retrieved.flat_items)
      answer_ids.push_back(vocab_.index(item.emit_token));
    fwd.h_a = encode_answers(fwd.hops.back(), answer_ids);
  }

  std::vector<std::vector<int>> all_bags = ctx_bags;
  const auto ret_bags = feature_bags(retrieved.flat_items);
  all_bags.insert(all_bags.end(), ret_bags.begin(), ret_bags.end());
  for (const auto& table : dec_tables_) fwd.dec_mem.push_back(embed_bag(table, all_bags));

  const int total = fwd.n + fwd.m;
  fwd.hop2_keep.assign(total, 0);
  fwd.hop3_keep.assign(total, 0);
  for (int i = 0; i < fwd.n; ++i) fwd.hop3_keep[i] = 1;
  for (int i = fwd.n; i < total; ++i) fwd.hop2_keep[i] = 1;

  fwd.allow_h.assign(fwd.n, 1);
  if (cfg_.mask_history_new)
    for (int i = 0; i < fwd.n; ++i)
      fwd.allow_h[i] = (ctx.r_h[i] || ctx.items[i].is_sentinel) ? 1 : 0;
  fwd.allow_r.assign(fwd.m, 1);
  if (cfg_.mask_retrieved_ew)
    for (int i = 0; i < fwd.m; ++i)
      fwd.allow_r[i] = (retrieved.r_r[i] || retrieved.flat_items[i].is_sentinel) ? 1 : 0;
  return fwd;
}

Tensor ThpnModel::encode_answers(const Tensor& c_last,
                                 const std::vector<int>& answer_token_ids) {
  if (answer_token_ids.empty()) throw DataError("encode_answers: no answer tokens");
  // sum_i W1^T [c^K; a_i] == W1^T [m * c^K; sum_i a_i]
  const int m = static_cast<int>(answer_token_ids.size());
  std::vector<std::vector<int>> bag = {answer_token_ids};
  Tensor a_sum_rows = embed_bag(emb_, bag);            // (1 x d)
  Tensor one = Tensor::from_values({1}, {1.0});
  Tensor a_sum = vecmat(one, a_sum_rows);              // (d)
  Tensor inner = vecmat(concat({scale(c_last, static_cast<double>(m)), a_sum}, 0), ans_w1_);
  return vecmat(thpn::tanh(inner), ans_w2_);
}

Tensor ThpnModel::hop_attention(const Tensor& h_prev, const std::vector<Tensor>& hops) {
  std::vector<Tensor> scores;
  scores.reserve(hops.size());
  for (const auto& c : hops)
    scores.push_back(dot(attn_v_, thpn::tanh(vecmat(concat({h_prev, c}, 0), attn_w_))));
  Tensor alpha = softmax(concat(scores, 0));
  Tensor out;
  for (std::size_t i = 0; i < hops.size(); ++i) {
    Tensor term = smul(hops[i], slice(alpha, static_cast<int>(i), 1));
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

Tensor ThpnModel::gate(const Tensor& h_a, const Tensor& h_prev) {
  gate_calls_ += 1;
  return mul(sigmoid(mul(h_a, h_prev)), h_a);
}

Tensor ThpnModel::gru_cell(const Tensor& x, const Tensor& h) const {
  Tensor z = sigmoid(add(add(vecmat(x, gru_wz_), vecmat(h, gru_uz_)), gru_bz_));
  Tensor r = sigmoid(add(add(vecmat(x, gru_wr_), vecmat(h, gru_ur_)), gru_br_));
  Tensor n = thpn::tanh(add(add(vecmat(x, gru_wn_), vecmat(mul(r, h), gru_un_)), gru_bn_));
  return add(mul(affine(z, -1.0, 1.0), n), mul(z, h));
}

StepOutput ThpnModel::step(Forward& fwd, int prev_token_id) {
  fwd.t += 1;
  Tensor h_star;
  if (fwd.t == 1) {
    h_star = fwd.h_a;  // h_0^* = h_a, no projection
  } else {
    Tensor hc = hop_attention(fwd.h_prev, fwd.hops);
    Tensor hg = cfg_.no_gate ? fwd.h_a : gate(fwd.h_a, fwd.h_prev);
    h_star = thpn::tanh(vecmat(concat({fwd.h_prev, hc, hg}, 0), ws_));
  }

  Tensor x = dropout(embedding_lookup(emb_, prev_token_id), cfg_.dropout, fwd.training, *fwd.rng);
  Tensor h_t = gru_cell(x, h_star);
  fwd.h_prev = h_t;
  // output dropout regularizes the vocabulary head; the memory reading head
  // and the recurrent path stay clean
  Tensor h_out = dropout(h_t, cfg_.dropout, fwd.training, *fwd.rng);

  // decoder memory network, three hops, h_t as the initial reading head;
  // hop 2 reads only the retrieved segment, hop 3 only the history segment
  const std::vector<std::uint8_t> all_keep(fwd.n + fwd.m, 1);
  Tensor q = h_t;
  std::vector<Tensor> reads, attends;
  for (int k = 0; k < 3; ++k) {
    const auto& keep = (k == 1) ? fwd.hop2_keep : (k == 2) ? fwd.hop3_keep : all_keep;
    Tensor p = masked_softmax(matvec(fwd.dec_mem[k], q), keep);
    Tensor o = vecmat(p, fwd.dec_mem[k + 1]);
    attends.push_back(p);
    reads.push_back(o);
    q = add(q, o);
  }

  StepOutput out;
  out.h = h_t;
  out.p_v = softmax(vecmat(concat({reads[0], h_out}, 0), wv_));
  out.p_r = renorm_masked(slice(attends[1], fwd.n, fwd.m), fwd.allow_r);
  out.p_h = renorm_masked(slice(attends[2], 0, fwd.n), fwd.allow_h);
  out.dec_attention = std::move(attends);
  return out;
}

int argmax(const Tensor& probs) {
  int best = 0;
  for (Eigen::Index i = 1; i < probs.numel(); ++i)
    if (probs.value()(i, 0) > probs.value()(best, 0)) best = static_cast<int>(i);
  return best;
}

GenStep ThpnModel::select_token(const StepOutput& out, const EncodedContext& ctx,
                                const RetrievedAnswers& retrieved) const {
  if (!cfg_.no_ptr) {
    const int r_idx = argmax(out.p_r);
    if (!retrieved.flat_items[r_idx].is_sentinel)
      return {retrieved.flat_items[r_idx].emit_token, Provenance::Retrieved, r_idx};
    const int h_idx = argmax(out.p_h);
    if (!ctx.items[h_idx].is_sentinel)
      return {ctx.items[h_idx].emit_token, Provenance::History, h_idx};
  }
  const int v_idx = argmax(out.p_v);
  return {vocab_.token(v_idx), Provenance::Vocab, v_idx};
}

std::vector<GenStep> ThpnModel::generate(const EncodedContext& ctx,
                                         const RetrievedAnswers& retrieved, int max_len,
                                         RngState& rng) {
  std::vector<GenStep> steps;
  if (max_len <= 0) return steps;
  Forward fwd = prepare(ctx, retrieved, /*training=*/false, rng);
  int prev = Vocabulary::kSos;
  for (int t = 0; t < max_len; ++t) {
    StepOutput out = step(fwd, prev);
    GenStep chosen = select_token(out, ctx, retrieved);
    if (chosen.provenance == Provenance::Vocab && chosen.source_pos == Vocabulary::kEos) break;
    // masked slots carry exactly zero probability and can never win argmax
    if (chosen.provenance == Provenance::History && !fwd.allow_h[chosen.source_pos])
      throw DataError("pointer selected a masked history slot");
    if (chosen.provenance == Provenance::Retrieved && !fwd.allow_r[chosen.source_pos])
      throw DataError("pointer selected a masked retrieved slot");
    steps.push_back(chosen);
    prev = vocab_.index(chosen.token);
  }
  return steps;
}

}  // namespace thpn
