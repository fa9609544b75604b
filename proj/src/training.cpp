#include "thpn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "thpn/metrics.hpp"
#include "thpn/optim.hpp"

namespace thpn {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string serialize_hyperparams(const Hyperparams& hp) {
  std::map<std::string, std::string> kv;
  kv["batch_size"] = std::to_string(hp.batch_size);
  kv["clip"] = fmt_double(hp.clip);
  kv["dim"] = std::to_string(hp.dim);
  kv["dropout"] = fmt_double(hp.dropout);
  kv["epochs"] = std::to_string(hp.epochs);
  kv["external_vector_file"] = hp.external_vector_file;
  kv["hops"] = std::to_string(hp.hops);
  kv["learned_query_init"] = hp.learned_query_init ? "1" : "0";
  kv["loss_w_history"] = fmt_double(hp.loss_w_history);
  kv["loss_w_retrieved"] = fmt_double(hp.loss_w_retrieved);
  kv["loss_w_vocab"] = fmt_double(hp.loss_w_vocab);
  kv["lr"] = fmt_double(hp.lr);
  kv["mask_history_new"] = hp.mask_history_new ? "1" : "0";
  kv["mask_retrieved_ew"] = hp.mask_retrieved_ew ? "1" : "0";
  kv["max_candidates"] = std::to_string(hp.max_candidates);
  kv["max_len"] = std::to_string(hp.max_len);
  kv["method"] = hp.method;
  kv["no_gate"] = hp.no_gate ? "1" : "0";
  kv["no_ir"] = hp.no_ir ? "1" : "0";
  kv["no_ptr"] = hp.no_ptr ? "1" : "0";
  kv["pretrained_embedding_file"] = hp.pretrained_embedding_file;
  kv["seed"] = std::to_string(hp.seed);
  kv["theta"] = fmt_double(hp.theta);
  kv["val_metric"] = hp.val_metric;
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

Hyperparams parse_hyperparams(const std::string& text) {
  Hyperparams hp;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CheckpointError("malformed hyperparameter line: " + line);
    const std::string k = line.substr(0, eq);
    const std::string v = line.substr(eq + 1);
    if (k == "batch_size") hp.batch_size = std::stoi(v);
    else if (k == "clip") hp.clip = std::stod(v);
    else if (k == "dim") hp.dim = std::stoi(v);
    else if (k == "dropout") hp.dropout = std::stod(v);
    else if (k == "epochs") hp.epochs = std::stoi(v);
    else if (k == "external_vector_file") hp.external_vector_file = v;
    else if (k == "hops") hp.hops = std::stoi(v);
    else if (k == "learned_query_init") hp.learned_query_init = v == "1";
    else if (k == "loss_w_history") hp.loss_w_history = std::stod(v);
    else if (k == "loss_w_retrieved") hp.loss_w_retrieved = std::stod(v);
    else if (k == "loss_w_vocab") hp.loss_w_vocab = std::stod(v);
    else if (k == "lr") hp.lr = std::stod(v);
    else if (k == "mask_history_new") hp.mask_history_new = v == "1";
    else if (k == "mask_retrieved_ew") hp.mask_retrieved_ew = v == "1";
    else if (k == "max_candidates") hp.max_candidates = std::stoi(v);
    else if (k == "max_len") hp.max_len = std::stoi(v);
    else if (k == "method") hp.method = v;
    else if (k == "no_gate") hp.no_gate = v == "1";
    else if (k == "no_ir") hp.no_ir = v == "1";
    else if (k == "no_ptr") hp.no_ptr = v == "1";
    else if (k == "pretrained_embedding_file") hp.pretrained_embedding_file = v;
    else if (k == "seed") hp.seed = std::stoull(v);
    else if (k == "theta") hp.theta = std::stod(v);
    else if (k == "val_metric") hp.val_metric = v;
    else throw CheckpointError("unknown hyperparameter: " + k);
  }
  return hp;
}

ModelConfig model_config_from(const Hyperparams& hp, int vocab_size) {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.dim = hp.dim;
  mc.hops = hp.hops;
  mc.dropout = hp.dropout;
  mc.learned_query_init = hp.learned_query_init;
  mc.no_ir = hp.no_ir;
  mc.no_ptr = hp.no_ptr;
  mc.no_gate = hp.no_gate;
  mc.mask_history_new = hp.mask_history_new;
  mc.mask_retrieved_ew = hp.mask_retrieved_ew;
  return mc;
}

PointerTargets build_targets(const TokenList& gold_with_eos, const EncodedContext& ctx,
                             const RetrievedAnswers& retrieved, const Vocabulary& vocab,
                             bool mask_history_new, bool mask_retrieved_ew) {
  PointerTargets targets;
  const int n = static_cast<int>(ctx.items.size());
  const int m = static_cast<int>(retrieved.flat_items.size());
  for (const auto& tok : gold_with_eos) {
    targets.vocab_t.push_back(vocab.index(tok));

    int h = n - 1;  // sentinel
    for (int p = 0; p < n - 1; ++p) {
      const bool allowed = mask_history_new ? ctx.r_h[p] != 0 : true;
      if (allowed && ctx.items[p].emit_token == tok) h = p;
    }
    targets.history_t.push_back(h);

    int r = m - 1;
    for (int p = 0; p < m - 1; ++p) {
      const bool allowed = mask_retrieved_ew ? retrieved.r_r[p] != 0 : true;
      if (allowed && retrieved.flat_items[p].emit_token == tok) r = p;
    }
    targets.retrieved_t.push_back(r);
  }
  return targets;
}

Tensor sequence_loss(const std::vector<StepOutput>& steps, const PointerTargets& targets,
                     const Hyperparams& hp) {
  if (steps.empty()) throw ConfigError("sequence_loss: no steps");
  if (steps.size() != targets.vocab_t.size())
    throw DimensionError("sequence_loss: step/target count mismatch");
  Tensor total;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    Tensor term = scale(pick_nll(steps[t].p_v, targets.vocab_t[t]), hp.loss_w_vocab);
    if (!hp.no_ptr) {
      term = add(term, scale(pick_nll(steps[t].p_h, targets.history_t[t]), hp.loss_w_history));
      term = add(term, scale(pick_nll(steps[t].p_r, targets.retrieved_t[t]), hp.loss_w_retrieved));
    }
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(steps.size()));
}

Checkpoint snapshot(const ThpnModel& model, const Hyperparams& hp) {
  Checkpoint ckpt;
  ckpt.hp = hp;
  ckpt.vocab_tokens = model.vocab().tokens();
  for (const auto& [name, tensor] : model.params().items()) {
    NamedTensorF32 nt;
    nt.name = name;
    nt.shape = tensor.shape();
    nt.data.reserve(tensor.numel());
    for (Eigen::Index i = 0; i < tensor.value().rows(); ++i)
      for (Eigen::Index j = 0; j < tensor.value().cols(); ++j)
        nt.data.push_back(static_cast<float>(tensor.value()(i, j)));
    ckpt.tensors.push_back(std::move(nt));
  }
  return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, ThpnModel& model) {
  for (const auto& nt : ckpt.tensors) {
    if (!model.params().contains(nt.name))
      throw CheckpointError("checkpoint tensor '" + nt.name + "' has no model slot");
    Tensor& t = model.params().get(nt.name);
    if (t.shape() != nt.shape)
      throw CheckpointError("checkpoint tensor '" + nt.name + "' shape mismatch");
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < t.value().rows(); ++i)
      for (Eigen::Index j = 0; j < t.value().cols(); ++j)
        t.value()(i, j) = static_cast<double>(nt.data[k++]);
  }
  if (ckpt.tensors.size() != model.params().items().size())
    throw CheckpointError("checkpoint tensor count mismatch");
}

std::unordered_set<std::string> corpus_entity_set(const std::vector<Dialogue>& dialogues) {
  std::unordered_set<std::string> out;
  for (const auto& d : dialogues) {
    auto e = kb_entity_set(d.kb);
    out.insert(e.begin(), e.end());
  }
  return out;
}

namespace {

RetrievalConfig retrieval_config_from(const Hyperparams& hp) {
  RetrievalConfig rcfg;
  rcfg.theta = hp.theta;
  rcfg.max_candidates = hp.max_candidates;
  rcfg.method = parse_retrieval_method(hp.method);
  rcfg.external_vector_file = hp.external_vector_file;
  return rcfg;
}

double validation_metric(ThpnModel& model, const std::vector<Dialogue>& valid,
                         const QARepository* repo, const RetrievalConfig& rcfg,
                         const Hyperparams& hp,
                         const std::unordered_set<std::string>& entities) {
  if (valid.empty()) return 0.0;
  DecodeResult res = decode_corpus(model, valid, repo, rcfg, hp, entities);
  if (hp.val_metric == "bleu") return bleu(res.references, res.hypotheses);
  return per_response_accuracy(res.references, res.hypotheses);
}

}  // namespace

DecodeResult decode_corpus(ThpnModel& model, const std::vector<Dialogue>& data,
                           const QARepository* repo, const RetrievalConfig& rcfg,
                           const Hyperparams& hp,
                           const std::unordered_set<std::string>& global_entities,
                           const RetrievalCache* cache) {
  NoGradGuard guard(model);
  RngState rng(hp.seed);  // untouched by eval-mode decoding; kept for interface parity
  DecodeResult out;
  std::size_t ordinal = 0;
  for (std::size_t di = 0; di < data.size(); ++di) {
    const Dialogue& d = data[di];
    for (std::size_t t = 0; t < d.turns.size(); ++t, ++ordinal) {
      EncodedContext ctx = build_context(history_through_user_turn(d, t), d.kb);
      RetrievedAnswers retrieved;
      std::vector<ScoredAnswer> answers;
      if (hp.no_ir) {
        retrieved = sentinel_only_answers();
        out.retrieved_counts.push_back(0);
      } else {
        if (cache != nullptr) {
          if (ordinal >= cache->pair_ids.size())
            throw DataError("retrieval cache shorter than the evaluated corpus");
          for (std::size_t k = 0; k < cache->pair_ids[ordinal].size(); ++k)
            answers.push_back({repo->pairs().at(cache->pair_ids[ordinal][k]).answer,
                               cache->scores[ordinal][k], cache->pair_ids[ordinal][k]});
        } else {
          answers = retrieve(d.turns[t].user, *repo, rcfg);
        }
        out.retrieved_counts.push_back(static_cast<int>(answers.size()));
        retrieved = mask_and_flatten(answers, d.kb, global_entities);
      }
      auto steps = model.generate(ctx, retrieved, hp.max_len, rng);
      TokenList hyp;
      for (const auto& s : steps) hyp.push_back(s.token);
      out.references.push_back(d.turns[t].system);
      out.hypotheses.push_back(std::move(hyp));
      out.provenance.push_back(std::move(steps));
      out.domains.push_back(d.domain);
      out.example_ids.emplace_back(static_cast<int>(di), static_cast<int>(t));
      out.retrievals.push_back(std::move(answers));
    }
  }
  return out;
}

TrainOutput train(const std::vector<Dialogue>& train_set,
                  const std::vector<Dialogue>& valid_set, const Hyperparams& hp,
                  const std::function<void(const EpochLog&)>& on_epoch,
                  const QARepository* repo_override) {
  if (train_set.empty()) throw ConfigError("train: empty training set");

  Vocabulary vocab = build_vocab(train_set);
  RngState init_rng(hp.seed);
  ThpnModel model(model_config_from(hp, vocab.size()), vocab, init_rng);
  if (!hp.pretrained_embedding_file.empty())
    model.load_pretrained_embeddings(hp.pretrained_embedding_file);

  const auto global_entities = corpus_entity_set(train_set);
  const RetrievalConfig rcfg = retrieval_config_from(hp);
  std::optional<QARepository> repo_own;
  const QARepository* repo = repo_override;
  if (repo == nullptr && !hp.no_ir) {
    repo_own.emplace(build_repository(extract_qa_pairs(train_set), rcfg, &model.vocab(),
                                      &model.encoder_embedding()));
    repo = &*repo_own;
  }

  auto params = model.params().tensors();
  AdamState adam;
  adam.learning_rate = hp.lr;
  adam.init(params);

  std::vector<std::pair<int, int>> examples;
  // pair ids mirror the extract_qa_pairs enumeration, so each training
  // example can exclude exactly its own repository entry
  std::map<std::pair<int, int>, int> pair_id_of;
  int next_pair_id = 0;
  for (std::size_t d = 0; d < train_set.size(); ++d)
    for (std::size_t t = 0; t < train_set[d].turns.size(); ++t) {
      examples.emplace_back(static_cast<int>(d), static_cast<int>(t));
      const auto& turn = train_set[d].turns[t];
      if (!turn.user.empty() && !turn.system.empty())
        pair_id_of[{static_cast<int>(d), static_cast<int>(t)}] = next_pair_id++;
    }

  RngState train_rng(hp.seed ^ 0x5deece66dULL);
  TrainOutput out;
  double best_metric = -1.0;

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    train_rng.shuffle(examples);
    model.params().zero_grads();
    double loss_sum = 0.0;
    int in_batch = 0;

    auto optimizer_step = [&] {
      clip_global_norm(params, hp.clip);
      adam_step(params, adam);
      model.params().zero_grads();
      in_batch = 0;
    };

    for (const auto& [di, ti] : examples) {
      const Dialogue& dlg = train_set[di];
      EncodedContext ctx = build_context(history_through_user_turn(dlg, ti), dlg.kb);
      RetrievedAnswers retrieved;
      if (hp.no_ir) {
        retrieved = sentinel_only_answers();
      } else {
        const auto self = pair_id_of.find({di, ti});
        const int exclude = self == pair_id_of.end() ? -1 : self->second;
        retrieved = mask_and_flatten(retrieve(dlg.turns[ti].user, *repo, rcfg, exclude),
                                     dlg.kb, global_entities);
      }
      TokenList gold = dlg.turns[ti].system;
      gold.push_back("<eos>");
      PointerTargets targets = build_targets(gold, ctx, retrieved, vocab,
                                             hp.mask_history_new, hp.mask_retrieved_ew);

      auto fwd = model.prepare(ctx, retrieved, /*training=*/true, train_rng);
      std::vector<StepOutput> steps;
      int prev = Vocabulary::kSos;
      for (std::size_t t = 0; t < gold.size(); ++t) {
        steps.push_back(model.step(fwd, prev));
        prev = targets.vocab_t[t];  // teacher forcing
      }
      Tensor loss = sequence_loss(steps, targets, hp);
      loss_sum += loss.item();
      backward(hp.batch_size > 1 ? scale(loss, 1.0 / hp.batch_size) : loss);
      if (++in_batch >= hp.batch_size) optimizer_step();
    }
    if (in_batch > 0) optimizer_step();

    const double val = validation_metric(model, valid_set, repo, rcfg, hp,
                                         global_entities);
    const auto t1 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(examples.size());
    log.val_metric = val;
    log.seconds = std::chrono::duration<double>(t1 - t0).count();
    out.logs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (valid_set.empty() || val >= best_metric) {
      best_metric = val;
      out.best = snapshot(model, hp);
    }
  }
  if (out.logs.empty()) out.best = snapshot(model, hp);  // epochs == 0
  return out;
}

}  // namespace thpn
