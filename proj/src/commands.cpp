#include "thpn/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "thpn/metrics.hpp"
#include "thpn/synth.hpp"

namespace thpn {

namespace {

using nlohmann::json;

json hyperparams_json(const Hyperparams& hp) {
  json j;
  j["batch_size"] = hp.batch_size;
  j["clip"] = hp.clip;
  j["dim"] = hp.dim;
  j["dropout"] = hp.dropout;
  j["epochs"] = hp.epochs;
  j["external_vector_file"] = hp.external_vector_file;
  j["hops"] = hp.hops;
  j["learned_query_init"] = hp.learned_query_init;
  j["loss_w_history"] = hp.loss_w_history;
  j["loss_w_retrieved"] = hp.loss_w_retrieved;
  j["loss_w_vocab"] = hp.loss_w_vocab;
  j["lr"] = hp.lr;
  j["mask_history_new"] = hp.mask_history_new;
  j["mask_retrieved_ew"] = hp.mask_retrieved_ew;
  j["max_candidates"] = hp.max_candidates;
  j["max_len"] = hp.max_len;
  j["method"] = hp.method;
  j["no_gate"] = hp.no_gate;
  j["no_ir"] = hp.no_ir;
  j["no_ptr"] = hp.no_ptr;
  j["pretrained_embedding_file"] = hp.pretrained_embedding_file;
  j["seed"] = hp.seed;
  j["theta"] = hp.theta;
  j["val_metric"] = hp.val_metric;
  return j;
}

RetrievalConfig retrieval_config_from(const Hyperparams& hp) {
  RetrievalConfig rcfg;
  rcfg.theta = hp.theta;
  rcfg.max_candidates = hp.max_candidates;
  rcfg.method = parse_retrieval_method(hp.method);
  rcfg.external_vector_file = hp.external_vector_file;
  return rcfg;
}

std::vector<int> parse_split_spec(const std::string& spec, int total) {
  std::vector<int> weights;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, '/')) weights.push_back(std::stoi(part));
  if (weights.size() != 3) throw ConfigError("split must look like 80/10/10");
  const int sum = weights[0] + weights[1] + weights[2];
  if (sum <= 0) throw ConfigError("split weights must be positive");
  const int n_train = static_cast<int>(static_cast<long long>(total) * weights[0] / sum);
  const int n_valid = static_cast<int>(static_cast<long long>(total) * weights[1] / sum);
  return {n_train, n_valid, total - n_train - n_valid};
}

std::string path_join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

struct EvalContext {
  Checkpoint ckpt;
  ThpnModel model;
  std::optional<QARepository> repo;
  std::vector<Dialogue> train_set;
  std::unordered_set<std::string> mask_entities;  // training-split global entities
};

EvalContext load_eval_context(const std::string& ckpt_path, const std::string& data_dir,
                              const Hyperparams& hp_override) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Vocabulary vocab(ckpt.vocab_tokens);
  RngState rng(ckpt.hp.seed);
  ThpnModel model(model_config_from(ckpt.hp, vocab.size()), vocab, rng);
  Mat initial_emb = model.encoder_embedding();
  apply_checkpoint(ckpt, model);

  EvalContext ec{std::move(ckpt), std::move(model), std::nullopt, {}, {}};
  ec.train_set = read_dialogues_jsonl(path_join(data_dir, "train.jsonl"));
  ec.mask_entities = corpus_entity_set(ec.train_set);
  if (!hp_override.no_ir)
    ec.repo.emplace(build_repository(extract_qa_pairs(ec.train_set),
                                     retrieval_config_from(hp_override), &ec.model.vocab(),
                                     &initial_emb));
  return ec;
}

json report_json(const MetricsReport& r, const json& config_echo) {
  json j;
  j["bleu"] = r.bleu;
  j["per_response_accuracy"] = r.per_response_accuracy;
  j["entity_f1"] = r.entity_f1;
  j["entity_f1_degenerate"] = r.entity_f1_degenerate;
  j["per_domain_f1"] = r.per_domain_f1;
  j["avg_retrieved"] = r.avg_retrieved;
  j["config"] = config_echo;
  return j;
}

MetricsReport score_decode(const DecodeResult& res,
                           const std::unordered_set<std::string>& lexicon) {
  MetricsReport report;
  report.bleu = bleu(res.references, res.hypotheses);
  report.per_response_accuracy = per_response_accuracy(res.references, res.hypotheses);

  std::vector<std::set<std::string>> gold_sets;
  gold_sets.reserve(res.references.size());
  for (const auto& ref : res.references) gold_sets.push_back(gold_entities(ref, lexicon));
  report.entity_f1 = entity_f1(gold_sets, res.hypotheses, lexicon, &report.entity_f1_degenerate);

  std::map<std::string, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < res.domains.size(); ++i)
    if (!res.domains[i].empty()) by_domain[res.domains[i]].push_back(i);
  for (const auto& [domain, idxs] : by_domain) {
    std::vector<std::set<std::string>> g;
    std::vector<TokenList> h;
    for (auto i : idxs) {
      g.push_back(gold_sets[i]);
      h.push_back(res.hypotheses[i]);
    }
    report.per_domain_f1[domain] = entity_f1(g, h, lexicon);
  }
  report.avg_retrieved = average_retrieved(res.retrieved_counts);
  return report;
}

}  // namespace

int cmd_gen_data(const GenDataArgs& args) {
  GeneratorConfig gc;
  gc.n_restaurants = args.n_restaurants;
  gc.n_dialogues = args.n_dialogues;
  gc.style = parse_task_style(args.style);
  gc.seed = args.seed;
  auto dialogues = generate_synthetic(gc);

  const auto counts = parse_split_spec(args.split, args.n_dialogues);
  std::filesystem::create_directories(args.out_dir);
  const char* names[3] = {"train", "valid", "test"};
  std::size_t offset = 0;
  for (int s = 0; s < 3; ++s) {
    std::vector<Dialogue> part(dialogues.begin() + offset,
                               dialogues.begin() + offset + counts[s]);
    offset += counts[s];
    write_dialogues_jsonl(part, path_join(args.out_dir, std::string(names[s]) + ".jsonl"));
    std::ostringstream babi;
    serialize_babi(part, babi);
    write_file_atomic(path_join(args.out_dir, std::string(names[s]) + ".txt"), babi.str());
  }

  json cfg;
  cfg["command"] = "gen-data";
  cfg["n_dialogues"] = args.n_dialogues;
  cfg["n_restaurants"] = args.n_restaurants;
  cfg["style"] = args.style;
  cfg["split"] = args.split;
  cfg["seed"] = args.seed;
  cfg["out"] = args.out_dir;
  write_file_atomic(path_join(args.out_dir, "gen_config.json"), cfg.dump(2) + "\n");
  return kExitOk;
}

int cmd_train(const TrainArgs& args) {
  auto train_set = read_dialogues_jsonl(path_join(args.data_dir, "train.jsonl"));
  std::vector<Dialogue> valid_set;
  const std::string valid_path = path_join(args.data_dir, "valid.jsonl");
  if (std::filesystem::exists(valid_path)) valid_set = read_dialogues_jsonl(valid_path);

  std::filesystem::create_directories(args.out_dir);
  std::string log_lines;
  auto on_epoch = [&](const EpochLog& log) {
    json j;
    j["epoch"] = log.epoch;
    j["train_loss"] = log.train_loss;
    j["val_metric"] = log.val_metric;
    j["seconds"] = log.seconds;
    log_lines += j.dump() + "\n";
    if (!args.quiet)
      std::cout << "epoch " << log.epoch << " loss " << log.train_loss << " val "
                << log.val_metric << " (" << log.seconds << "s)" << std::endl;
  };

  TrainOutput out = train(train_set, valid_set, args.hp, on_epoch);
  save_checkpoint(out.best, path_join(args.out_dir, "thpn.ckpt"));
  write_file_atomic(path_join(args.out_dir, "train_log.jsonl"), log_lines);

  json cfg;
  cfg["command"] = "train";
  cfg["data"] = args.data_dir;
  cfg["out"] = args.out_dir;
  cfg["hyperparams"] = hyperparams_json(args.hp);
  write_file_atomic(path_join(args.out_dir, "train_config.json"), cfg.dump(2) + "\n");
  return kExitOk;
}

int cmd_eval(const EvalArgs& args, MetricsReport* report_out) {
  Checkpoint peek = load_checkpoint(args.ckpt_path);
  if (args.dim_check && *args.dim_check != peek.hp.dim)
    throw CheckpointError("checkpoint dim " + std::to_string(peek.hp.dim) +
                          " does not match requested dim " + std::to_string(*args.dim_check));
  Hyperparams hp = peek.hp;
  if (args.theta_override) hp.theta = *args.theta_override;
  if (args.method_override) hp.method = *args.method_override;
  if (args.max_len_override) hp.max_len = *args.max_len_override;

  EvalContext ec = load_eval_context(args.ckpt_path, args.data_dir, hp);
  auto eval_set = read_dialogues_jsonl(path_join(args.data_dir, args.split + ".jsonl"));

  std::optional<RetrievalCache> cache;
  if (!args.load_retrieval_path.empty()) {
    RetrievalCache c;
    std::ifstream in(args.load_retrieval_path);
    if (!in) throw DataError("cannot open retrieval cache " + args.load_retrieval_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      const auto qid = j.at("query_id").get<std::size_t>();
      if (c.pair_ids.size() <= qid) {
        c.pair_ids.resize(qid + 1);
        c.scores.resize(qid + 1);
      }
      c.pair_ids[qid] = j.at("answer_pair_ids").get<std::vector<int>>();
      c.scores[qid] = j.at("scores").get<std::vector<double>>();
    }
    cache = std::move(c);
  }

  auto lexicon = ec.mask_entities;
  const auto eval_entities = corpus_entity_set(eval_set);
  lexicon.insert(eval_entities.begin(), eval_entities.end());

  DecodeResult res = decode_corpus(ec.model, eval_set, ec.repo ? &*ec.repo : nullptr,
                                   retrieval_config_from(hp), hp, ec.mask_entities,
                                   cache ? &*cache : nullptr);
  MetricsReport report = score_decode(res, lexicon);
  if (report_out) *report_out = report;

  json cfg;
  cfg["command"] = "eval";
  cfg["ckpt"] = args.ckpt_path;
  cfg["data"] = args.data_dir;
  cfg["split"] = args.split;
  cfg["hyperparams"] = hyperparams_json(hp);
  const std::string report_path = args.report_path.empty()
                                      ? path_join(args.data_dir, "report.json")
                                      : args.report_path;
  write_file_atomic(report_path, report_json(report, cfg).dump(2) + "\n");

  if (!args.dump_path.empty()) {
    std::string lines;
    for (std::size_t i = 0; i < res.hypotheses.size(); ++i) {
      const auto [di, ti] = res.example_ids[i];
      const Dialogue& d = eval_set[di];
      json j;
      json history = json::array();
      for (int t = 0; t < ti; ++t) {
        history.push_back({{"user", d.turns[t].user}, {"system", d.turns[t].system}});
      }
      j["context"] = {{"history", history},
                      {"query", d.turns[ti].user},
                      {"kb", json::array()}};
      for (const auto& triple : d.kb)
        j["context"]["kb"].push_back({triple.subject, triple.relation, triple.object});
      j["retrieved"] = json::array();
      for (const auto& a : res.retrievals[i])
        j["retrieved"].push_back({{"tokens", a.tokens}, {"score", a.score},
                                  {"pair_id", a.pair_id}});
      j["gold"] = res.references[i];
      j["predicted"] = res.hypotheses[i];
      j["provenance"] = json::array();
      for (const auto& s : res.provenance[i])
        j["provenance"].push_back({{"token", s.token},
                                   {"source", provenance_name(s.provenance)},
                                   {"pos", s.source_pos}});
      lines += j.dump() + "\n";
    }
    write_file_atomic(args.dump_path, lines);
  }

  if (!args.save_retrieval_path.empty()) {
    std::string lines;
    for (std::size_t i = 0; i < res.retrievals.size(); ++i) {
      json j;
      j["query_id"] = i;
      json ids = json::array(), scores = json::array();
      for (const auto& a : res.retrievals[i]) {
        ids.push_back(a.pair_id);
        scores.push_back(a.score);
      }
      j["answer_pair_ids"] = ids;
      j["scores"] = scores;
      lines += j.dump() + "\n";
    }
    write_file_atomic(args.save_retrieval_path, lines);
  }

  std::cout << "bleu " << report.bleu << "  accuracy " << report.per_response_accuracy
            << "  entity_f1 " << report.entity_f1 << "  avg_retrieved "
            << report.avg_retrieved << "\n";
  return kExitOk;
}

int cmd_sweep_theta(const SweepArgs& args) {
  for (double theta : args.thetas)
    if (theta <= 0.0 || theta > 1.0)
      throw ConfigError("theta values must lie in (0, 1]");

  Checkpoint peek = load_checkpoint(args.ckpt_path);
  Hyperparams hp = peek.hp;
  if (args.seed_override) hp.seed = *args.seed_override;
  EvalContext ec = load_eval_context(args.ckpt_path, args.data_dir, hp);
  auto eval_set = read_dialogues_jsonl(path_join(args.data_dir, args.split + ".jsonl"));

  auto lexicon = ec.mask_entities;
  const auto eval_entities = corpus_entity_set(eval_set);
  lexicon.insert(eval_entities.begin(), eval_entities.end());

  json rows = json::array();
  std::cout << "theta  avg_retrieved  bleu      accuracy\n";
  for (double theta : args.thetas) {
    Hyperparams hp_theta = hp;
    hp_theta.theta = theta;
    DecodeResult res = decode_corpus(ec.model, eval_set, ec.repo ? &*ec.repo : nullptr,
                                     retrieval_config_from(hp_theta), hp_theta,
                                     ec.mask_entities);
    MetricsReport report = score_decode(res, lexicon);
    json row;
    row["theta"] = theta;
    row["avg_retrieved"] = report.avg_retrieved;
    row["bleu"] = report.bleu;
    row["per_response_accuracy"] = report.per_response_accuracy;
    rows.push_back(row);
    char line[128];
    std::snprintf(line, sizeof(line), "%-6.2f %-14.2f %-9.4f %-9.4f\n", theta,
                  report.avg_retrieved, report.bleu, report.per_response_accuracy);
    std::cout << line;
  }

  json out;
  out["command"] = "sweep-theta";
  out["ckpt"] = args.ckpt_path;
  out["data"] = args.data_dir;
  out["split"] = args.split;
  out["rows"] = rows;
  out["hyperparams"] = hyperparams_json(hp);
  const std::string report_path = args.report_path.empty()
                                      ? path_join(args.data_dir, "theta_sweep.json")
                                      : args.report_path;
  write_file_atomic(report_path, out.dump(2) + "\n");
  return kExitOk;
}

int cmd_chat(const ChatArgs& args, std::istream& in, std::ostream& out) {
  Checkpoint peek = load_checkpoint(args.ckpt_path);
  Hyperparams hp = peek.hp;
  if (args.seed_override) hp.seed = *args.seed_override;
  EvalContext ec = load_eval_context(args.ckpt_path, args.data_dir, hp);
  const RetrievalConfig rcfg = retrieval_config_from(hp);

  auto colored = [&](const std::string& text, Provenance p) {
    if (!args.color) {
      switch (p) {
        case Provenance::History: return "[h]" + text;
        case Provenance::Retrieved: return "[r]" + text;
        default: return text;
      }
    }
    switch (p) {
      case Provenance::History: return "\033[31m" + text + "\033[0m";    // red
      case Provenance::Retrieved: return "\033[34m" + text + "\033[0m";  // blue
      default: return text;
    }
  };

  std::vector<Turn> history;
  std::vector<KBTriple> kb;
  RngState rng(hp.seed);
  out << "thpn chat -- /kb <subj> <rel> <obj>, /reset, /quit\n";
  std::string line;
  while (out << "> " << std::flush, std::getline(in, line)) {
    const TokenList tokens = tokenize(line);
    if (tokens.empty()) continue;
    if (tokens[0] == "/quit") return kExitOk;
    if (tokens[0] == "/reset") {
      history.clear();
      out << "history cleared\n";
      continue;
    }
    if (tokens[0] == "/kb") {
      if (tokens.size() != 4) {
        out << "usage: /kb <subject> <relation> <object>\n";
        continue;
      }
      kb.push_back({tokens[1], tokens[2], tokens[3]});
      out << "kb += (" << tokens[1] << ", " << tokens[2] << ", " << tokens[3] << ")\n";
      continue;
    }

    std::vector<Utterance> utterances;
    for (const auto& turn : history) {
      utterances.push_back({Speaker::User, turn.user});
      utterances.push_back({Speaker::System, turn.system});
    }
    utterances.push_back({Speaker::User, tokens});
    EncodedContext ctx = build_context(utterances, kb);

    RetrievedAnswers retrieved;
    if (hp.no_ir) {
      retrieved = sentinel_only_answers();
    } else {
      auto answers = retrieve(tokens, *ec.repo, rcfg);
      for (const auto& a : answers) {
        out << "  guidance (" << a.score << "):";
        for (const auto& t : a.tokens) out << ' ' << t;
        out << "\n";
      }
      retrieved = mask_and_flatten(answers, kb, ec.mask_entities);
    }

    auto steps = ec.model.generate(ctx, retrieved, hp.max_len, rng);
    TokenList response;
    out << "  ";
    for (const auto& s : steps) {
      out << colored(s.token, s.provenance) << ' ';
      response.push_back(s.token);
    }
    out << "\n";
    history.push_back({tokens, response});
  }
  return kExitOk;
}

}  // namespace thpn
