#include "thpn/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "json.hpp"

namespace thpn {

RetrievalMethod parse_retrieval_method(const std::string& name) {
  if (name == "bm25") return RetrievalMethod::Bm25;
  if (name == "cosine") return RetrievalMethod::EmbedCosine;
  if (name == "external") return RetrievalMethod::ExternalVectors;
  throw ConfigError("unknown retrieval method: " + name);
}

const char* retrieval_method_name(RetrievalMethod m) {
  switch (m) {
    case RetrievalMethod::Bm25: return "bm25";
    case RetrievalMethod::EmbedCosine: return "cosine";
    default: return "external";
  }
}

namespace {

Eigen::VectorXd mean_embedding(const TokenList& tokens, const Vocabulary& vocab,
                               const Mat& table) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(table.cols());
  if (tokens.empty()) return v;
  for (const auto& tok : tokens) v += table.row(vocab.index(tok)).transpose();
  v /= static_cast<double>(tokens.size());
  return v;
}

void l2_normalize(Eigen::Ref<Eigen::VectorXd> v) {
  const double n = v.norm();
  if (n > 0.0) v /= n;
}

Mat load_external_vectors(const std::string& path, int n_pairs) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open external vector file " + path);
  std::vector<std::vector<double>> rows(n_pairs);
  std::string line;
  int line_no = 0;
  int dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const int id = j.at("id").get<int>();
    if (id < 0 || id >= n_pairs) continue;  // ids beyond the repository are ignored
    auto vec = j.at("vector").get<std::vector<double>>();
    if (dim < 0) dim = static_cast<int>(vec.size());
    if (static_cast<int>(vec.size()) != dim)
      throw DataError(path + ":" + std::to_string(line_no) + ": inconsistent vector length");
    rows[id] = std::move(vec);
  }
  if (dim <= 0) throw DataError(path + ": no vectors found");
  Mat m(n_pairs, dim);
  for (int i = 0; i < n_pairs; ++i) {
    if (rows[i].empty()) {
      std::cerr << "warning: external vectors missing id " << i
                << ", using placeholder\n";
      m.row(i).setOnes();
    } else {
      for (int j2 = 0; j2 < dim; ++j2) m(i, j2) = rows[i][j2];
    }
    Eigen::VectorXd v = m.row(i).transpose();
    l2_normalize(v);
    m.row(i) = v.transpose();
  }
  return m;
}

}  // namespace

QARepository build_repository(const std::vector<QAPair>& pairs, const RetrievalConfig& config,
                              const Vocabulary* vocab, const Mat* embeddings) {
  if (pairs.empty()) throw ConfigError("build_repository: no pairs");
  QARepository repo;
  repo.pairs_ = pairs;

  // BM25 term statistics are always built; they are cheap and let the bm25
  // backend and the scoring oracle work regardless of the chosen method.
  double total_len = 0.0;
  for (const auto& p : pairs) {
    std::unordered_map<std::string, int> counts;
    for (const auto& tok : p.question) counts[tok] += 1;
    for (const auto& [term, _] : counts) repo.doc_freq_[term] += 1;
    total_len += static_cast<double>(p.question.size());
    repo.term_counts_.push_back(std::move(counts));
  }
  repo.avg_len_ = total_len / static_cast<double>(pairs.size());

  if (config.method == RetrievalMethod::EmbedCosine) {
    if (vocab == nullptr || embeddings == nullptr)
      throw ConfigError("build_repository: cosine backend needs a vocabulary and embeddings");
    repo.vocab_ = *vocab;
    repo.token_vectors_ = *embeddings;
    repo.question_vectors_ = Mat(pairs.size(), embeddings->cols());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      Eigen::VectorXd v = mean_embedding(pairs[i].question, *vocab, repo.token_vectors_);
      l2_normalize(v);
      repo.question_vectors_.row(i) = v.transpose();
    }
    repo.has_vectors_ = true;
  } else if (config.method == RetrievalMethod::ExternalVectors) {
    if (vocab == nullptr || embeddings == nullptr)
      throw ConfigError(
          "build_repository: external backend needs a vocabulary and embeddings for queries");
    repo.vocab_ = *vocab;
    repo.token_vectors_ = *embeddings;
    repo.question_vectors_ =
        load_external_vectors(config.external_vector_file, static_cast<int>(pairs.size()));
    repo.has_vectors_ = true;
  }
  return repo;
}

double bm25_score(const TokenList& query, int doc_id, const QARepository& repo) {
  const auto& counts = repo.term_counts_.at(doc_id);
  const double len = static_cast<double>(repo.pairs_[doc_id].question.size());
  const double n_docs = static_cast<double>(repo.pairs_.size());
  const double k1 = repo.bm25_k1, b = repo.bm25_b;
  double score = 0.0;
  for (const auto& term : query) {
    auto tf_it = counts.find(term);
    if (tf_it == counts.end()) continue;
    const double tf = static_cast<double>(tf_it->second);
    const double df = static_cast<double>(repo.doc_freq_.at(term));
    const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
    score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len / repo.avg_len_));
  }
  return score;
}

double cosine_score(const TokenList& query, int doc_id, const QARepository& repo) {
  if (!repo.has_vectors_) throw ConfigError("cosine_score: repository has no vectors");
  Eigen::VectorXd q = mean_embedding(query, repo.vocab_, repo.token_vectors_);
  l2_normalize(q);
  return repo.question_vectors_.row(doc_id).dot(q.transpose());
}

std::vector<ScoredAnswer> retrieve(const TokenList& query, const QARepository& repo,
                                   const RetrievalConfig& config, int exclude_pair_id) {
  if (repo.size() == 0) throw ConfigError("retrieve: empty repository");
  if (config.theta <= 0.0 || config.theta > 1.0)
    throw ConfigError("retrieve: theta must lie in (0, 1], got " +
                      std::to_string(config.theta));
  repo.query_count_ += 1;

  std::vector<double> scores(repo.size(), 0.0);
  if (config.method == RetrievalMethod::Bm25) {
    for (int i = 0; i < repo.size(); ++i) scores[i] = bm25_score(query, i, repo);
  } else {
    Eigen::VectorXd q = mean_embedding(query, repo.vocab_, repo.token_vectors_);
    l2_normalize(q);
    Eigen::VectorXd s = repo.question_vectors_ * q;
    for (int i = 0; i < repo.size(); ++i) scores[i] = s(i);
  }

  std::vector<int> eligible;
  eligible.reserve(repo.size());
  for (int i = 0; i < repo.size(); ++i)
    if (i != exclude_pair_id) eligible.push_back(i);
  if (eligible.empty())  // single-pair repository whose pair is excluded
    eligible.push_back(0);

  std::vector<int> qualifying;
  for (int i : eligible)
    if (scores[i] >= config.theta) qualifying.push_back(i);
  std::stable_sort(qualifying.begin(), qualifying.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });

  // theta = 1.0 is the single-answer special case
  const int cap = config.theta >= 1.0 ? 1 : config.max_candidates;
  if (static_cast<int>(qualifying.size()) > cap) qualifying.resize(cap);
  if (qualifying.empty()) {
    int best = eligible.front();
    for (int i : eligible)
      if (scores[i] > scores[best]) best = i;
    qualifying.push_back(best);
  }

  std::vector<ScoredAnswer> out;
  out.reserve(qualifying.size());
  for (int i : qualifying) out.push_back({repo.pairs_[i].answer, scores[i], i});
  return out;
}

RetrievedAnswers mask_and_flatten(const std::vector<ScoredAnswer>& answers,
                                  const std::vector<KBTriple>& kb,
                                  const std::unordered_set<std::string>& global_entities) {
  if (answers.empty()) throw ConfigError("mask_and_flatten: no answers");
  auto entities = kb_entity_set(kb);
  entities.insert(global_entities.begin(), global_entities.end());

  RetrievedAnswers out;
  out.answers = answers;
  for (const auto& ans : answers)
    for (const auto& tok : ans.tokens) {
      MemoryItem item;
      item.emit_token = tok;
      item.feature_tokens = {tok};
      item.kind = SlotKind::Retrieved;
      item.tag = entities.count(tok) ? EntityTag::EW : EntityTag::NEW;
      out.flat_items.push_back(std::move(item));
    }
  MemoryItem sentinel;
  sentinel.emit_token = kSentinelToken;
  sentinel.feature_tokens = {kSentinelToken};
  sentinel.kind = SlotKind::Sentinel;
  sentinel.is_sentinel = true;
  out.flat_items.push_back(std::move(sentinel));

  out.r_r.reserve(out.flat_items.size());
  for (const auto& item : out.flat_items)
    out.r_r.push_back((!item.is_sentinel && item.tag == EntityTag::NEW) ? 1 : 0);
  return out;
}

RetrievedAnswers sentinel_only_answers() {
  RetrievedAnswers out;
  MemoryItem sentinel;
  sentinel.emit_token = kSentinelToken;
  sentinel.feature_tokens = {kSentinelToken};
  sentinel.kind = SlotKind::Sentinel;
  sentinel.is_sentinel = true;
  out.flat_items.push_back(std::move(sentinel));
  out.r_r.push_back(0);
  return out;
}

}  // namespace thpn
