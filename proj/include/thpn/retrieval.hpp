#pragma once

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "thpn/corpus.hpp"
#include "thpn/tensor.hpp"

namespace thpn {

enum class RetrievalMethod { Bm25, EmbedCosine, ExternalVectors };

RetrievalMethod parse_retrieval_method(const std::string& name);
const char* retrieval_method_name(RetrievalMethod m);

struct RetrievalConfig {
  double theta = 0.8;       // similarity threshold, (0, 1]
  int max_candidates = 3;   // fixed top-3 cap
  RetrievalMethod method = RetrievalMethod::EmbedCosine;
  std::string external_vector_file;
};

struct ScoredAnswer {
  TokenList tokens;
  double score = 0.0;
  int pair_id = -1;
};

struct RetrievedAnswers {
  std::vector<ScoredAnswer> answers;      // descending score
  std::vector<MemoryItem> flat_items;     // rank-order concat + sentinel
  std::vector<std::uint8_t> r_r;          // 1 = copyable
};

// Question-answer repository over the training pairs. Immutable once built;
// the query counter only instruments test assertions.
class QARepository {
 public:
  const std::vector<QAPair>& pairs() const { return pairs_; }
  int size() const { return static_cast<int>(pairs_.size()); }
  std::size_t query_count() const { return query_count_; }

  // BM25 statistics (k1 = 1.5, b = 0.75)
  double bm25_k1 = 1.5;
  double bm25_b = 0.75;

 private:
  friend QARepository build_repository(const std::vector<QAPair>&, const RetrievalConfig&,
                                       const Vocabulary*, const Mat*);
  friend std::vector<ScoredAnswer> retrieve(const TokenList&, const QARepository&,
                                            const RetrievalConfig&, int);
  friend double bm25_score(const TokenList&, int, const QARepository&);
  friend double cosine_score(const TokenList&, int, const QARepository&);

  std::vector<QAPair> pairs_;
  // bm25 index
  std::vector<std::unordered_map<std::string, int>> term_counts_;
  std::unordered_map<std::string, int> doc_freq_;
  double avg_len_ = 0.0;
  // cosine backend: one L2-normalized row per question; the vocabulary and
  // embedding table are snapshotted so the repository owns its state
  Mat question_vectors_;
  Mat token_vectors_;
  Vocabulary vocab_;
  bool has_vectors_ = false;
  mutable std::size_t query_count_ = 0;
};

// For embed_cosine, `vocab` and `embeddings` (V x d) are required; question
// vectors are the L2-normalized means of the token embedding rows. For
// external_vectors the JSON-lines file {"id": i, "vector": [...]} supplies
// one vector per pair id; missing ids fall back to a constant placeholder
// with a warning.
QARepository build_repository(const std::vector<QAPair>& pairs, const RetrievalConfig& config,
                              const Vocabulary* vocab = nullptr, const Mat* embeddings = nullptr);

// Candidates scoring >= theta, descending, capped at 3 (exactly 1 when
// theta >= 1); if none qualify, the single best candidate. `exclude_pair_id`
// drops the repository pair the training example itself produced (the
// self-retrieval leak guard); identical pairs contributed by other dialogues
// stay retrievable.
std::vector<ScoredAnswer> retrieve(const TokenList& query, const QARepository& repo,
                                   const RetrievalConfig& config, int exclude_pair_id = -1);

double bm25_score(const TokenList& query, int doc_id, const QARepository& repo);
double cosine_score(const TokenList& query, int doc_id, const QARepository& repo);

// Concatenates answers in rank order, tags tokens against the dialogue KB
// plus the global entity set, appends the sentinel. r_r is 0 exactly at
// entity words and the sentinel.
RetrievedAnswers mask_and_flatten(const std::vector<ScoredAnswer>& answers,
                                  const std::vector<KBTriple>& kb,
                                  const std::unordered_set<std::string>& global_entities);

// Sentinel-only stand-in used by the no-IR ablation; bypasses retrieval.
RetrievedAnswers sentinel_only_answers();

}  // namespace thpn
