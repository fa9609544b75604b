#pragma once

#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "thpn/corpus.hpp"

namespace thpn {

struct MetricsReport {
  double bleu = 0.0;
  double per_response_accuracy = 0.0;
  double entity_f1 = 0.0;
  bool entity_f1_degenerate = false;
  std::map<std::string, double> per_domain_f1;
  double avg_retrieved = 0.0;
};

// Corpus-level BLEU-4: clipped n-gram precisions aggregated over the corpus,
// uniform 1/4 weights, brevity penalty on total lengths. Zero precisions are
// floored at 1e-9 inside the log.
double bleu(const std::vector<TokenList>& references, const std::vector<TokenList>& hypotheses);

double per_response_accuracy(const std::vector<TokenList>& references,
                             const std::vector<TokenList>& hypotheses);

// Micro-averaged F1 between gold entity sets and the entities found in each
// response (set semantics, exact-token matching against the lexicon).
double entity_f1(const std::vector<std::set<std::string>>& gold_sets,
                 const std::vector<TokenList>& responses,
                 const std::unordered_set<std::string>& lexicon,
                 bool* degenerate = nullptr);

// Gold entity set of a response: its tokens intersected with the lexicon.
std::set<std::string> gold_entities(const TokenList& response,
                                    const std::unordered_set<std::string>& lexicon);

double average_retrieved(const std::vector<int>& counts);

}  // namespace thpn
