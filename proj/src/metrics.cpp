#include "thpn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace thpn {

namespace {

constexpr double kPrecisionFloor = 1e-9;

// n-grams keyed by separator-joined tokens
std::unordered_map<std::string, int> ngram_counts(const TokenList& tokens, int n) {
  std::unordered_map<std::string, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key.push_back('\x1e');
      key += tokens[i + k];
    }
    counts[key] += 1;
  }
  return counts;
}

}  // namespace

double bleu(const std::vector<TokenList>& references,
            const std::vector<TokenList>& hypotheses) {
  if (references.empty() || references.size() != hypotheses.size())
    throw DataError("bleu: corpus empty or misaligned");

  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    long long matched = 0, total = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
      const auto hyp = ngram_counts(hypotheses[i], n);
      const auto ref = ngram_counts(references[i], n);
      for (const auto& [gram, count] : hyp) {
        total += count;
        auto it = ref.find(gram);
        if (it != ref.end()) matched += std::min(count, it->second);
      }
    }
    const double p = total > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
    log_sum += 0.25 * std::log(std::max(p, kPrecisionFloor));
  }

  long long hyp_len = 0, ref_len = 0;
  for (const auto& h : hypotheses) hyp_len += static_cast<long long>(h.size());
  for (const auto& r : references) ref_len += static_cast<long long>(r.size());
  if (hyp_len == 0) return 0.0;
  const double bp =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_sum);
}

double per_response_accuracy(const std::vector<TokenList>& references,
                             const std::vector<TokenList>& hypotheses) {
  if (references.empty() || references.size() != hypotheses.size())
    throw DataError("per_response_accuracy: corpus empty or misaligned");
  std::size_t exact = 0;
  for (std::size_t i = 0; i < references.size(); ++i)
    if (references[i] == hypotheses[i]) ++exact;
  return static_cast<double>(exact) / static_cast<double>(references.size());
}

std::set<std::string> gold_entities(const TokenList& response,
                                    const std::unordered_set<std::string>& lexicon) {
  std::set<std::string> out;
  for (const auto& tok : response)
    if (lexicon.count(tok)) out.insert(tok);
  return out;
}

double entity_f1(const std::vector<std::set<std::string>>& gold_sets,
                 const std::vector<TokenList>& responses,
                 const std::unordered_set<std::string>& lexicon, bool* degenerate) {
  if (gold_sets.size() != responses.size())
    throw DataError("entity_f1: misaligned inputs");
  long long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto predicted = gold_entities(responses[i], lexicon);
    for (const auto& e : predicted)
      gold_sets[i].count(e) ? ++tp : ++fp;
    for (const auto& e : gold_sets[i])
      if (!predicted.count(e)) ++fn;
  }
  if (degenerate) *degenerate = (tp + fp + fn) == 0;
  const double p = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double r = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

double average_retrieved(const std::vector<int>& counts) {
  if (counts.empty()) return 0.0;
  double sum = 0.0;
  for (int c : counts) sum += c;
  return sum / static_cast<double>(counts.size());
}

}  // namespace thpn
