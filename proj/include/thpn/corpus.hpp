#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "thpn/error.hpp"

namespace thpn {

using TokenList = std::vector<std::string>;

struct KBTriple {
  std::string subject;
  std::string relation;
  std::string object;
};

enum class Speaker { User, System };

struct Utterance {
  Speaker speaker;
  TokenList tokens;
};

struct Turn {
  TokenList user;
  TokenList system;
};

struct Dialogue {
  std::vector<Turn> turns;
  std::vector<KBTriple> kb;
  std::string domain;  // optional label, empty when absent
};

enum class EntityTag : std::uint8_t { NEW = 0, EW = 1 };

// A token is an entity word iff it appears as a subject or object of the KB.
std::unordered_set<std::string> kb_entity_set(const std::vector<KBTriple>& kb);
std::vector<EntityTag> tag_tokens(const TokenList& tokens,
                                  const std::unordered_set<std::string>& entities);

struct TurnTags {
  std::vector<EntityTag> user;
  std::vector<EntityTag> system;
};
std::vector<TurnTags> tag_entities(const Dialogue& dialogue);

enum class SlotKind : std::uint8_t { UserWord, SystemWord, Kb, Sentinel, Retrieved };

struct MemoryItem {
  std::string emit_token;   // token produced if this slot is copied
  TokenList feature_tokens; // embedded and summed to form the slot vector
  SlotKind kind = SlotKind::UserWord;
  int turn_index = 0;
  EntityTag tag = EntityTag::NEW;
  bool is_sentinel = false;
};

struct EncodedContext {
  std::vector<MemoryItem> items;  // history tokens, then KB slots, then sentinel
  std::vector<std::uint8_t> r_h;  // 1 = copyable
};

// Sentinel surface form appended to every memory sequence.
inline const char* kSentinelToken = "$$$";

// History must end with a user utterance. Feature tokens of a history word
// are {word, speaker marker, turn marker}; a KB triple occupies one slot that
// emits its object. r_h is 1 at entity-word history slots and KB slots, 0 at
// NEW history slots and the sentinel.
EncodedContext build_context(const std::vector<Utterance>& history,
                             const std::vector<KBTriple>& kb);

// Speaker / turn markers used as feature tokens (turn index capped).
std::string speaker_marker(Speaker s);
std::string turn_marker(int turn_index);
constexpr int kMaxTurnMarker = 16;

struct QAPair {
  TokenList question;
  TokenList answer;
};

std::vector<QAPair> extract_qa_pairs(const std::vector<Dialogue>& dialogues);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSentinel = 4;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);  // from checkpoint

  int add(const std::string& token);  // idempotent
  int index(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(int index) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Reserved symbols at indices 0..4, then speaker/turn markers, then the
// corpus tokens sorted-unique so the result is permutation invariant.
Vocabulary build_vocab(const std::vector<Dialogue>& training);

// bAbI dialog text format: "N user<TAB>system" turn lines, "N subj rel obj"
// fact lines, blank line between dialogues, N restarting at 1.
std::vector<Dialogue> parse_babi(std::istream& in);
std::vector<Dialogue> parse_babi_file(const std::string& path);
void serialize_babi(const std::vector<Dialogue>& dialogues, std::ostream& out);

// JSON-lines interchange: {"turns": [{"user": [...], "system": [...]}, ...],
// "kb": [[s, r, o], ...], "domain": "..."} per line.
std::vector<Dialogue> read_dialogues_jsonl(const std::string& path);
void write_dialogues_jsonl(const std::vector<Dialogue>& dialogues, const std::string& path);

TokenList tokenize(const std::string& text);  // lower-case, whitespace split

// History of dialogue `d` up to and including the user side of turn `i`.
std::vector<Utterance> history_through_user_turn(const Dialogue& d, std::size_t turn);

// Atomic write helper shared by every file-producing command.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace thpn
