#include "thpn/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace thpn {

std::unordered_set<std::string> kb_entity_set(const std::vector<KBTriple>& kb) {
  std::unordered_set<std::string> entities;
  for (const auto& t : kb) {
    entities.insert(t.subject);
    entities.insert(t.object);
  }
  return entities;
}

std::vector<EntityTag> tag_tokens(const TokenList& tokens,
                                  const std::unordered_set<std::string>& entities) {
  std::vector<EntityTag> tags;
  tags.reserve(tokens.size());
  for (const auto& tok : tokens)
    tags.push_back(entities.count(tok) ? EntityTag::EW : EntityTag::NEW);
  return tags;
}

std::vector<TurnTags> tag_entities(const Dialogue& dialogue) {
  const auto entities = kb_entity_set(dialogue.kb);
  std::vector<TurnTags> out;
  out.reserve(dialogue.turns.size());
  for (const auto& turn : dialogue.turns)
    out.push_back({tag_tokens(turn.user, entities), tag_tokens(turn.system, entities)});
  return out;
}

std::string speaker_marker(Speaker s) { return s == Speaker::User ? "$u" : "$s"; }

std::string turn_marker(int turn_index) {
  return "turn_" + std::to_string(std::min(turn_index, kMaxTurnMarker));
}

EncodedContext build_context(const std::vector<Utterance>& history,
                             const std::vector<KBTriple>& kb) {
  if (history.empty()) throw DataError("build_context: empty history");
  if (history.back().speaker != Speaker::User)
    throw DataError("build_context: history must end with a user utterance");

  const auto entities = kb_entity_set(kb);
  EncodedContext ctx;
  int turn = 0;
  for (const auto& utt : history) {
    for (const auto& tok : utt.tokens) {
      MemoryItem item;
      item.emit_token = tok;
      item.feature_tokens = {tok, speaker_marker(utt.speaker), turn_marker(turn)};
      item.kind = utt.speaker == Speaker::User ? SlotKind::UserWord : SlotKind::SystemWord;
      item.turn_index = turn;
      item.tag = entities.count(tok) ? EntityTag::EW : EntityTag::NEW;
      ctx.items.push_back(std::move(item));
    }
    if (utt.speaker == Speaker::System) ++turn;  // a turn closes with the system side
  }
  for (const auto& triple : kb) {
    MemoryItem item;
    item.emit_token = triple.object;
    item.feature_tokens = {triple.subject, triple.relation, triple.object};
    item.kind = SlotKind::Kb;
    item.turn_index = 0;
    item.tag = EntityTag::EW;  // objects are entities by construction
    ctx.items.push_back(std::move(item));
  }
  MemoryItem sentinel;
  sentinel.emit_token = kSentinelToken;
  sentinel.feature_tokens = {kSentinelToken};
  sentinel.kind = SlotKind::Sentinel;
  sentinel.tag = EntityTag::NEW;
  sentinel.is_sentinel = true;
  ctx.items.push_back(std::move(sentinel));

  ctx.r_h.reserve(ctx.items.size());
  for (const auto& item : ctx.items) {
    bool copyable = !item.is_sentinel &&
                    (item.kind == SlotKind::Kb || item.tag == EntityTag::EW);
    ctx.r_h.push_back(copyable ? 1 : 0);
  }
  return ctx;
}

std::vector<QAPair> extract_qa_pairs(const std::vector<Dialogue>& dialogues) {
  std::vector<QAPair> pairs;
  for (const auto& d : dialogues)
    for (const auto& turn : d.turns)
      if (!turn.user.empty() && !turn.system.empty())
        pairs.push_back({turn.user, turn.system});
  return pairs;
}

Vocabulary::Vocabulary() {
  for (const char* tok : {"<pad>", "<unk>", "<sos>", "<eos>", kSentinelToken}) add(tok);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) add(t);
  if (size() < 5) throw DataError("vocabulary missing reserved symbols");
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int index) const {
  if (index < 0 || index >= size())
    throw DimensionError("vocabulary index " + std::to_string(index) + " out of range");
  return tokens_[index];
}

Vocabulary build_vocab(const std::vector<Dialogue>& training) {
  Vocabulary vocab;
  vocab.add(speaker_marker(Speaker::User));
  vocab.add(speaker_marker(Speaker::System));
  for (int t = 0; t <= kMaxTurnMarker; ++t) vocab.add(turn_marker(t));
  std::set<std::string> seen;
  for (const auto& d : training) {
    for (const auto& turn : d.turns) {
      seen.insert(turn.user.begin(), turn.user.end());
      seen.insert(turn.system.begin(), turn.system.end());
    }
    for (const auto& t : d.kb) {
      seen.insert(t.subject);
      seen.insert(t.relation);
      seen.insert(t.object);
    }
  }
  for (const auto& tok : seen) vocab.add(tok);
  return vocab;
}

TokenList tokenize(const std::string& text) {
  TokenList tokens;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace {

std::string join(const TokenList& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

}  // namespace

std::vector<Dialogue> parse_babi(std::istream& in) {
  std::vector<Dialogue> dialogues;
  Dialogue current;
  bool in_dialogue = false;
  int expected_index = 1;
  int line_no = 0;
  std::string line;

  auto flush = [&] {
    if (in_dialogue) {
      if (current.turns.empty())
        throw DataError("babi parse: dialogue without turns ending before line " +
                        std::to_string(line_no));
      dialogues.push_back(std::move(current));
      current = Dialogue{};
      in_dialogue = false;
      expected_index = 1;
    }
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    const auto space = line.find(' ');
    if (space == std::string::npos)
      throw DataError("babi parse: malformed line " + std::to_string(line_no));
    int index = 0;
    try {
      index = std::stoi(line.substr(0, space));
    } catch (const std::exception&) {
      throw DataError("babi parse: bad line index at line " + std::to_string(line_no));
    }
    if (index != expected_index)
      throw DataError("babi parse: line " + std::to_string(line_no) + " has index " +
                      std::to_string(index) + ", expected " +
                      std::to_string(expected_index));
    ++expected_index;
    in_dialogue = true;

    const std::string rest = line.substr(space + 1);
    const auto tab = rest.find('\t');
    if (tab != std::string::npos) {
      Turn turn;
      turn.user = tokenize(rest.substr(0, tab));
      turn.system = tokenize(rest.substr(tab + 1));
      if (turn.user.empty() || turn.system.empty())
        throw DataError("babi parse: empty utterance at line " + std::to_string(line_no));
      current.turns.push_back(std::move(turn));
    } else {
      const TokenList toks = tokenize(rest);
      if (toks.size() != 3)
        throw DataError("babi parse: fact line " + std::to_string(line_no) +
                        " must hold exactly 3 tokens");
      current.kb.push_back({toks[0], toks[1], toks[2]});
    }
  }
  flush();
  return dialogues;
}

std::vector<Dialogue> parse_babi_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_babi(in);
}

void serialize_babi(const std::vector<Dialogue>& dialogues, std::ostream& out) {
  for (std::size_t d = 0; d < dialogues.size(); ++d) {
    if (d) out << '\n';
    int index = 1;
    for (const auto& triple : dialogues[d].kb)
      out << index++ << ' ' << triple.subject << ' ' << triple.relation << ' '
          << triple.object << '\n';
    for (const auto& turn : dialogues[d].turns)
      out << index++ << ' ' << join(turn.user) << '\t' << join(turn.system) << '\n';
  }
}

std::vector<Dialogue> read_dialogues_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<Dialogue> dialogues;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Dialogue d;
    for (const auto& turn : j.at("turns")) {
      Turn t;
      for (const auto& tok : turn.at("user")) t.user.push_back(tok.get<std::string>());
      for (const auto& tok : turn.at("system")) t.system.push_back(tok.get<std::string>());
      d.turns.push_back(std::move(t));
    }
    if (j.contains("kb"))
      for (const auto& triple : j.at("kb")) {
        if (triple.size() != 3)
          throw DataError(path + ":" + std::to_string(line_no) + ": kb triple arity");
        d.kb.push_back({triple[0].get<std::string>(), triple[1].get<std::string>(),
                        triple[2].get<std::string>()});
      }
    if (j.contains("domain")) d.domain = j.at("domain").get<std::string>();
    dialogues.push_back(std::move(d));
  }
  return dialogues;
}

void write_dialogues_jsonl(const std::vector<Dialogue>& dialogues, const std::string& path) {
  std::string payload;
  for (const auto& d : dialogues) {
    nlohmann::json j;
    j["turns"] = nlohmann::json::array();
    for (const auto& turn : d.turns)
      j["turns"].push_back({{"user", turn.user}, {"system", turn.system}});
    j["kb"] = nlohmann::json::array();
    for (const auto& t : d.kb) j["kb"].push_back({t.subject, t.relation, t.object});
    if (!d.domain.empty()) j["domain"] = d.domain;
    payload += j.dump();
    payload += '\n';
  }
  write_file_atomic(path, payload);
}

std::vector<Utterance> history_through_user_turn(const Dialogue& d, std::size_t turn) {
  if (turn >= d.turns.size())
    throw DataError("history_through_user_turn: turn index out of range");
  std::vector<Utterance> history;
  for (std::size_t i = 0; i < turn; ++i) {
    history.push_back({Speaker::User, d.turns[i].user});
    history.push_back({Speaker::System, d.turns[i].system});
  }
  history.push_back({Speaker::User, d.turns[turn].user});
  return history;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename " + tmp + " to " + path);
}

}  // namespace thpn
