#include "thpn/synth.hpp"

#include <array>

#include "thpn/rng.hpp"

namespace thpn {

namespace {

const std::array<const char*, 6> kCuisines = {"british", "french",  "indian",
                                              "italian", "spanish", "thai"};
const std::array<const char*, 6> kLocations = {"bombay", "hanoi", "london",
                                               "madrid", "paris", "rome"};
const std::array<const char*, 4> kNumbers = {"two", "four", "six", "eight"};
const std::array<const char*, 3> kPrices = {"cheap", "moderate", "expensive"};
const std::array<const char*, 3> kGreetings = {"hi", "hello", "good morning"};

struct Restaurant {
  std::string name;
  std::string cuisine;
  std::string location;
};

std::vector<Restaurant> restaurant_pool(int n) {
  // diagonal enumeration of (location, cuisine) pairs so small pools still
  // cover every location and cuisine
  std::vector<Restaurant> pool;
  const int l = static_cast<int>(kLocations.size());
  const int c = static_cast<int>(kCuisines.size());
  for (int i = 0; i < n; ++i) {
    const int li = i % l;
    const int ci = (i / l + i) % c;
    pool.push_back({std::string("resto_") + kLocations[li] + "_" + kCuisines[ci],
                    kCuisines[ci], kLocations[li]});
  }
  return pool;
}

TokenList words(std::initializer_list<std::string> list) { return TokenList(list); }

// Slot order is fixed: cuisine, location, number, price.
enum Slot { kCuisine = 0, kLocation = 1, kNumber = 2, kPrice = 3 };

TokenList slot_question(int slot) {
  switch (slot) {
    case kCuisine: return tokenize("any preference on a type of cuisine");
    case kLocation: return tokenize("where should it be");
    case kNumber: return tokenize("how many people would be in your party");
    default: return tokenize("which price range are you looking for");
  }
}

TokenList slot_answer(int slot, const std::array<std::string, 4>& values) {
  switch (slot) {
    case kCuisine: return words({"with", values[kCuisine], "food"});
    case kLocation: return words({"in", values[kLocation]});
    case kNumber: return words({"for", values[kNumber], "people"});
    default: return words({"in", "a", values[kPrice], "price", "range"});
  }
}

void append_slots_phase(Dialogue& d, const Restaurant& resto,
                        const std::array<std::string, 4>& values, RngState& rng) {
  d.kb.push_back({resto.name, "r_cuisine", values[kCuisine]});
  d.kb.push_back({resto.name, "r_location", values[kLocation]});
  d.kb.push_back({resto.name, "r_number", values[kNumber]});
  d.kb.push_back({resto.name, "r_price", values[kPrice]});

  d.turns.push_back({tokenize(kGreetings[rng.uniform_int(kGreetings.size())]),
                     tokenize("hello what can i help you with today")});

  // the request reveals a canonical-order prefix of the slots; the system
  // asks for the rest in the same order
  std::array<bool, 4> revealed{};
  const int reveal_count = static_cast<int>(rng.uniform_int(5));
  for (int s = 0; s < reveal_count; ++s) revealed[s] = true;

  TokenList request = tokenize("may i have a table");
  if (revealed[kCuisine]) {
    request.push_back("with");
    request.push_back(values[kCuisine]);
    request.push_back("cuisine");
  }
  if (revealed[kLocation]) {
    request.push_back("in");
    request.push_back(values[kLocation]);
  }
  if (revealed[kNumber]) {
    request.push_back("for");
    request.push_back(values[kNumber]);
    request.push_back("people");
  }
  if (revealed[kPrice]) {
    for (const auto& t : words({"in", "a", values[kPrice], "price", "range"}))
      request.push_back(t);
  }

  std::vector<int> missing;
  for (int s = 0; s < 4; ++s)
    if (!revealed[s]) missing.push_back(s);

  const TokenList api_call = words({"api_call", values[kCuisine], values[kLocation],
                                    values[kNumber], values[kPrice]});
  // each user turn answers the previous question, the system asks for the
  // next missing slot and closes with the api_call
  TokenList user = request;
  for (int slot : missing) {
    d.turns.push_back({user, slot_question(slot)});
    user = slot_answer(slot, values);
  }
  d.turns.push_back({user, api_call});
}

struct LookupAttr {
  const char* relation;
  // question paraphrases and the answer template are filled with the
  // restaurant name and attribute value
  TokenList question(int variant, const std::string& name) const;
  TokenList answer(const std::string& name, const std::string& value) const;
  std::string value(const Restaurant& r) const;
  int id;
};

TokenList LookupAttr::question(int variant, const std::string& name) const {
  switch (id) {
    case 0:
      return variant == 0 ? words({"what", "is", "the", "phone", "number", "of", name})
                          : words({"may", "i", "have", "the", "phone", "number", "of", name});
    case 1:
      return variant == 0 ? words({"what", "is", "the", "address", "of", name})
                          : words({"could", "you", "give", "me", "the", "address", "of", name});
    default:
      return variant == 0 ? words({"what", "type", "of", "food", "does", name, "serve"})
                          : words({"what", "kind", "of", "cuisine", "does", name, "serve"});
  }
}

TokenList LookupAttr::answer(const std::string& name, const std::string& value) const {
  switch (id) {
    case 0: return words({"the", "phone", "number", "of", name, "is", value});
    case 1: return words({name, "is", "located", "at", value});
    default: return words({name, "serves", value, "food"});
  }
}

std::string LookupAttr::value(const Restaurant& r) const {
  switch (id) {
    case 0: return r.name + "_phone";
    case 1: return r.name + "_address";
    default: return r.cuisine;
  }
}

const std::array<LookupAttr, 3> kAttrs = {LookupAttr{"r_phone", 0},
                                          LookupAttr{"r_address", 1},
                                          LookupAttr{"r_cuisine", 2}};

void append_lookup_kb(Dialogue& d, const Restaurant& resto) {
  for (const auto& attr : kAttrs)
    d.kb.push_back({resto.name, attr.relation, attr.value(resto)});
}

void append_lookup_phase(Dialogue& d, const Restaurant& resto, bool greet, RngState& rng) {
  if (greet)
    d.turns.push_back({tokenize(kGreetings[rng.uniform_int(kGreetings.size())]),
                       tokenize("hello what can i help you with today")});
  const auto& attr = kAttrs[rng.uniform_int(kAttrs.size())];
  const int variant = static_cast<int>(rng.uniform_int(2));
  d.turns.push_back(
      {attr.question(variant, resto.name), attr.answer(resto.name, attr.value(resto))});
  d.turns.push_back({words({"thank", "you"}), words({"you", "are", "welcome"})});
}

}  // namespace

TaskStyle parse_task_style(const std::string& name) {
  if (name == "slots") return TaskStyle::Slots;
  if (name == "kb_lookup") return TaskStyle::KbLookup;
  if (name == "full") return TaskStyle::Full;
  throw ConfigError("unknown task style: " + name);
}

const char* task_style_name(TaskStyle style) {
  switch (style) {
    case TaskStyle::Slots: return "slots";
    case TaskStyle::KbLookup: return "kb_lookup";
    default: return "full";
  }
}

std::vector<Dialogue> generate_synthetic(const GeneratorConfig& config) {
  if (config.n_restaurants < 4)
    throw ConfigError("generate_synthetic: n_restaurants must be >= 4");
  if (config.n_dialogues < 1)
    throw ConfigError("generate_synthetic: n_dialogues must be >= 1");
  const auto pool = restaurant_pool(config.n_restaurants);

  RngState rng(config.seed);
  std::vector<Dialogue> dialogues;
  dialogues.reserve(config.n_dialogues);
  for (int i = 0; i < config.n_dialogues; ++i) {
    Dialogue d;
    d.domain = task_style_name(config.style);
    const Restaurant& resto = pool[rng.uniform_int(pool.size())];
    std::array<std::string, 4> values = {resto.cuisine, resto.location,
                                         kNumbers[rng.uniform_int(kNumbers.size())],
                                         kPrices[rng.uniform_int(kPrices.size())]};
    switch (config.style) {
      case TaskStyle::Slots:
        append_slots_phase(d, resto, values, rng);
        break;
      case TaskStyle::KbLookup:
        append_lookup_kb(d, resto);
        append_lookup_phase(d, resto, /*greet=*/true, rng);
        break;
      case TaskStyle::Full:
        append_lookup_kb(d, resto);
        append_slots_phase(d, resto, values, rng);
        append_lookup_phase(d, resto, /*greet=*/false, rng);
        break;
    }
    dialogues.push_back(std::move(d));
  }
  return dialogues;
}

}  // namespace thpn
