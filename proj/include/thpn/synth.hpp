#pragma once

#include <cstdint>

#include "thpn/corpus.hpp"

namespace thpn {

enum class TaskStyle { Slots, KbLookup, Full };

struct GeneratorConfig {
  int n_restaurants = 6;
  int n_dialogues = 100;
  TaskStyle style = TaskStyle::Slots;
  std::uint64_t seed = 1;
};

TaskStyle parse_task_style(const std::string& name);
const char* task_style_name(TaskStyle style);

// Deterministic bAbI-style restaurant dialogues. `slots`: the user reveals
// cuisine/location/party-size/price across turns, the system asks for each
// missing slot with fixed templates and closes with an api_call listing the
// four values (all KB entities). `kb_lookup`: the user asks for a restaurant
// attribute and the gold response interpolates the KB object into a fixed
// template. `full` runs a slots phase followed by a lookup phase.
std::vector<Dialogue> generate_synthetic(const GeneratorConfig& config);

}  // namespace thpn
