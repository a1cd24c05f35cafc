#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "egdp/auction.hpp"
#include "egdp/dataset.hpp"
#include "egdp/expert.hpp"

namespace egdp::io {

// Episode files hold one JSON object per line. The first line is a header
// {"type": "header", "budget", "target_cpa", "initial_state": [...]} with
// optional "expert": true, "duals": {"alpha_b", "alpha_c"} and "feasible".
// Every further line is a step {"type": "step", "t", "state": [...],
// "action", "reward", "cost", "wins"}. A line without "type" is read as a step
// and the header may be omitted.
struct EpisodeFile {
  auction::EpisodeRecord episode;
  bool expert = false;
  std::optional<expert::DualMultipliers> duals;
  bool feasible = true;
};

std::string episode_jsonl(const auction::EpisodeRecord& ep, const nlohmann::json& header_extra = {});
std::string expert_jsonl(const expert::ExpertTrajectory& traj);

// Throws InputError naming the line number on malformed input.
EpisodeFile parse_episode_jsonl(const std::string& text);
EpisodeFile read_episode_jsonl(const std::filesystem::path& path);

// Behavior data: one whole episode per line, experts first.
// {"role": "expert", "index", "duals", "budget", "target_cpa",
//  "initial_state", "steps": [...]} or {"role": "behavior", "expert_index", ...}.
std::string dataset_jsonl(const data::GeneratedData& g);
data::GeneratedData parse_dataset_jsonl(const std::string& text);
data::GeneratedData read_dataset_jsonl(const std::filesystem::path& path);

nlohmann::json state_json(const auction::StepState& s);
auction::StepState state_from_json(const nlohmann::json& j);

}  // namespace egdp::io
