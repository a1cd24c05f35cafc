#include "egdp/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "egdp/error.hpp"

namespace egdp::io {

using nlohmann::json;

json state_json(const auction::StepState& s) {
  const auto a = s.to_array();
  return json(std::vector<double>(a.begin(), a.end()));
}

auction::StepState state_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != auction::StepState::kDim) {
    throw InputError("state must have " + std::to_string(auction::StepState::kDim) + " entries");
  }
  return auction::StepState::from_span(v);
}

std::string episode_jsonl(const auction::EpisodeRecord& ep, const json& header_extra) {
  json header = {{"type", "header"},
                 {"budget", ep.budget},
                 {"target_cpa", ep.target_cpa},
                 {"initial_state", state_json(ep.initial_state)}};
  if (header_extra.is_object()) header.update(header_extra);
  std::string out = header.dump() + "\n";
  for (const auto& s : ep.steps) {
    const json line = {{"type", "step"},        {"t", s.t},           {"state", state_json(s.state)},
                       {"action", s.action},    {"reward", s.reward}, {"cost", s.cost},
                       {"wins", s.wins}};
    out += line.dump() + "\n";
  }
  return out;
}

std::string expert_jsonl(const expert::ExpertTrajectory& traj) {
  const json extra = {{"expert", true},
                      {"duals", {{"alpha_b", traj.duals.alpha_b}, {"alpha_c", traj.duals.alpha_c}}},
                      {"feasible", traj.feasible}};
  return episode_jsonl(traj.episode, extra);
}

EpisodeFile parse_episode_jsonl(const std::string& text) {
  EpisodeFile out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool seen_step = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "episode line " + std::to_string(lineno) + ": ";
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw InputError(where + "expected a JSON object");
      const std::string type = j.value("type", "step");
      if (type == "header") {
        if (seen_step) throw InputError(where + "header after step lines");
        out.episode.budget = j.value("budget", 0.0);
        out.episode.target_cpa = j.value("target_cpa", 0.0);
        if (j.contains("initial_state")) out.episode.initial_state = state_from_json(j.at("initial_state"));
        out.expert = j.value("expert", false);
        out.feasible = j.value("feasible", true);
        if (j.contains("duals")) {
          out.duals = expert::DualMultipliers{j.at("duals").at("alpha_b").get<double>(),
                                              j.at("duals").at("alpha_c").get<double>()};
        }
      } else if (type == "step") {
        seen_step = true;
        auction::StepRecord s;
        s.t = j.value("t", out.episode.steps.size());
        if (j.contains("state")) s.state = state_from_json(j.at("state"));
        s.action = j.value("action", 0.0);
        s.reward = j.at("reward").get<double>();
        s.cost = j.at("cost").get<double>();
        s.wins = j.value("wins", std::size_t{0});
        out.episode.steps.push_back(s);
      } else {
        throw InputError(where + "unknown type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw InputError(where + e.what());
    } catch (const InputError& e) {
      const std::string msg = e.what();
      if (msg.rfind("episode line", 0) == 0) throw;
      throw InputError(where + msg);
    }
  }
  if (!seen_step) throw InputError("episode file has no step lines");
  return out;
}

namespace {

json step_json(const auction::StepRecord& s) {
  return {{"t", s.t},         {"state", state_json(s.state)}, {"action", s.action},
          {"reward", s.reward}, {"cost", s.cost},               {"wins", s.wins}};
}

json episode_object(const auction::EpisodeRecord& ep) {
  json steps = json::array();
  for (const auto& s : ep.steps) steps.push_back(step_json(s));
  return {{"budget", ep.budget},
          {"target_cpa", ep.target_cpa},
          {"initial_state", state_json(ep.initial_state)},
          {"steps", std::move(steps)}};
}

auction::EpisodeRecord episode_from_object(const json& j) {
  auction::EpisodeRecord ep;
  ep.budget = j.at("budget").get<double>();
  ep.target_cpa = j.at("target_cpa").get<double>();
  ep.initial_state = state_from_json(j.at("initial_state"));
  for (const auto& s : j.at("steps")) {
    ep.steps.push_back({s.at("t").get<std::size_t>(), state_from_json(s.at("state")), s.at("action").get<double>(),
                        s.at("reward").get<double>(), s.at("cost").get<double>(), s.at("wins").get<std::size_t>()});
  }
  return ep;
}

std::string slurp(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open ") + what + ": " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string dataset_jsonl(const data::GeneratedData& g) {
  std::string out;
  for (std::size_t j = 0; j < g.experts.size(); ++j) {
    json line = episode_object(g.experts[j]);
    line["role"] = "expert";
    line["index"] = j;
    if (j < g.duals.size()) line["duals"] = {{"alpha_b", g.duals[j].alpha_b}, {"alpha_c", g.duals[j].alpha_c}};
    out += line.dump() + "\n";
  }
  for (std::size_t i = 0; i < g.episodes.size(); ++i) {
    json line = episode_object(g.episodes[i]);
    line["role"] = "behavior";
    line["expert_index"] = g.expert_of.at(i);
    out += line.dump() + "\n";
  }
  return out;
}

data::GeneratedData parse_dataset_jsonl(const std::string& text) {
  data::GeneratedData g;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "dataset line " + std::to_string(lineno) + ": ";
    try {
      const json j = json::parse(line);
      const std::string role = j.at("role").get<std::string>();
      if (role == "expert") {
        if (j.at("index").get<std::size_t>() != g.experts.size()) throw InputError(where + "expert index out of order");
        g.experts.push_back(episode_from_object(j));
        expert::DualMultipliers d;
        if (j.contains("duals")) d = {j.at("duals").at("alpha_b").get<double>(), j.at("duals").at("alpha_c").get<double>()};
        g.duals.push_back(d);
      } else if (role == "behavior") {
        const std::size_t e = j.at("expert_index").get<std::size_t>();
        if (e >= g.experts.size()) throw InputError(where + "expert_index refers to an unknown expert");
        g.episodes.push_back(episode_from_object(j));
        g.expert_of.push_back(e);
      } else {
        throw InputError(where + "unknown role '" + role + "'");
      }
    } catch (const json::exception& e) {
      throw InputError(where + e.what());
    }
  }
  if (g.episodes.empty()) throw InputError("dataset file has no behavior episodes");
  return g;
}

data::GeneratedData read_dataset_jsonl(const std::filesystem::path& path) {
  return parse_dataset_jsonl(slurp(path, "dataset file"));
}

EpisodeFile read_episode_jsonl(const std::filesystem::path& path) {
  return parse_episode_jsonl(slurp(path, "episode file"));
}

}  // namespace egdp::io
