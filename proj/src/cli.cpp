#include "egdp/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "egdp/checkpoint.hpp"
#include "egdp/config.hpp"
#include "egdp/error.hpp"
#include "egdp/evaluator.hpp"
#include "egdp/expert.hpp"
#include "egdp/grad_suite.hpp"
#include "egdp/jsonl.hpp"
#include "egdp/trainer.hpp"

namespace egdp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";

  std::optional<std::size_t> gamma;
  std::optional<double> omega;
  std::optional<double> temperature;
  std::vector<std::string> ablations;
  std::optional<std::size_t> steps;
  std::optional<double> delta;
  std::optional<double> xi;
  std::optional<std::size_t> plan_every;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> policies;
  bool no_timing = false;

  std::string data;
  std::string checkpoint;
  std::string bc_checkpoint;
  std::string resume;
  std::string policy = "egdp";
  std::optional<double> coef;

  std::string param;
  std::vector<double> values;

  std::string episode;
  std::optional<double> cpa;
  std::optional<double> lambda;
};

// Output directory bookkeeping: every file goes through here so the
// manifest lists it.
class Run {
 public:
  Run(std::string command, RunConfig cfg, fs::path out) : command_(std::move(command)), cfg_(std::move(cfg)), out_(std::move(out)) {}

  RunConfig& cfg() { return cfg_; }
  const fs::path& dir() const { return out_; }

  fs::path write(const std::string& name, const std::string& contents) {
    const fs::path p = out_ / name;
    write_file_atomic(p, contents);
    add(p);
    return p;
  }
  void add(const fs::path& p) {
    const std::string rel = fs::relative(p, out_).generic_string();
    if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
  }
  void finish(const json& extra = json::object()) {
    json m = {{"command", command_}, {"files", files_}, {"config", to_json(cfg_)}};
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    std::vector<std::string> listed = files_;
    listed.push_back("manifest.json");
    m["files"] = listed;
    write_file_atomic(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  RunConfig cfg_;
  fs::path out_;
  std::vector<std::string> files_;
};

void apply_ablation(TrainConfig& t, const std::string& raw) {
  std::string a;
  for (char c : raw) {
    if (c != ' ' && c != '.' && c != '_' && c != '-' && c != '/') a += static_cast<char>(std::tolower(c));
  }
  if (a == "wobf") {
    t.disable_blend = true;
  } else if (a == "woca") {
    t.disable_cross_attn = true;
  } else if (a == "woacc") {
    t.force_gamma_1 = true;
  } else if (a == "none" || a == "all") {
  } else {
    throw ConfigError("--ablation: unknown value '" + raw + "' (expected w/o-bf, w/o-ca, w/o-acc or none)");
  }
}

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? default_run_config() : load_run_config(o.config);
  if (o.seed) {
    cfg.env.seed = *o.seed;
    cfg.train.seed = *o.seed;
    cfg.train.data.seed = *o.seed;
    cfg.sampler.seed = *o.seed;
  }
  if (o.gamma) cfg.sampler.gamma = *o.gamma;
  if (o.omega) cfg.sampler.omega = *o.omega;
  if (o.temperature) cfg.sampler.temperature = *o.temperature;
  for (const auto& a : o.ablations) apply_ablation(cfg.train, a);
  if (o.steps) cfg.train.steps = *o.steps;
  if (o.delta) cfg.train.delta = *o.delta;
  if (o.xi) cfg.train.xi = *o.xi;
  if (o.plan_every) cfg.eval.plan_every = *o.plan_every;
  if (!o.seeds.empty()) cfg.eval.seeds = o.seeds;
  if (!o.policies.empty()) cfg.eval.policies = o.policies;
  if (o.no_timing) cfg.eval.record_timing = false;
  if (o.lambda) cfg.eval.score_lambda = *o.lambda;
  if (!o.param.empty()) cfg.eval.sweep_param = o.param;
  if (!o.values.empty()) cfg.eval.sweep_values = o.values;
  cfg.validate();
  return cfg;
}

data::GeneratedData load_or_generate(Run& run, const Options& o, std::ostream& out) {
  if (!o.data.empty()) {
    if (!fs::exists(o.data)) throw ConfigError("--data: file not found: " + o.data);
    return io::read_dataset_jsonl(o.data);
  }
  out << "generating behavior data (" << run.cfg().train.data.num_seeds << " seeds)\n";
  data::GeneratedData g = data::generate(run.cfg().env, run.cfg().train.data, run.cfg().expert);
  run.write("dataset.jsonl", io::dataset_jsonl(g));
  return g;
}

data::Dataset to_dataset(const data::GeneratedData& g) { return data::build_dataset(g.episodes, g.expert_of, g.experts); }

json result_json(const eval::EpisodeResult& r) {
  return {{"score", r.score},       {"conversions", r.conversions}, {"cost", r.cost},
          {"cpa", eval::format_double(r.cpa)}, {"budget_util", r.budget_util}, {"plan_ms", r.plan_ms},
          {"denoiser_evals", r.denoiser_evals}, {"planning_calls", r.planning_calls}};
}

std::shared_ptr<const TrainerState> load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint: required");
  if (!fs::exists(path)) throw ConfigError("--checkpoint: file not found: " + path);
  return std::make_shared<const TrainerState>(from_checkpoint(load_checkpoint(path)));
}

int cmd_simulate(const Options& o, std::ostream& out) {
  Run run("simulate", resolve_config(o), o.out);
  eval::PolicySpec spec;
  spec.kind = eval::PolicyKind::kFixedBid;
  spec.coefficient = o.coef.value_or(1.0);
  spec.record_timing = false;
  if (!(spec.coefficient >= 0.0)) throw ConfigError("--coef: must be >= 0");
  const auto r = eval::run_episode(spec, run.cfg().env, run.cfg().env.seed, {run.cfg().eval.score_lambda});
  run.write("episode.jsonl", io::episode_jsonl(r.record, {{"coefficient", spec.coefficient}}));
  run.write("result.json", result_json(r).dump(2) + "\n");
  run.finish();
  out << "score " << eval::format_double(r.score) << "\n";
  return kExitOk;
}

int cmd_expert(const Options& o, std::ostream& out) {
  Run run("expert", resolve_config(o), o.out);
  auto env = run.cfg().env;
  const expert::ExpertTrajectory traj = expert::solve_and_rollout(env, run.cfg().expert);
  const double score = auction::compute_score(traj.episode, {run.cfg().eval.score_lambda});
  run.write("expert.jsonl", io::expert_jsonl(traj));
  const json res = {{"alpha_b", traj.duals.alpha_b},
                    {"alpha_c", traj.duals.alpha_c},
                    {"feasible", traj.feasible},
                    {"realized_cost", traj.realized_cost},
                    {"realized_value", traj.realized_value},
                    {"score", score}};
  run.write("result.json", res.dump(2) + "\n");
  run.finish();
  out << "alpha_b " << eval::format_double(traj.duals.alpha_b) << " alpha_c " << eval::format_double(traj.duals.alpha_c)
      << " score " << eval::format_double(score) << "\n";
  return kExitOk;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  Run run("gen-data", resolve_config(o), o.out);
  const data::GeneratedData g = data::generate(run.cfg().env, run.cfg().train.data, run.cfg().expert);
  run.write("dataset.jsonl", io::dataset_jsonl(g));
  run.finish({{"episodes", g.episodes.size()}, {"experts", g.experts.size()}});
  out << g.episodes.size() << " behavior episodes, " << g.experts.size() << " expert episodes\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  Run run("train", resolve_config(o), o.out);
  const data::Dataset d = to_dataset(load_or_generate(run, o, out));
  TrainerState st;
  if (!o.resume.empty()) {
    if (!fs::exists(o.resume)) throw ConfigError("--resume: file not found: " + o.resume);
    st = from_checkpoint(load_checkpoint(o.resume));
    if (o.steps) st.cfg.steps = *o.steps;
    run.cfg().train = st.cfg;
  } else {
    st = TrainerState::init(run.cfg().train, d);
  }
  TrainOutputs outputs;
  outputs.dir = run.dir();
  const auto start = std::chrono::steady_clock::now();
  const TrainResult res = train(std::move(st), d, outputs);
  for (const auto& f : res.files) run.add(f);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const LossReport last = res.state.history.empty() ? LossReport{} : res.state.history.back();
  run.finish({{"steps", res.state.step}, {"early_stopped", res.early_stopped}});
  out << "trained " << res.state.step << " steps in " << secs << " s" << (res.early_stopped ? " (early stop)" : "")
      << ", L_total " << eval::format_double(last.total) << "\n";
  return kExitOk;
}

std::shared_ptr<eval::BcModel> bc_for(Run& run, const Options& o, const data::Dataset* d) {
  if (!o.bc_checkpoint.empty()) {
    if (!fs::exists(o.bc_checkpoint)) throw ConfigError("--bc-checkpoint: file not found: " + o.bc_checkpoint);
    return std::make_shared<eval::BcModel>(eval::bc_from_checkpoint(load_checkpoint(o.bc_checkpoint)));
  }
  if (!d) throw ConfigError("behavior_clone: needs --data or --bc-checkpoint");
  auto bc = std::make_shared<eval::BcModel>(eval::train_bc(*d, run.cfg().eval.bc_steps, run.cfg().eval.bc_hidden,
                                                           run.cfg().train.model.inv_history, run.cfg().train.seed));
  const fs::path p = run.dir() / "bc.egdp";
  save_checkpoint(p, eval::bc_to_checkpoint(*bc));
  run.add(p);
  return bc;
}

bool wants(const RunConfig& cfg, const std::string& policy) {
  return std::find(cfg.eval.policies.begin(), cfg.eval.policies.end(), policy) != cfg.eval.policies.end();
}

eval::PolicyResources resources(Run& run, const Options& o) {
  eval::PolicyResources res;
  std::optional<data::Dataset> d;
  if (!o.data.empty()) {
    if (!fs::exists(o.data)) throw ConfigError("--data: file not found: " + o.data);
    d = to_dataset(io::read_dataset_jsonl(o.data));
    res.initial_coefficient = d->initial_coefficient;
  }
  if (wants(run.cfg(), "egdp") || !o.checkpoint.empty()) {
    res.model = load_model(o.checkpoint);
    if (!d) res.initial_coefficient = res.model->meta.initial_coefficient;
  }
  if (wants(run.cfg(), "behavior_clone")) res.bc = bc_for(run, o, d ? &*d : nullptr);
  return res;
}

int cmd_rollout(const Options& o, std::ostream& out) {
  Options opts = o;
  opts.policies = {o.policy};
  Run run("rollout", resolve_config(opts), o.out);
  auto specs = eval::make_policy_specs(run.cfg(), resources(run, opts));
  const auto r = eval::run_episode(specs.front(), run.cfg().env, run.cfg().env.seed, {run.cfg().eval.score_lambda});
  run.write("episode.jsonl", io::episode_jsonl(r.record, {{"policy", o.policy}}));
  run.write("result.json", result_json(r).dump(2) + "\n");
  run.finish();
  out << o.policy << " score " << eval::format_double(r.score) << " denoiser_evals " << r.denoiser_evals << "\n";
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  Run run("evaluate", resolve_config(o), o.out);
  auto specs = eval::make_policy_specs(run.cfg(), resources(run, o));
  const fs::path csv = run.dir() / "scores.csv";
  eval::ScoreTable table;
  try {
    table = eval::evaluate(specs, run.cfg().env, run.cfg().eval.seeds, {run.cfg().eval.score_lambda}, csv);
  } catch (...) {
    if (fs::exists(csv)) run.add(csv);
    run.finish({{"status", "failed"}});
    throw;
  }
  run.add(csv);
  run.write("summary.csv", table.summary_csv());
  json fixed = json::object();
  for (const auto& s : specs) {
    if (s.kind == eval::PolicyKind::kFixedBid) fixed["fixed_bid_coefficient"] = s.coefficient;
  }
  run.finish(fixed);
  for (const auto& s : table.summary()) {
    out << s.policy << " mean " << eval::format_double(s.mean_score) << " std " << eval::format_double(s.std_score)
        << "\n";
  }
  return kExitOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  Run run("sweep", resolve_config(o), o.out);
  const RunConfig& cfg = run.cfg();
  if (cfg.eval.sweep_param.empty()) throw ConfigError("--param: required (gamma, delta or xi)");
  if (cfg.eval.sweep_values.empty()) throw ConfigError("--values: empty value list");
  std::shared_ptr<const TrainerState> base;
  if (!o.checkpoint.empty()) base = load_model(o.checkpoint);
  const data::Dataset d = to_dataset(load_or_generate(run, o, out));
  const eval::SweepReport rep = eval::sweep(cfg, d, cfg.eval.sweep_param, cfg.eval.sweep_values, run.dir(), base);
  for (const auto& f : rep.files) run.add(f);
  run.write("sweep.csv", rep.csv());
  run.finish();
  for (const auto& r : rep.rows) {
    out << r.param << "=" << eval::format_double(r.value) << " mean " << eval::format_double(r.mean_score)
        << " evals/plan " << r.evals_per_plan << "\n";
  }
  return kExitOk;
}

int cmd_grad_check(const Options& o, std::ostream& out) {
  Run run("grad-check", resolve_config(o), o.out);
  GradSuiteConfig gc;
  if (o.seed) gc.seed = *o.seed;
  const auto checks = run_gradient_suite(gc);
  bool ok = true;
  json rep = json::array();
  for (const auto& c : checks) {
    ok = ok && c.report.passed;
    rep.push_back({{"component", c.component},
                   {"coordinates", c.report.coordinates},
                   {"max_rel_error", c.report.max_rel_error},
                   {"worst_param", c.report.worst_param},
                   {"worst_index", c.report.worst_index},
                   {"passed", c.report.passed},
                   {"seconds", c.seconds}});
    out << (c.report.passed ? "PASS " : "FAIL ") << c.component << " max_rel_error "
        << eval::format_double(c.report.max_rel_error) << " over " << c.report.coordinates << " coordinates\n";
  }
  run.write("grad_check.json", rep.dump(2) + "\n");
  run.finish({{"passed", ok}});
  return ok ? kExitOk : kExitRuntime;
}

int cmd_score(const Options& o, std::ostream& out, bool out_given) {
  if (o.episode.empty()) throw ConfigError("--episode: required");
  if (!fs::exists(o.episode)) throw ConfigError("--episode: file not found: " + o.episode);
  const io::EpisodeFile f = io::read_episode_jsonl(o.episode);
  const double cpa = o.cpa.value_or(f.episode.target_cpa);
  if (!(cpa > 0.0)) throw ConfigError("--cpa: target CPA must be > 0 (none in the episode header)");
  const double lambda = o.lambda.value_or(2.0);
  if (!(lambda > 0.0)) throw ConfigError("--lambda: must be > 0");
  const double conversions = f.episode.total_reward();
  const double cost = f.episode.total_cost();
  const double score = auction::compute_score(conversions, cost, cpa, {lambda});
  out << eval::format_double(score) << "\n";
  if (out_given) {
    Options opts = o;
    opts.lambda = lambda;
    Run run("score", resolve_config(opts), o.out);
    const json res = {{"score", score},
                      {"conversions", conversions},
                      {"cost", cost},
                      {"target_cpa", cpa},
                      {"lambda", lambda},
                      {"penalty", auction::penalty_from_totals(cpa, cost, conversions, lambda)}};
    run.write("score.json", res.dump(2) + "\n");
    run.finish();
  }
  return kExitOk;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON run configuration");
  sub->add_option("--seed", o.seed, "Seed for env, data, training and sampling");
  sub->add_option("--out", o.out, "Output directory");
}

void add_sampler(CLI::App* sub, Options& o) {
  sub->add_option("--gamma", o.gamma, "Skip-step stride")->check(CLI::PositiveNumber);
  sub->add_option("--omega", o.omega, "Guidance weight");
  sub->add_option("--temperature", o.temperature, "Sampling temperature in (0, 1]");
  sub->add_option("--plan-every", o.plan_every, "Replan every n steps")->check(CLI::PositiveNumber);
  sub->add_option("--checkpoint", o.checkpoint, "Trained model checkpoint");
}

void add_train(CLI::App* sub, Options& o) {
  sub->add_option("--ablation", o.ablations, "w/o-bf, w/o-ca or w/o-acc (repeatable)");
  sub->add_option("--steps", o.steps, "Training steps");
  sub->add_option("--delta", o.delta, "Teacher-forcing probability");
  sub->add_option("--xi", o.xi, "Auxiliary loss weight");
  sub->add_option("--data", o.data, "Behavior dataset (gen-data output); generated when absent");
}

void add_eval(CLI::App* sub, Options& o) {
  sub->add_option("--seeds", o.seeds, "Evaluation seeds")->delimiter(',');
  sub->add_option("--lambda", o.lambda, "Score penalty exponent");
  sub->add_flag("--no-timing", o.no_timing, "Write 0 for planning time (byte-stable output)");
  sub->add_option("--bc-checkpoint", o.bc_checkpoint, "Behavior-cloning checkpoint");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Expert-guided diffusion planner for budget- and CPA-constrained bidding"};
  app.require_subcommand(1);
  Options o;

  auto* simulate = app.add_subcommand("simulate", "Play one episode with a constant bid coefficient");
  add_common(simulate, o);
  simulate->add_option("--coef", o.coef, "Bid coefficient (default 1)");
  simulate->add_option("--lambda", o.lambda, "Score penalty exponent");

  auto* expert_cmd = app.add_subcommand("expert", "Solve the dual expert on one seed and roll it out");
  add_common(expert_cmd, o);

  auto* gen = app.add_subcommand("gen-data", "Generate behavior and expert trajectories");
  add_common(gen, o);

  auto* train_cmd = app.add_subcommand("train", "Train the planner");
  add_common(train_cmd, o);
  add_train(train_cmd, o);
  train_cmd->add_option("--resume", o.resume, "Continue from a checkpoint");

  auto* rollout = app.add_subcommand("rollout", "Run one episode with a policy");
  add_common(rollout, o);
  add_sampler(rollout, o);
  add_eval(rollout, o);
  rollout->add_option("--policy", o.policy, "egdp, fixed_bid, pid, behavior_clone or expert_oracle");
  rollout->add_option("--data", o.data, "Behavior dataset (for behavior_clone and pid)");

  auto* evaluate = app.add_subcommand("evaluate", "Score policies over evaluation seeds");
  add_common(evaluate, o);
  add_sampler(evaluate, o);
  add_eval(evaluate, o);
  evaluate->add_option("--policies", o.policies, "Policies to score")->delimiter(',');
  evaluate->add_option("--data", o.data, "Behavior dataset (for behavior_clone and pid)");

  auto* sweep_cmd = app.add_subcommand("sweep", "Score the planner over gamma, delta or xi values");
  add_common(sweep_cmd, o);
  add_sampler(sweep_cmd, o);
  add_train(sweep_cmd, o);
  add_eval(sweep_cmd, o);
  sweep_cmd->add_option("--param", o.param, "gamma, delta or xi");
  sweep_cmd->add_option("--values", o.values, "Comma-separated values")->delimiter(',');

  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient checks of every component");
  add_common(grad, o);

  auto* score = app.add_subcommand("score", "Score an episode file");
  add_common(score, o);
  score->add_option("--episode", o.episode, "Episode JSONL file")->required();
  score->add_option("--cpa", o.cpa, "Target CPA (default: from the episode header)");
  score->add_option("--lambda", o.lambda, "Penalty exponent (default 2)");

  std::vector<std::string> argv_store{"egdp"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitConfig;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(o, out);
    if (expert_cmd->parsed()) return cmd_expert(o, out);
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (rollout->parsed()) return cmd_rollout(o, out);
    if (evaluate->parsed()) return cmd_evaluate(o, out);
    if (sweep_cmd->parsed()) return cmd_sweep(o, out);
    if (grad->parsed()) return cmd_grad_check(o, out);
    if (score->parsed()) return cmd_score(o, out, score->count("--out") > 0);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace egdp::cli
