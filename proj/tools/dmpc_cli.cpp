// Command-line front end: data collection, training, planning and the
// desk-scale experiment grids.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dmpc/dataset_io.hpp"
#include "dmpc/plot.hpp"
#include "dmpc/run_config.hpp"

namespace fs = std::filesystem;
using namespace dmpc;

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
  std::string prior;
  std::string dataset;
};

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::kIo, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

Config load_config(const Common& c) {
  Config cfg = c.config_path.empty() ? Config{} : Config::load(c.config_path);
  for (const auto& kv : c.overrides) cfg.set_assignment(kv);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(ParseError::Kind::kIo, "cannot write " + path.string());
  out << text;
}

class Run {
 public:
  Run(std::string name, const Common& c) : name_(std::move(name)), common_(c), cfg_(load_config(c)) {
    fs::create_directories(common_.out_dir);
  }

  Config& cfg() { return cfg_; }

  /// Call after every key has been read.
  void seal() {
    cfg_.reject_unknown();
    provenance_ = "# config " + hex64(cfg_.hash());
    for (const auto& in : inputs_) provenance_ += " " + in.first + " " + file_hash(in.second);
    write_text(path(name_ + ".config"), cfg_.resolved());
  }

  void input(const std::string& tag, const std::string& file) {
    if (file.empty()) throw ConfigError("--" + tag + " is required");
    if (!fs::exists(file)) throw ConfigError(tag + " file not found: " + file);
    inputs_.emplace_back(tag, file);
  }

  [[nodiscard]] fs::path path(const std::string& file) const { return fs::path(common_.out_dir) / file; }

  void csv(const std::string& file, const Csv& table) const {
    write_text(path(file), provenance_ + "\n" + table.str());
    std::cerr << "wrote " << path(file).string() << "\n";
  }

 private:
  std::string name_;
  Common common_;
  Config cfg_;
  std::string provenance_;
  std::vector<std::pair<std::string, std::string>> inputs_;
};

void cmd_collect(const Common& c) {
  Run run("collect", c);
  const CollectConfig cc = collect_config(run.cfg());
  run.seal();
  const CollectResult r = collect_demos(cc);
  save_dataset(r.dataset, run.path("dataset.bin").string());
  Csv t{{"segments", "failed_episodes", "mean_tracking"}, {}};
  t.add({std::to_string(r.dataset.segments.size()), std::to_string(r.failed_episodes), fmt(r.mean_tracking)});
  run.csv("collect.csv", t);
}

void cmd_train_prior(const Common& c) {
  Run run("train_prior", c);
  run.input("dataset", c.dataset);
  const PriorConfig pc = prior_config(run.cfg());
  const int every = run.cfg().get_int("prior.log_every", 100);
  run.seal();
  const TrajectoryDataset ds = load_dataset(c.dataset);
  const PriorTrainResult r = train_prior(ds, pc);
  save_prior(r.prior, run.path("prior.bin").string());
  Csv t{{"step", "loss"}, {}};
  for (std::size_t i = 0; i < r.losses.size(); i += static_cast<std::size_t>(std::max(every, 1))) {
    double m = 0.0;
    const std::size_t end = std::min(r.losses.size(), i + static_cast<std::size_t>(std::max(every, 1)));
    for (std::size_t j = i; j < end; ++j) m += r.losses[j];
    t.add({std::to_string(i), fmt(m / static_cast<double>(end - i))});
  }
  run.csv("train_prior.csv", t);
}

void cmd_train_reward(const Common& c) {
  Run run("train_reward", c);
  run.input("dataset", c.dataset);
  const HeightRewardConfig rc = reward_config(run.cfg());
  const int levels = run.cfg().get_int("prior.diffusion_steps", 50);
  const double b0 = run.cfg().get_double("prior.beta_start", 1e-4);
  const double b1 = run.cfg().get_double("prior.beta_end", 0.2);
  run.seal();
  const TrajectoryDataset ds = load_dataset(c.dataset);
  const HeightRewardResult r = train_height_reward(ds, make_schedule(levels, b0, b1), rc);
  save_reward_model(r.model, run.path("reward.bin").string());
  Csv t{{"epoch", "loss"}, {}};
  for (std::size_t i = 0; i < r.epoch_loss.size(); ++i) t.add({std::to_string(i), fmt(r.epoch_loss[i])});
  run.csv("train_reward.csv", t);
  Csv h{{"train_segments", "heldout_segments", "heldout_correlation"}, {}};
  h.add({std::to_string(r.train_count), std::to_string(r.heldout_count), fmt(r.heldout_correlation)});
  run.csv("train_reward_heldout.csv", h);
}

void cmd_finetune(const Common& c) {
  Run run("finetune", c);
  run.input("prior", c.prior);
  const FinetuneConfig fc = finetune_config(run.cfg());
  run.seal();
  PriorCheckpoint prior = load_prior(c.prior);
  const FinetuneResult r = run_finetune(prior, fc);
  quantize_float32(prior.model.net().mutable_params());
  save_prior(prior, run.path("finetuned.bin").string());
  run.csv("finetune_curve.csv", curve_csv(r.curve));
  run.csv("finetune_stability.csv", stability_csv(r));
}

void cmd_plan(const Common& c) {
  Run run("plan", c);
  run.input("prior", c.prior);
  const PlannerConfig pc = planner_config(run.cfg());
  const std::uint64_t seed = run_seed(run.cfg());
  const std::uint64_t env_seed = run.cfg().get_u64("plan.env_seed", 0);
  const Eigen::Vector3d cmd(run.cfg().get_double("plan.vx", 0.5), run.cfg().get_double("plan.vy", 0.0),
                            run.cfg().get_double("plan.yaw", 0.0));
  run.seal();
  const PriorCheckpoint prior = load_prior(c.prior);
  auto [params, state] = reset(env_seed, false);
  state.command = cmd;
  const PlanFn fn = make_plan_fn(prior, pc);
  const PlanOutput out = fn(PlanRequest{observe(state, params), std::nullopt, seed});
  const StateLayout L = params.layout();
  Csv t{{"t"}, {}};
  for (int r = 0; r < L.rows(); ++r) t.header.push_back("x" + std::to_string(r));
  for (Eigen::Index col = 0; col < out.plan.cols(); ++col) {
    std::vector<std::string> row{std::to_string(col)};
    for (Eigen::Index r = 0; r < out.plan.rows(); ++r) row.push_back(fmt(out.plan(r, col)));
    t.add(std::move(row));
  }
  run.csv("plan.csv", t);
}

void cmd_eval_adaptation(const Common& c) {
  Run run("eval_adaptation", c);
  run.input("prior", c.prior);
  const AdaptationConfig ac = adaptation_config(run.cfg());
  run.seal();
  const PriorCheckpoint prior = load_prior(c.prior);
  const AdaptationResult r = run_adaptation(prior, ac, [](const std::string& s) { std::cerr << s << "\n"; });
  run.csv("adaptation.csv", adaptation_csv(r));
  run.csv("adaptation_table.csv", adaptation_table(r));
  run.csv("adaptation_tests.csv", adaptation_tests_csv(adaptation_tests(r)));
}

void cmd_ablate_deploy(const Common& c) {
  Run run("ablate_deploy", c);
  run.input("prior", c.prior);
  const DeployConfig dc = deploy_config(run.cfg());
  run.seal();
  const PriorCheckpoint prior = load_prior(c.prior);
  run.csv("deploy.csv", deploy_csv(run_deploy_ablation(prior, dc)));
}

struct PlotArgs {
  std::string csv;
  std::string x;
  std::vector<std::string> y;
  std::string out;
  std::string title;
};

void cmd_plot(const PlotArgs& a) {
  const CsvTable t = read_csv(a.csv);
  write_text(a.out, svg_plot(t, a.x, a.y, a.title.empty() ? fs::path(a.csv).filename().string() : a.title));
  std::cerr << "wrote " << a.out << "\n";
}

void add_common(CLI::App* sub, Common& c, bool prior, bool dataset) {
  sub->add_option("-c,--config", c.config_path, "key=value config file");
  sub->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
  sub->add_option("-o,--out", c.out_dir, "output directory");
  if (prior) sub->add_option("--prior", c.prior, "prior checkpoint");
  if (dataset) sub->add_option("--dataset", c.dataset, "dataset file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion planner toolkit"};
  app.require_subcommand(1);
  Common common;
  PlotArgs plot;
  std::string seed;

  struct Entry {
    const char* name;
    const char* help;
    bool prior;
    bool dataset;
    void (*fn)(const Common&);
  };
  const Entry entries[] = {
      {"collect", "roll out the demonstrator and window the episodes", false, false, cmd_collect},
      {"train-prior", "train the trajectory diffusion prior", false, true, cmd_train_prior},
      {"train-reward", "train the neural height reward", false, true, cmd_train_reward},
      {"finetune", "interactive reward-weighted finetuning", true, false, cmd_finetune},
      {"plan", "sample one plan from a reset observation", true, false, cmd_plan},
      {"eval-adaptation", "candidate / reward / constraint grid", true, false, cmd_eval_adaptation},
      {"ablate-deploy", "replan margin, caching and refresh ablation", true, false, cmd_ablate_deploy},
  };
  std::vector<std::pair<CLI::App*, void (*)(const Common&)>> subs;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    add_common(sub, common, e.prior, e.dataset);
    sub->add_option("--seed", seed, "run seed (same as --set seed=N)");
    subs.emplace_back(sub, e.fn);
  }
  CLI::App* plot_cmd = app.add_subcommand("plot", "render CSV columns as an SVG line plot");
  plot_cmd->add_option("csv", plot.csv, "input CSV")->required();
  plot_cmd->add_option("-x", plot.x, "x column")->required();
  plot_cmd->add_option("-y", plot.y, "y columns")->required();
  plot_cmd->add_option("-o,--out", plot.out, "output SVG")->required();
  plot_cmd->add_option("--title", plot.title, "plot title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }
  if (!seed.empty()) common.overrides.insert(common.overrides.begin(), "seed=" + seed);

  try {
    if (plot_cmd->parsed()) {
      cmd_plot(plot);
      return 0;
    }
    for (const auto& [sub, fn] : subs)
      if (sub->parsed()) fn(common);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeExit;
  }
}
