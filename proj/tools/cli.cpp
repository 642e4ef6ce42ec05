#include "cli.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dibm/checkpoint.hpp"
#include "dibm/errors.hpp"
#include "dibm/experiments.hpp"

namespace fs = std::filesystem;

namespace dibm {
namespace {

TrainConfig build_config(const std::string& path, const std::vector<std::string>& sets,
                         TrainConfig base = {}) {
  TrainConfig cfg = base;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    cfg = parse_config(ss.str(), cfg);
  }
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "override must be key=value");
    set_field(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  validate(cfg);
  return cfg;
}

void write_run(RunResult& run, const fs::path& dir) {
  fs::create_directories(dir);
  save_checkpoint(run.policy, run.rng_state, dir / "checkpoint.bin");
  save_loss_csv(dir / "loss.csv", run.policy.cfg.method, run.log, run.policy.cfg.num_experts);
}

std::string beta_tag(double beta) {
  std::ostringstream os;
  os << beta;
  return os.str();
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Diverse-skill mixture-of-experts behavior models"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a demonstration dataset");
  std::string gen_out;
  int episodes = 50;
  std::uint64_t gen_seed = 0;
  bool held_out = false;
  gen->add_option("--out", gen_out, "Dataset file")->required();
  gen->add_option("--episodes", episodes, "Successful demonstrations per task")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Suite and episode seed");
  gen->add_flag("--held-out", held_out, "Generate the held-out task instead of the suite");

  auto* train = app.add_subcommand("train", "Train a policy");
  std::string config_path, data_path, out_dir;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  train->add_option("--config", config_path, "Flat key = value config file");
  train->add_option("--data", data_path, "Training dataset")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--set", sets, "Config override key=value (repeatable)");
  auto* train_seed = train->add_option("--seed", seed, "Run seed");

  auto* fine = app.add_subcommand("finetune", "Fine-tune a checkpoint on new data");
  std::string ckpt_path;
  double ratio = 1.0;
  fine->add_option("--checkpoint", ckpt_path, "Pretrained checkpoint")->required();
  fine->add_option("--data", data_path, "New-task dataset")->required();
  fine->add_option("--ratio", ratio, "Fraction of pairs used")->check(CLI::Range(0.0, 1.0));
  fine->add_option("--config", config_path, "Config overrides file");
  fine->add_option("--out", out_dir, "Output directory")->required();
  fine->add_option("--set", sets, "Config override key=value (repeatable)");
  auto* fine_seed = fine->add_option("--seed", seed, "Run seed");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  int trials = 10;
  bool sample = false, forced = false;
  std::uint64_t suite_seed = 0;
  ev->add_option("--checkpoint", ckpt_path, "Checkpoint")->required();
  ev->add_option("--out", out_dir, "Output directory")->required();
  ev->add_option("--trials", trials, "Trials per task")->check(CLI::PositiveNumber);
  ev->add_option("--seed", seed, "Evaluation seed");
  ev->add_option("--suite-seed", suite_seed, "Task suite seed");
  ev->add_flag("--sample", sample, "Sample experts from the posterior instead of argmax");
  ev->add_flag("--forced-experts", forced, "Also evaluate every expert alone");
  ev->add_flag("--held-out", held_out, "Evaluate the held-out task");

  auto* sweep = app.add_subcommand("sweep-beta", "Train at several beta values");
  std::vector<double> betas{1e-3, 3e-3, 1e-2};
  std::size_t samples = 100;
  sweep->add_option("--config", config_path, "Flat key = value config file");
  sweep->add_option("--data", data_path, "Training dataset")->required();
  sweep->add_option("--out", out_dir, "Output directory")->required();
  sweep->add_option("--betas", betas, "Beta values")->delimiter(',');
  sweep->add_option("--samples", samples, "Observations in the exported conditional");
  sweep->add_option("--set", sets, "Config override key=value (repeatable)");
  auto* sweep_seed = sweep->add_option("--seed", seed, "Run seed");

  auto* emb = app.add_subcommand("export-embeddings", "Dump conditioning features and routed experts");
  std::string emb_out;
  emb->add_option("--checkpoint", ckpt_path, "Checkpoint")->required();
  emb->add_option("--data", data_path, "Dataset")->required();
  emb->add_option("--out", emb_out, "CSV file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 && e.get_exit_code() == 0 ? 0 : 2;
  }
  seed_given = train_seed->count() + fine_seed->count() + sweep_seed->count() > 0;

  try {
    if (*gen) {
      const auto suite = held_out ? std::vector<env::TaskSpec>{env::held_out_task(gen_seed)}
                                  : env::build_suite(gen_seed);
      GenerationReport rep;
      Dataset d = generate_dataset(suite, episodes, gen_seed, &rep);
      save_dataset(d, gen_out);
      std::cout << "wrote " << d.size() << " pairs to " << gen_out << "\n";
    } else if (*train) {
      TrainConfig cfg = build_config(config_path, sets);
      if (seed_given) cfg.seed = seed;
      Dataset d = load_dataset(data_path);
      RunResult run = train_run(cfg, d);
      write_run(run, out_dir);
      std::cout << "trained " << cfg.method << " for " << run.log.rows.size() << " iterations\n";
    } else if (*fine) {
      Checkpoint ck = load_checkpoint(ckpt_path);
      TrainConfig cfg = build_config(config_path, sets, ck.policy.cfg);
      if (seed_given) cfg.seed = seed;
      Dataset d = load_dataset(data_path);
      RunResult run = finetune(ck.policy, d, ratio, cfg);
      write_run(run, out_dir);
      std::cout << "fine-tuned on ratio " << ratio << "\n";
    } else if (*ev) {
      Checkpoint ck = load_checkpoint(ckpt_path);
      const auto tasks = held_out ? std::vector<env::TaskSpec>{env::held_out_task(suite_seed)}
                                  : env::build_suite(suite_seed);
      EvalOptions eo;
      eo.trials = trials;
      eo.mode = sample ? SelectMode::kSample : SelectMode::kArgmax;
      eo.forced_experts = forced;
      eo.seed = seed;
      std::vector<EpisodeTrace> traces;
      EvalReport rep = evaluate(ck.policy, tasks, eo, &traces);
      fs::create_directories(out_dir);
      save_report(rep, fs::path(out_dir) / "report.json");
      export_traces(traces, ck.policy.cfg.num_experts, fs::path(out_dir) / "traces.csv");
      std::cout << "total success " << rep.total << "\n";
    } else if (*sweep) {
      TrainConfig base = build_config(config_path, sets);
      if (seed_given) base.seed = seed;
      if (base.method != "dibm") throw ConfigError("method", "sweep-beta needs method = dibm");
      Dataset d = load_dataset(data_path);
      const auto idx = fixed_observation_sample(d, samples, base.seed);
      std::vector<SweepEntry> entries;
      for (double b : betas) {
        TrainConfig cfg = base;
        cfg.beta = b;
        validate(cfg);
        RunResult run = train_run(cfg, d);
        write_run(run, fs::path(out_dir) / ("beta_" + beta_tag(b)));
        entries.push_back({b, batch_conditional_on(run.policy, d, idx)});
        std::cout << "beta " << b << " mean column entropy "
                  << mean_column_entropy(entries.back().conditional) << "\n";
      }
      export_sweep(entries, fs::path(out_dir) / "sweep.csv");
    } else if (*emb) {
      Checkpoint ck = load_checkpoint(ckpt_path);
      Dataset d = load_dataset(data_path);
      export_embeddings(ck.policy, d, emb_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace dibm
