// dpfl: train, evaluate and account for DP LoRA fine-tuning runs.
//
// Exit codes: 0 success, 1 domain error (bad config, budget, calibration),
// 2 I/O or schema error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dpfl/accountant.hpp"
#include "dpfl/checkpoint.hpp"
#include "dpfl/data.hpp"
#include "dpfl/errors.hpp"
#include "dpfl/experiment.hpp"
#include "dpfl/metrics.hpp"

namespace fs = std::filesystem;
using namespace dpfl;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

void log(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Config flags shared by train, sweep and pretrain. Applied in order after
// the config file so that flags win.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;
  std::optional<std::uint64_t> seed;
  std::string out;

  void add(CLI::App* app, bool privacy) {
    app->add_option("--config", config_path, "key=value config file");
    app->add_option("--set", sets, "override a config key (key=value), repeatable");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--out", out, "output directory");
    for (const char* key : {"data", "test_data", "base", "steps", "lot_size", "clip",
                            "learning_rate", "microbatch", "lora_rank", "lora_alpha",
                            "lora_targets", "pretrain_steps"}) {
      flag(app, key);
    }
    if (privacy) {
      for (const char* key : {"epsilon", "sigma", "delta", "accountant", "epsilon_ceiling"}) {
        flag(app, key);
      }
      app->add_flag_callback("--merged", [this] { flags.emplace_back("merged", "true"); },
                             "also store merged W0 + BA matrices");
    }
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& [k, v] : flags) c.set(k, v);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) c.seed = *seed;
    if (!out.empty()) c.out = out;
    return c;
  }

 private:
  void flag(CLI::App* app, const std::string& key) {
    std::string name = "--" + key;
    for (auto& ch : name) if (ch == '_') ch = '-';
    app->add_option_function<std::string>(
        name, [this, key](const std::string& v) { flags.emplace_back(key, v); },
        "config key '" + key + "'");
  }
};

void print_report(const MetricsReport& r) {
  std::printf("accuracy     %.4f\n", r.accuracy);
  std::printf("f1_micro     %.4f\n", r.f1_micro);
  std::printf("f1_macro     %.4f\n", r.f1_macro);
  std::printf("f1_weighted  %.4f\n", r.f1_weighted);
  if (r.n_invalid > 0) std::printf("invalid      %zu of %zu\n", r.n_invalid, r.n_examples);
}

void write_reports(const fs::path& dir, const MetricsReport& r, const std::string& model,
                   const std::string& dataset) {
  write_file(dir / "metrics.json", report_to_json(r, model, dataset));
  write_file(dir / "metrics.csv", report_csv_header() + report_to_csv_row(r, model, dataset));
}

int cmd_train(const ConfigFlags& flags) {
  const RunConfig config = flags.resolve();
  config.validate(true);
  if (config.data.empty()) throw ConfigError("key 'data': a training JSONL path is required");
  config.check_paths();
  const auto records = load_jsonl(config.data);
  const auto base = build_base(config, log);
  TrainOptions extra;
  extra.on_step = [&](const StepInfo& info) {
    if (info.log->step % 25 == 0 || info.log->step == config.steps) {
      log("step " + std::to_string(info.log->step) + " loss " + num(info.log->loss) +
          " epsilon " + num(info.log->epsilon));
    }
  };
  const RunResult result = run_training(config, base, records, extra);
  const fs::path dir = ensure_dir(config.out);
  save_checkpoint((dir / "model.dpfl").string(),
                  make_checkpoint(config, base, result, records.size()));
  write_file(dir / "train_log.csv", step_log_csv(result.train.log));
  std::printf("epsilon      %.6g\n", result.train.epsilon);
  std::printf("delta        %.6g\n", result.delta);
  std::printf("sigma        %.6g\n", result.sigma);
  std::printf("steps        %zu\n", result.train.state.step);
  std::printf("checkpoint   %s\n", (dir / "model.dpfl").string().c_str());
  if (!config.test_data.empty()) {
    const auto test = load_jsonl(config.test_data);
    const auto ev = evaluate(base, &result.adapters, test);
    write_reports(dir, ev.report, (dir / "model.dpfl").string(), config.test_data);
    print_report(ev.report);
  }
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, const std::string& out,
             bool base_only) {
  const LoadedModel model = load_model(model_path);
  const auto records = load_jsonl(data_path);
  const auto ev =
      evaluate(model.weights, base_only || model.adapters.empty() ? nullptr : &model.adapters,
               records);
  const fs::path dir = ensure_dir(out);
  write_reports(dir, ev.report, model_path, data_path);
  print_report(ev.report);
  return 0;
}

int cmd_zeroshot(const std::vector<std::string>& models, const std::vector<std::string>& datasets,
                 const std::string& out) {
  if (models.size() < 2 || datasets.size() < 2) {
    throw UsageError("zeroshot needs at least two checkpoints and two datasets");
  }
  if (models.size() != datasets.size()) {
    throw UsageError("zeroshot needs one checkpoint per dataset, in the same order");
  }
  std::vector<std::optional<LoadedModel>> loaded(models.size());
  std::vector<NamedDataset> named;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    named.push_back({fs::path(datasets[i]).stem().string(), load_jsonl(datasets[i])});
  }
  std::vector<FineTunedModel<float>> fine_tuned;
  for (std::size_t i = 0; i < models.size(); ++i) {
    try {
      loaded[i] = load_model(models[i]);
    } catch (const Error& e) {
      log(std::string("skipping row: ") + e.what());
    }
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    fine_tuned.push_back({fs::path(models[i]).stem().string(),
                          loaded[i] ? &loaded[i]->weights : nullptr,
                          loaded[i] ? &loaded[i]->adapters : nullptr});
  }
  const ZeroShotTable table = zero_shot_matrix(fine_tuned, named);
  const fs::path dir = ensure_dir(out);
  const std::string csv = zero_shot_to_csv(table);
  write_file(dir / "zero_shot.csv", csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int cmd_accountant(double q, std::optional<double> sigma, std::optional<double> epsilon,
                   std::size_t steps, double delta, const std::string& mode_text) {
  if (sigma.has_value() == epsilon.has_value()) {
    throw UsageError("give exactly one of --sigma and --epsilon");
  }
  std::vector<AccountantMode> modes;
  if (mode_text == "both") {
    modes = {AccountantMode::kNumerical, AccountantMode::kClosedForm};
  } else {
    modes = {parse_accountant_mode(mode_text)};
  }
  for (AccountantMode mode : modes) {
    AccountantConfig config;
    config.delta = delta;
    config.mode = mode;
    config.validate();
    if (sigma) {
      const EpsilonResult r = epsilon_spent(q, *sigma, steps, config);
      std::printf("mode=%s epsilon=%.10g", to_string(mode).c_str(), r.epsilon);
      if (mode == AccountantMode::kClosedForm) {
        std::printf(" valid=%s", r.closed_form_valid ? "true" : "false");
      } else {
        std::printf(" order=%.6g", r.best_order);
      }
    } else {
      const double s = calibrate_sigma(*epsilon, q, steps, config);
      const EpsilonResult r = epsilon_spent(q, s, steps, config);
      std::printf("mode=%s sigma=%.10g epsilon=%.10g", to_string(mode).c_str(), s, r.epsilon);
      if (mode == AccountantMode::kClosedForm) {
        std::printf(" valid=%s", r.closed_form_valid ? "true" : "false");
      }
    }
    std::printf("\n");
  }
  return 0;
}

int cmd_sweep(const ConfigFlags& flags, const std::vector<double>& epsilons) {
  const RunConfig config = flags.resolve();
  config.validate(false);
  if (config.data.empty()) throw ConfigError("key 'data': a training JSONL path is required");
  if (config.test_data.empty()) throw ConfigError("key 'test_data': a test JSONL path is required");
  config.check_paths();
  const auto train = load_jsonl(config.data);
  const auto test = load_jsonl(config.test_data);
  const auto base = build_base(config, log);
  const auto rows = run_sweep(config, base, train, test, epsilons, log);
  const fs::path dir = ensure_dir(config.out);
  const std::string csv = sweep_to_csv(rows);
  write_file(dir / "sweep.csv", csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int cmd_pretrain(const ConfigFlags& flags) {
  RunConfig config = flags.resolve();
  config.base.clear();
  config.validate(false);
  const auto base = build_base(config, log);
  const fs::path dir = ensure_dir(config.out);
  save_checkpoint((dir / "base.dpfl").string(), make_base_checkpoint(base));
  std::printf("base checkpoint %s\n", (dir / "base.dpfl").string().c_str());
  return 0;
}

int cmd_synth(std::size_t per_class, std::uint64_t seed, const std::string& out,
              const std::string& exclude) {
  auto records = synth_dataset(per_class, seed);
  if (!exclude.empty()) records = drop_overlap(records, load_jsonl(exclude));
  if (out.empty() || out == "-") {
    std::fputs(to_jsonl(records).c_str(), stdout);
  } else {
    write_jsonl(out, records);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private LoRA fine-tuning of a small decoder"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "DP fine-tune adapters and write a checkpoint");
  train_flags.add(train, true);

  std::string eval_model, eval_data, eval_out = ".";
  bool eval_base = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a JSONL dataset");
  eval->add_option("--model", eval_model, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "JSONL dataset")->required();
  eval->add_option("--out", eval_out, "output directory for metrics.json and metrics.csv");
  eval->add_flag("--base-only", eval_base, "ignore adapters stored in the checkpoint");

  std::vector<std::string> zs_models, zs_data;
  std::string zs_out = ".";
  auto* zeroshot = app.add_subcommand("zeroshot", "cross-dataset weighted F1 matrix");
  zeroshot->add_option("--models", zs_models, "checkpoints, one per dataset")->required();
  zeroshot->add_option("--datasets", zs_data, "JSONL datasets")->required();
  zeroshot->add_option("--out", zs_out, "output directory for zero_shot.csv");

  double acc_q = 0.0, acc_delta = 1e-5;
  std::optional<double> acc_sigma, acc_eps;
  std::size_t acc_steps = 0;
  std::string acc_mode = "numerical";
  auto* accountant = app.add_subcommand("accountant", "epsilon for a sigma, or sigma for an epsilon");
  accountant->add_option("--q", acc_q, "sampling rate L/N")->required();
  accountant->add_option("--sigma", acc_sigma, "noise multiplier");
  accountant->add_option("--epsilon", acc_eps, "target epsilon");
  accountant->add_option("--steps", acc_steps, "number of steps T")->required();
  accountant->add_option("--delta", acc_delta, "delta");
  accountant->add_option("--mode", acc_mode, "numerical, closed_form or both")
      ->check(CLI::IsMember({"numerical", "closed_form", "both"}));

  ConfigFlags sweep_flags;
  std::vector<double> sweep_eps;
  auto* sweep = app.add_subcommand("sweep", "train and evaluate one model per epsilon");
  sweep_flags.add(sweep, false);
  sweep->add_option("--epsilons", sweep_eps, "epsilon values")->required()->delimiter(',');

  ConfigFlags pre_flags;
  auto* pre = app.add_subcommand("pretrain", "build the public-data base and save it");
  pre_flags.add(pre, false);

  std::size_t synth_per_class = 200;
  std::uint64_t synth_seed = 1;
  std::string synth_out, synth_exclude;
  auto* synth = app.add_subcommand("synth", "write a balanced synthetic sentiment corpus");
  synth->add_option("--per-class", synth_per_class, "records per label");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "JSONL path, stdout when omitted");
  synth->add_option("--exclude", synth_exclude, "drop records whose input occurs in this JSONL");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_model, eval_data, eval_out, eval_base);
    if (*zeroshot) return cmd_zeroshot(zs_models, zs_data, zs_out);
    if (*accountant) return cmd_accountant(acc_q, acc_sigma, acc_eps, acc_steps, acc_delta, acc_mode);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_eps);
    if (*pre) return cmd_pretrain(pre_flags);
    if (*synth) return cmd_synth(synth_per_class, synth_seed, synth_out, synth_exclude);
  } catch (const Error& e) {
    std::fprintf(stderr, "dpfl: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dpfl: %s\n", e.what());
    return 1;
  }
  return 0;
}
