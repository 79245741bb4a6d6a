#include "selfboost/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "selfboost/checkpoint.hpp"
#include "selfboost/config.hpp"
#include "selfboost/gradcheck.hpp"

namespace selfboost {

namespace fs = std::filesystem;

namespace {

using Real = float;

constexpr const char* kModelPrefix = "model.";
constexpr const char* kGeneratorPrefix = "gen.";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot write '" + path.string() + "'");
  f << text;
}

void save_checkpoint(const fs::path& path, const MultiExitModel<Real>& model, const LabelGenerator<Real>* generator) {
  std::vector<CheckpointEntry> entries;
  append_entries(entries, model.parameters(), kModelPrefix);
  if (generator) append_entries(entries, generator->parameters(), kGeneratorPrefix);
  write_checkpoint(path, entries);
}

int cmd_train(const std::string& config_path, const std::string& output_override, std::ostream& out,
              std::ostream& err) {
  RunConfig config = load_run_config(config_path);
  if (!output_override.empty()) config.output_dir = output_override;
  Eigen::setNbThreads(static_cast<int>(config.threads));

  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  write_text(dir / "config.json", dump_run_config(config));

  const LoadedData data = load_data(config.data);
  write_text(dir / "data.json", dataset_metadata(data.train));

  const TrainConfig& tc = config.train;
  MultiExitModel<Real> model(config.model_spec(), mix_seed(tc.seed, 0x30de1));
  LabelGenerator<Real> generator(config.generator_spec(), mix_seed(tc.seed, 0x6e4));
  std::optional<MultiExitModel<Real>> teacher;
  if (tc.mode == LossMode::classic_kd) {
    teacher.emplace(config.teacher_spec(), 0);
    load_entries(read_checkpoint(config.teacher.checkpoint), teacher->parameters(), kModelPrefix);
  }
  const bool with_generator = tc.mode == LossMode::metadistill;

  Trainer<Real> trainer(tc, model, generator);
  if (teacher) trainer.set_teacher(&*teacher);

  const fs::path metrics_path = dir / "metrics.csv";
  const fs::path checkpoint_path = dir / "checkpoint.mdck";
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw InputError("cannot write '" + metrics_path.string() + "'");
  metrics << metrics_header();
  metrics.flush();
  std::optional<fs::path> last_good;

  trainer.on_epoch_end = [&](const EpochReport& report) {
    for (auto row : report.rows) {
      if (config.deterministic) row.wall_ms = 0.0;
      metrics << format_metrics_row(row);
    }
    metrics.flush();
    save_checkpoint(checkpoint_path, model, with_generator ? &generator : nullptr);
    last_good = checkpoint_path;
    for (const auto& row : report.rows) {
      if (row.split == "val" && row.output == std::to_string(model.spec().stages())) {
        out << "epoch " << report.epoch << ": val final-exit accuracy " << row.accuracy << "\n";
      }
    }
  };

  try {
    trainer.run(data.train, &data.test);
  } catch (const TrainingAborted& e) {
    // Parameters still hold the last finite values; keep them beside the epoch checkpoint.
    const fs::path abort_path = dir / "checkpoint_abort.mdck";
    save_checkpoint(abort_path, model, with_generator ? &generator : nullptr);
    err << "numeric abort: " << e.what() << "\n";
    err << "last checkpoint: " << (last_good ? *last_good : abort_path).string() << "\n";
    return exit_numeric_abort;
  }
  out << "run directory: " << dir.string() << "\n";
  return exit_ok;
}

struct Restored {
  RunConfig config;
  MultiExitModel<Real> model;
  std::optional<LabelGenerator<Real>> generator;
};

Restored restore(const std::string& config_path, const std::string& checkpoint_path, bool need_generator) {
  RunConfig config = load_run_config(config_path);
  Restored r{config, MultiExitModel<Real>(config.model_spec(), 0), std::nullopt};
  const auto entries = read_checkpoint(checkpoint_path);
  load_entries(entries, r.model.parameters(), kModelPrefix);
  if (has_prefix(entries, kGeneratorPrefix)) {
    r.generator.emplace(config.generator_spec(), 0);
    load_entries(entries, r.generator->parameters(), kGeneratorPrefix);
  } else if (need_generator) {
    throw DimensionError("checkpoint '" + checkpoint_path + "' holds no label generator");
  }
  return r;
}

const Dataset& pick_split(const LoadedData& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "test") return data.test;
  throw InputError("unknown split '" + split + "'");
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, const std::string& split,
             const std::string& exits_name, bool ensemble, const std::string& output, std::ostream& out) {
  Restored r = restore(config_path, checkpoint, false);
  const LoadedData data = load_data(r.config.data);
  Exits exits = r.config.train.multi_exit() ? Exits::all : Exits::final_only;
  if (exits_name == "all") exits = Exits::all;
  if (exits_name == "final") exits = Exits::final_only;
  const auto result = evaluate(r.model, r.generator ? &*r.generator : nullptr, pick_split(data, split),
                               r.config.train.batch_size, exits, r.config.train.tau);
  std::string report;
  char line[128];
  const std::string final_name = std::to_string(r.model.spec().stages());
  for (std::size_t i = 0; i < result.outputs.size(); ++i) {
    if (result.outputs[i] == "ensemble") continue;
    std::snprintf(line, sizeof line, "exit %s accuracy %.6f loss %.6f\n", result.outputs[i].c_str(),
                  result.accuracy[i], result.loss[i]);
    report += line;
  }
  const std::size_t f = result.index(final_name);
  std::snprintf(line, sizeof line, "final accuracy %.6f\n", result.accuracy[f]);
  report += line;
  if (ensemble) {
    const std::size_t e = result.index("ensemble");
    std::snprintf(line, sizeof line, "ensemble accuracy %.6f\n", result.accuracy[e]);
    report += line;
  }
  std::snprintf(line, sizeof line, "samples %zu split %s\n", result.samples, split.c_str());
  report += line;
  out << report;
  const fs::path path = output.empty() ? fs::path(checkpoint).parent_path() / ("eval_" + split + ".txt") : fs::path(output);
  write_text(path, report);
  return exit_ok;
}

int cmd_dump_targets(const std::string& config_path, const std::string& checkpoint, std::size_t n,
                     const std::string& split, const std::string& output, std::ostream& out) {
  Restored r = restore(config_path, checkpoint, true);
  const LoadedData data = load_data(r.config.data);
  const Dataset& set = pick_split(data, split);
  n = std::min(n, set.size());
  if (n == 0) throw InputError("dump-targets needs n >= 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const auto batch = make_batch<Real>(set, idx);

  Tape<Real> tape;
  NoGradGuard<Real> guard(tape);
  const auto params = r.model.parameters().bind(tape, false);
  const auto fwd = r.model.forward(params, tape.constant(batch.images), Exits::all);
  const Real tau = static_cast<Real>(r.config.train.tau);
  std::vector<Tensor<Real>> rows;
  for (const auto& t : r.generator->soft_targets({}, fwd.features, tau, true)) rows.push_back(t.value());
  rows.push_back(softmax_rows(fwd.logits.back().value(), tau));

  std::string csv = "sample_id,stage,class,probability\n";
  std::string summary = "stage,source,mean_entropy\n";
  char line[128];
  const std::size_t C = r.model.spec().classes;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t stage = k + 1;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        std::snprintf(line, sizeof line, "%zu,%zu,%zu,%.9g\n", batch.indices[i], stage, c,
                      static_cast<double>(rows[k][i * C + c]));
        csv += line;
      }
    double h = 0.0;
    for (double v : row_entropy(rows[k])) h += v;
    std::snprintf(line, sizeof line, "%zu,%s,%.6f\n", stage, k + 1 < rows.size() ? "generator" : "final_output",
                  h / static_cast<double>(n));
    summary += line;
  }
  const fs::path path = output.empty() ? fs::path(checkpoint).parent_path() / "targets.csv" : fs::path(output);
  write_text(path, csv);
  fs::path summary_path = path;
  summary_path.replace_extension(".entropy.csv");
  write_text(summary_path, summary);
  out << summary;
  return exit_ok;
}

int cmd_gradcheck(const std::string& scope, bool inject_fault, std::uint64_t seed, std::ostream& out,
                  std::ostream& err) {
  const auto report = run_gradcheck(parse_gradcheck_scope(scope), seed, inject_fault);
  out << report.table();
  if (report.passed()) return exit_ok;
  for (const auto& item : report.items) {
    if (!item.passed()) err << "gradcheck failed: " << item.name << " relative error " << item.worst << "\n";
  }
  return exit_check_failed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-exit self-boosting trainer with a meta-learned label generator", "selfboost"};
  app.require_subcommand(1);

  std::string config_path, output_dir, checkpoint, split = "test", exits = "auto", output, scope = "ops";
  bool ensemble = false, inject_fault = false;
  std::size_t n = 16;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train a model from a JSON run config");
  train->add_option("--config", config_path, "Run config (JSON)")->required();
  train->add_option("--output-dir", output_dir, "Override the run directory");

  auto* eval = app.add_subcommand("eval", "Per-exit, final and ensemble accuracy of a checkpoint");
  eval->add_option("--config", config_path, "Run config the checkpoint was trained with")->required();
  eval->add_option("--checkpoint", checkpoint, "MDCK1 checkpoint")->required();
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--exits", exits, "auto, all or final")->check(CLI::IsMember({"auto", "all", "final"}));
  eval->add_flag("--ensemble", ensemble, "Report the exit ensemble");
  eval->add_option("--output", output, "Report path (default: next to the checkpoint)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--scope", scope, "ops, losses or hypergrad")->check(CLI::IsMember({"ops", "losses", "hypergrad"}));
  grad->add_flag("--inject-fault", inject_fault, "Add an op with a corrupted backward");
  grad->add_option("--seed", seed, "Seed of the random instances");

  auto* dump = app.add_subcommand("dump-targets", "Write generator soft targets as CSV");
  dump->add_option("--config", config_path, "Run config the checkpoint was trained with")->required();
  dump->add_option("--checkpoint", checkpoint, "MDCK1 checkpoint with generator")->required();
  dump->add_option("--n", n, "Number of samples");
  dump->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  dump->add_option("--output", output, "CSV path (default: next to the checkpoint)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return exit_usage;
  }

  try {
    if (*train) return cmd_train(config_path, output_dir, out, err);
    if (*eval) return cmd_eval(config_path, checkpoint, split, exits, ensemble, output, out);
    if (*grad) return cmd_gradcheck(scope, inject_fault, seed, out, err);
    if (*dump) return cmd_dump_targets(config_path, checkpoint, n, split, output, out);
  } catch (const ConfigError& e) {
    err << "config error [" << e.key() << "]: " << e.what() << "\n";
    return exit_usage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return exit_numeric_abort;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }
  return exit_usage;
}

}  // namespace selfboost
