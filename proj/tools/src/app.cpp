// SPDX-License-Identifier: Apache-2.0
#include "app.hpp"

#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "kdnas/io.hpp"

namespace kdnas::cli {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::Validation: return 3;
    case ErrorKind::Decode: return 4;
    case ErrorKind::Remap: return 5;
    case ErrorKind::Embedding: return 6;
    case ErrorKind::Adaptation: return 7;
    case ErrorKind::Schema: return 8;
    case ErrorKind::Io: return 9;
    case ErrorKind::Internal: return 10;
  }
  return 1;
}

namespace {

const std::map<std::string, std::string>& flag_help() {
  static const std::map<std::string, std::string> help{
      {"out", "output path (file or checkpoint stem)"},
      {"data", "image folder: one sub-folder of PGM/PPM files per class"},
      {"db", "task database (.jsonl)"},
      {"task", "task index within --db"},
      {"teacher", "teacher checkpoint stem"},
      {"teacher-accuracy", "teacher accuracy; measured on the data when absent"},
      {"predictor", "predictor checkpoint stem"},
      {"arch", "student config, e.g. 'depths=2,1 ratios=0.5,1/1'"},
      {"arch-file", "file with one student config per line"},
      {"method", "predictor | grad-norm | activation-overlap"},
      {"roles", "comma-separated task roles to evaluate"},
  };
  return help;
}

const std::map<std::string, std::string>& command_help() {
  static const std::map<std::string, std::string> help{
      {"build-db", "train teachers per class split and distil student pairs"},
      {"make-synth-db", "write a task database with analytic accuracies"},
      {"meta-train", "meta-train the accuracy predictor on a task database"},
      {"adapt", "adapt a predictor to one teacher and its accuracy"},
      {"predict", "predict distilled accuracies of given students"},
      {"search", "rank sampled students under a budget"},
      {"distill", "distil one student from a teacher"},
      {"eval", "rank correlation of a predictor on database tasks"},
  };
  return help;
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  bool paper = false;
  bool mini = false;
  bool adapt = false;
  std::string from_manifest;
};

void load_manifest(const std::string& path, Invocation& inv, RunConfig& cfg) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(fmt::format("{}: {}", path, e.what()));
  }
  if (j.value("format", "") != "kdnas-manifest") throw SchemaError(fmt::format("{}: not a run manifest", path));
  if (j.at("command").get<std::string>() != inv.command) {
    throw UsageError(fmt::format("{} records command '{}', not '{}'", path, j.at("command").get<std::string>(),
                                 inv.command));
  }
  for (const auto& [k, v] : j.at("config").items()) cfg.set(k, v.get<std::string>());
  for (const auto& [k, v] : j.at("arguments").items()) {
    auto& slot = inv.args[k];
    if (slot.empty()) slot = v.get<std::string>();
  }
  if (inv.archs.empty() && j.contains("archs")) inv.archs = j.at("archs").get<std::vector<std::string>>();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"kdnas: distillation-aware architecture search toolkit", "kdnas"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", "kdnas 0.1.0");
  Invocation inv;
  Common common;
  for (const auto& [name, flags] : command_flags()) {
    auto* sub = app.add_subcommand(name, command_help().at(name));
    sub->add_option("--config", common.config, "key = value configuration file");
    sub->add_option("--set", common.sets, "override one config key (key=value), repeatable");
    auto* paper = sub->add_flag("--paper-scale", common.paper, "start from paper-scale defaults (the default)");
    sub->add_flag("--mini", common.mini, "start from desk-scale defaults")->excludes(paper);
    sub->add_option("--from-manifest", common.from_manifest, "rerun with the settings of a run manifest");
    for (const auto& f : flags) {
      if (f == "arch") {
        sub->add_option("--arch", inv.archs, flag_help().at(f));
      } else if (f == "adapt") {
        sub->add_flag("--adapt", common.adapt, "adapt the predictor to the teacher first");
      } else {
        sub->add_option("--" + f, inv.args[f], flag_help().at(f));
      }
    }
    sub->footer("Config keys:\n" + valid_keys_text());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << "\n\n" << app.help();
    return exit_code(ErrorKind::Usage);
  }

  try {
    inv.command = app.get_subcommands().front()->get_name();
    if (common.adapt) inv.args["adapt"] = "true";
    RunConfig cfg(common.mini ? Preset::Mini : Preset::Paper);
    if (!common.from_manifest.empty()) load_manifest(common.from_manifest, inv, cfg);
    if (!common.config.empty()) cfg.load_file(common.config);
    for (const auto& s : common.sets) cfg.apply_override(s);
    Context ctx{std::move(inv), std::move(cfg), out, err, {}};
    run_command(ctx);
    return 0;
  } catch (const Error& e) {
    err << "error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << "\n";
    return exit_code(ErrorKind::Internal);
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("kdnas");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace kdnas::cli
