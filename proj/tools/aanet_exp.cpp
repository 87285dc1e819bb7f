// Command-line front end for the experiment driver.
//
//   aanet-exp generate|train|evaluate|trace [--config PATH] [--profile desk|paper|tiny]
//             [--seed N]... [--out DIR] [--manifest PATH] [--threads N]
//             trace only: --snapshot ID --src NODE
//
// Exit codes: 0 success, 1 usage, 2 config, 3 runtime.

#include <iostream>

#include <CLI11.hpp>

#include "aanet/expcli.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kRuntime = 3 };

struct Options {
  std::string config;
  std::string profile;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string manifest;
  int threads = -1;
  int snapshot = -1;
  int src = -1;
};

int run(const std::string& command, Options o) {
  using namespace aanet;
  exp::ExperimentConfig cfg;
  std::filesystem::path out_dir = o.out.empty() ? "." : o.out;

  if (!o.manifest.empty()) {
    if (!o.config.empty() || !o.profile.empty() || !o.seeds.empty()) {
      throw exp::ConfigError("--manifest cannot be combined with --config, --profile or --seed");
    }
    const auto m = exp::read_manifest(o.manifest);
    if (m.command != command) {
      throw exp::ConfigError("manifest " + o.manifest + " records '" + m.command + "', not '" + command + "'");
    }
    cfg = exp::parse_config_text(m.config_text, o.manifest);
    if (o.out.empty()) out_dir = std::filesystem::path(o.manifest).parent_path();
    if (out_dir.empty()) out_dir = ".";
    if (m.snapshot_id) o.snapshot = *m.snapshot_id;
    if (m.src) o.src = *m.src;
  } else {
    const auto prof = o.profile.empty() ? std::optional<std::string>{} : std::optional<std::string>{o.profile};
    if (!o.config.empty()) {
      cfg = exp::load_config(o.config, prof);
    } else {
      cfg = exp::profile(o.profile.empty() ? "desk" : o.profile);
    }
    if (!o.seeds.empty()) cfg.seeds = o.seeds;
  }
  // Worker count never changes results, so it is not part of the recorded config.
  if (o.threads >= 0) cfg.threads = o.threads;
  exp::validate(cfg);

  if (command == "generate") {
    exp::cmd_generate(cfg, out_dir, std::cout);
  } else if (command == "train") {
    exp::cmd_train(cfg, out_dir, std::cout);
  } else if (command == "evaluate") {
    exp::cmd_evaluate(cfg, out_dir, std::cout);
  } else {
    if (o.snapshot < 0 || o.src < 0) throw exp::ConfigError("trace needs --snapshot and --src");
    exp::cmd_trace(cfg, out_dir, o.snapshot, o.src, std::cout);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Routing experiments for aeronautical ad-hoc networks"};
  app.require_subcommand(1);
  Options o;
  std::string chosen;
  for (const char* name : {"generate", "train", "evaluate", "trace"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", o.config, "Config file (key = value)");
    sub->add_option("--profile", o.profile, "Base profile")->check(CLI::IsMember({"desk", "paper", "tiny"}));
    sub->add_option("--seed", o.seeds, "Training seed (repeatable)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--manifest", o.manifest, "Re-run from a manifest file");
    sub->add_option("--threads", o.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    if (std::string(name) == "trace") {
      sub->add_option("--snapshot", o.snapshot, "Snapshot id");
      sub->add_option("--src", o.src, "Source node id");
    }
    sub->callback([&chosen, name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    return run(chosen, o);
  } catch (const aanet::exp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const aanet::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
