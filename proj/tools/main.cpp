#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "stein_cv/stein_cv.h"

namespace {

struct Args {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 0;
};

void AddOptions(CLI::App* cmd, Args& args) {
  cmd->add_option("--config", args.config, "experiment config file")->required();
  cmd->add_option("--out", args.out, "CSV output path")->required();
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--threads", args.threads, "worker threads")->check(CLI::PositiveNumber);
}

// 0 ok, 1 failed identity check, 2 config error, 3 any other error.
int ExitCode(scv_status s) {
  if (s == SCV_OK) return 0;
  if (s == SCV_CHECK_FAILED) return 1;
  if (s == SCV_ERR_CONFIG) return 2;
  return 3;
}

int Fail(scv_status s, const char* where) {
  std::fprintf(stderr, "stein-cv: %s: %s: %s\n", where, scv_status_string(s), scv_last_error());
  return ExitCode(s);
}

int Run(scv_experiment kind, const Args& args, bool seed_given, bool threads_given) {
  scv_config* config = nullptr;
  scv_status s = scv_config_load(args.config.c_str(), &config);
  if (s != SCV_OK) {
    Fail(s, args.config.c_str());
    return 2;
  }
  scv_config_set_kind(config, kind);
  if (seed_given) scv_config_set_seed(config, args.seed);
  if (threads_given) scv_config_set_threads(config, args.threads);

  scv_report* report = nullptr;
  s = scv_run(config, &report);
  scv_config_free(config);
  if (s != SCV_OK) return Fail(s, "run");
  s = scv_report_write(report, args.out.c_str());
  const bool passed = scv_report_all_passed(report);
  scv_report_free(report);
  if (s != SCV_OK) return Fail(s, args.out.c_str());
  if (!passed) {
    std::fprintf(stderr, "stein-cv: one or more checks failed, see %s\n", args.out.c_str());
    return ExitCode(SCV_CHECK_FAILED);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stein control variates for policy gradients"};
  app.require_subcommand(1);
  app.set_version_flag("--version", scv_version());

  Args args;
  CLI::App* variance = app.add_subcommand("variance-eval", "estimator variance on a frozen policy");
  CLI::App* train = app.add_subcommand("train", "PPO learning curves");
  CLI::App* check = app.add_subcommand("check", "numerical identity checks");
  for (CLI::App* cmd : {variance, train, check}) AddOptions(cmd, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const bool seed_given = cmd->count("--seed") > 0;
  const bool threads_given = cmd->count("--threads") > 0;
  if (cmd == variance) return Run(SCV_VARIANCE_EVAL, args, seed_given, threads_given);
  if (cmd == train) return Run(SCV_TRAIN, args, seed_given, threads_given);
  return Run(SCV_IDENTITY_CHECK, args, seed_given, threads_given);
}
