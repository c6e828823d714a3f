// textrec: text-matching sequential recommendation pipeline.
// Subcommands: preprocess, build-vocab, train, encode, evaluate, analyze,
// export-embeddings. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numeric failure.

#include <iostream>
#include <string>
#include <tuple>

#include <CLI11.hpp>

#include "textrec/errors.hpp"
#include "textrec/pipeline.hpp"
#include "textrec/run_config.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string seed;
  std::string workdir;
  std::string sessions;
  std::string strategy;
  std::string init_checkpoint;
  std::string threads;
  bool mask_history = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "config file (key = value lines)");
  cmd->add_option("--seed", flags.seed, "global random seed (required unless set in the config)");
  cmd->add_option("--workdir", flags.workdir, "artifact directory");
  cmd->add_option("--sessions", flags.sessions, "session geometry NxM, e.g. 2x256");
  cmd->add_option("--strategy", flags.strategy, "negative sampling: inbatch|random|popular|hard");
  cmd->add_option("--init-checkpoint", flags.init_checkpoint, "checkpoint to initialize training from");
  cmd->add_option("--threads", flags.threads, "worker threads for encoding/evaluation");
  cmd->add_flag("--mask-history", flags.mask_history, "drop history items from eval candidates");
}

textrec::RunConfig resolve_config(const CommonFlags& flags) {
  textrec::RunConfig config;
  if (!flags.config_path.empty()) config.load_file(flags.config_path);
  if (!flags.seed.empty()) config.set("seed", flags.seed);
  if (!flags.workdir.empty()) config.set("paths.workdir", flags.workdir);
  if (!flags.sessions.empty()) config.set("model.sessions", flags.sessions);
  if (!flags.strategy.empty()) config.set("negatives.kind", flags.strategy);
  if (!flags.init_checkpoint.empty()) config.set("train.init_checkpoint", flags.init_checkpoint);
  if (!flags.threads.empty()) config.set("threads", flags.threads);
  if (flags.mask_history) config.set("eval.mask_history", "true");
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"text-matching sequential recommendation"};
  app.require_subcommand(1);

  CommonFlags flags;
  void (*run)(const textrec::RunConfig&, std::ostream&) = nullptr;

  const std::tuple<const char*, const char*, void (*)(const textrec::RunConfig&, std::ostream&)>
      commands[] = {
          {"preprocess", "filter interactions and write leave-one-out splits",
           &textrec::cmd_preprocess},
          {"build-vocab", "build the token vocabulary from the train split",
           &textrec::cmd_build_vocab},
          {"train", "contrastive dual-encoder training", &textrec::cmd_train},
          {"encode", "embed the full item catalog", &textrec::cmd_encode},
          {"evaluate", "full-catalog ranking metrics on the test or dev split",
           &textrec::cmd_evaluate},
          {"analyze", "popularity-bias and long-tail diagnostics", &textrec::cmd_analyze},
          {"export-embeddings", "labeled popular/other embedding sample",
           &textrec::cmd_export_embeddings},
      };
  for (const auto& [name, description, fn] : commands) {
    CLI::App* cmd = app.add_subcommand(name, description);
    add_common_flags(cmd, flags);
    cmd->callback([fn, &run] { run = fn; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const textrec::RunConfig config = resolve_config(flags);
    run(config, std::cout);
    return 0;
  } catch (const textrec::ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return 2;
  } catch (const textrec::DataError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return 3;
  } catch (const textrec::NumericError& err) {
    std::cerr << "numeric error: " << err.what() << '\n';
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
}
