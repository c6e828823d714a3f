#pragma once

#include <ostream>
#include <string>

#include "textrec/run_config.hpp"

namespace textrec {

// Command implementations behind the CLI. Each prints the effective config
// to `out` before running and writes its artifacts under the workdir.
void cmd_preprocess(const RunConfig& config, std::ostream& out);
void cmd_build_vocab(const RunConfig& config, std::ostream& out);
void cmd_train(const RunConfig& config, std::ostream& out);
void cmd_encode(const RunConfig& config, std::ostream& out);
void cmd_evaluate(const RunConfig& config, std::ostream& out);
void cmd_analyze(const RunConfig& config, std::ostream& out);
void cmd_export_embeddings(const RunConfig& config, std::ostream& out);

}  // namespace textrec
