#pragma once

namespace uiim::cli {

/// Exit codes: 0 success, 1 invalid usage or configuration, 2 runtime failure.
inline constexpr int kOk = 0;
inline constexpr int kValidationError = 1;
inline constexpr int kRuntimeError = 2;

/// Entry point for `uiim <subcommand> [flags]`. Subcommands: synth, train,
/// eval, ablate, gradcheck, featurize. Every subcommand also reads
/// `--config <file>` with `key = value` lines named after the long flags;
/// explicit flags win over the file.
int run(int argc, char** argv);

}  // namespace uiim::cli
