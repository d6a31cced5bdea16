#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bclab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Environment variable consulted for the dataset root when neither
// --data-dir nor the manifest's data_dir is set.
inline constexpr const char* kDataDirEnv = "BCLAB_DATA_DIR";

// Subcommands: train, evaluate, analyze, mix-preview, ablate. `args` excludes
// the program name. Diagnostics go to `err` as single lines.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace bclab::cli
