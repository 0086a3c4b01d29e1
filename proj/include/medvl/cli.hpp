#pragma once

#include <string>
#include <vector>

namespace medvl {

/// Subcommands: train, eval, serve, infer, synth. Returns the process exit
/// code; 2 for usage errors.
int cli_main(int argc, char** argv);
/// Arguments without the program name.
int cli_main(const std::vector<std::string>& args);

}  // namespace medvl
