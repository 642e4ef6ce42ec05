#pragma once

namespace dibm {

// Entry point of the `dibm` command-line tool; returns the process exit code.
int cli_main(int argc, char** argv);

}  // namespace dibm
