#pragma once

namespace latt::cli {

/// Entry point shared by the binary and the CLI tests.
int run(int argc, const char* const* argv);

}  // namespace latt::cli
