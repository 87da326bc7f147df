#include "cli.hpp"

int main(int argc, char** argv) { return latt::cli::run(argc, argv); }
