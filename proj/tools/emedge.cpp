#include "cli.hpp"

int main(int argc, char** argv) { return emedge::cli::run_cli(argc, argv); }
