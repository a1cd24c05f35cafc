#include "egdp/cli.hpp"

int main(int argc, char** argv) { return egdp::cli::run_cli(argc, argv); }
