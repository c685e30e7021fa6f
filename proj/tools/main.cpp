#include "cli.hpp"

int main(int argc, char** argv) { return jenkins::cli::run_cli(argc, argv); }
