#include "radgym/cli.hpp"

int main(int argc, char** argv) { return radgym::cli::run_command(argc, argv); }
