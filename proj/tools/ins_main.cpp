#include "ins_cli.hpp"

int main(int argc, char** argv) { return ins::cli::run_cli(argc, argv); }
