#include "cli.hpp"

int main(int argc, char** argv) { return erl::cli::cli_main(argc, argv); }
