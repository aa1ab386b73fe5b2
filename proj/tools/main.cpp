#include "cli.hpp"

int main(int argc, char** argv) { return vitens::cli::run_cli(argc, argv); }
