#include "mapo/cli/cli.hpp"

int main(int argc, char** argv) { return mapo::cli::run(argc, argv); }
