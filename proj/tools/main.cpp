#include "pdcycon/cli.hpp"

int main(int argc, char** argv) { return pdcycon::cli::run(argc, argv); }
