#include "emoseq/cli.hpp"

int main(int argc, char** argv) { return emoseq::run_cli(argc, argv); }
