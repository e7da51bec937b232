#include "confret/cli.hpp"

int main(int argc, char** argv) { return confret::cli::run(argc, argv); }
