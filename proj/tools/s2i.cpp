#include "s2i/cli/cli.hpp"

int main(int argc, char** argv) { return s2i::cli::run(argc, argv); }
