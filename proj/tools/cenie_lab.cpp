#include "cenie/cli.hpp"

int main(int argc, char** argv) { return cenie::cli::main(argc, argv); }
