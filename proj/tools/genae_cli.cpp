#include "genae/cli.hpp"

int main(int argc, char** argv) { return genae::cli::main(argc, argv); }
