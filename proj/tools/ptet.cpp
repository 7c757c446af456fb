#include "ptet/cli/commands.hpp"

int main(int argc, char** argv) { return ptet::cli::run(argc, argv); }
