#include "brushflow/cli.hpp"

int main(int argc, char** argv) { return brushflow::cli::run(argc, argv); }
