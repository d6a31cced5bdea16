#include "bclab/cli.hpp"

int main(int argc, char** argv) { return bclab::cli::run(argc, argv); }
