#include "repcam/cli.hpp"

int main(int argc, char** argv) { return repcam::cli::run(argc, argv); }
