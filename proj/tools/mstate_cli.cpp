#include "mstate/cli.hpp"

int main(int argc, char** argv) { return mstate::cli::run(argc, argv); }
