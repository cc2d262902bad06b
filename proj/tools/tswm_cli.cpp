#include "tswm/cli.hpp"

int main(int argc, char** argv) { return tswm::cli::run(argc, argv); }
