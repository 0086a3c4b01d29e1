#include "medvl/cli.hpp"

int main(int argc, char** argv) { return medvl::cli_main(argc, argv); }
