#include "eikfield/cli.hpp"

int main(int argc, char** argv) { return eikfield::run_cli(argc, argv); }
