#include "retinexdual/cli.hpp"

int main(int argc, char** argv) { return retinexdual::run_cli(argc, argv); }
