#include "msreg/cli.hpp"

int main(int argc, char** argv) { return msreg::cli_main(argc, argv); }
