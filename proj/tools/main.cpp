#include "hyperfscil/cli.hpp"

int main(int argc, char** argv) { return hyperfscil::cli_main(argc, argv); }
