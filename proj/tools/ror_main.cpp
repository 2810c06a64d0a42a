#include "ror/cli.hpp"

int main(int argc, char** argv) { return ror::cli_dispatch(argc, argv); }
