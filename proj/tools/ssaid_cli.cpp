#include "ssaid/cli.hpp"

int main(int argc, char** argv) { return ssaid::cli_main(argc, argv); }
