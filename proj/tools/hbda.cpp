#include "hbda/cli.hpp"

int main(int argc, char** argv) { return hbda::cli_main(argc, argv); }
