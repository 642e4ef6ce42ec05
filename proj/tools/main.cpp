#include "cli.hpp"

int main(int argc, char** argv) { return dibm::cli_main(argc, argv); }
