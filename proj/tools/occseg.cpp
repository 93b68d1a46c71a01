#include "occseg/cli.hpp"

int main(int argc, char** argv) { return occseg::run_cli(argc, argv); }
