#include "occ4d/cli.hpp"

int main(int argc, char** argv) { return occ4d::run_cli(argc, argv); }
