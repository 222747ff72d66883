#include "specalign/cli.hpp"

int main(int argc, char** argv) { return specalign::run_cli(argc, argv); }
