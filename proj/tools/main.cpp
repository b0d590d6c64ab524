#include "lungad/cli.hpp"

int main(int argc, char** argv) { return lungad::run_cli(argc, argv); }
