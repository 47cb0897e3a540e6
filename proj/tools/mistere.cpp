#include "mistere/cli.hpp"

int main(int argc, char** argv) { return mistere::run_cli(argc, argv); }
