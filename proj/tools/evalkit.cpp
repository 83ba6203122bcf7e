#include "evalkit/cli.hpp"

int main(int argc, char** argv) { return evalkit::run_cli(argc, argv); }
