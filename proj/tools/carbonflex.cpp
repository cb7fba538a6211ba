#include "carbonflex/cli.hpp"

int main(int argc, char** argv) { return carbonflex::run_cli(argc, argv); }
