#include "episteer/cli.hpp"

int main(int argc, char** argv) { return episteer::run_cli(argc, argv); }
