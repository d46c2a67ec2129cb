#include "handfit/workbench/cli.hpp"

int main(int argc, char** argv) { return handfit::workbench::run_cli(argc, argv); }
