#include "stefan_gt/cli.hpp"

int main(int argc, char** argv) { return stefan_gt::run_cli(argc, argv); }
