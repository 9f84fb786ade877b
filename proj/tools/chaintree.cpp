#include "chaintree/cli.hpp"

int main(int argc, char** argv) { return chaintree::run_cli(argc, argv); }
