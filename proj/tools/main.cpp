#include "cli.hpp"

int main(int argc, char** argv) { return relnet::cli_dispatch(argc, argv); }
