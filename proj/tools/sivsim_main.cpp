#include "sivsim/cli.hpp"

int main(int argc, char** argv) { return sivsim::cli_dispatch(argc, argv); }
