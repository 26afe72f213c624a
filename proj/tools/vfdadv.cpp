#include "vfd/cli.hpp"

int main(int argc, char** argv) { return vfd::cli::run(argc, argv); }
