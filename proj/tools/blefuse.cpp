#include "blefuse/cli.hpp"

int main(int argc, char** argv) { return blefuse::cli::run(argc, argv); }
