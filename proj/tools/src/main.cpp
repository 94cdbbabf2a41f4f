#include "convexcert/cli.hpp"

int main(int argc, char** argv) { return convexcert::cli::main(argc, argv); }
