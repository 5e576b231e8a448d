#include "pgrec/cli.hpp"

int main(int argc, char** argv) { return pgrec::cli::run(argc, argv); }
