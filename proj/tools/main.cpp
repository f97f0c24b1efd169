#include "cli.hpp"

int main(int argc, char** argv) { return bpeimg::cli::dispatch(argc, argv); }
