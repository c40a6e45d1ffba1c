#include "maaig/cli.hpp"

int main(int argc, char** argv) { return maaig::cli::dispatch(argc, argv); }
