#include "uiim/cli.hpp"

int main(int argc, char** argv) { return uiim::cli::run(argc, argv); }
