#include "commands.hpp"

int main(int argc, char** argv) { return kdaif::cli::run(argc, argv); }
