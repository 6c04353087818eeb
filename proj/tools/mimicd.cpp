#include "mimicd/commands.hpp"

int main(int argc, char** argv) { return mimicd::cli::run(argc, argv); }
