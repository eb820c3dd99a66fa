#include "dropvid/cli.hpp"

int main(int argc, char** argv) { return dropvid::cli::run(argc, argv); }
