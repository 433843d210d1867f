#include "criqa/cli.hpp"

int main(int argc, char** argv) { return criqa::cli::run(argc, argv); }
