#include "hpcrun/cli/Cli.hpp"

int main(int argc, char** argv) {
    return hpcrun::cli::runMain(argc, argv);
}
