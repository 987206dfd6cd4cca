#include "attnprune/cli.hpp"

int main(int argc, char** argv) {
    return attnprune::run_cli(argc, argv);
}
