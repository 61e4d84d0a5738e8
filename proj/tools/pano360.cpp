// Command line entry point. Subcommands are registered in cli_main.
#include <cstdio>

namespace pano {
int cli_main(int argc, char** argv);
}

int main(int argc, char** argv) { return pano::cli_main(argc, argv); }
