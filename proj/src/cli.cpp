#include <cstdio>

namespace pano {

int cli_main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::fprintf(stderr, "error: category=usage detail=cli-not-wired-yet\n");
  return 2;
}

}  // namespace pano
