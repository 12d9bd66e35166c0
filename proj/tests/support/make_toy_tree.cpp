// make_toy_tree <root> <per_class> <size> <seed>: synthetic class folders for CLI tests.
#include <cstdio>
#include <cstdlib>
#include <string>

#include "toy_data.hpp"

int main(int argc, char** argv) {
  if (argc != 5) {
    std::fprintf(stderr, "usage: make_toy_tree <root> <per_class> <size> <seed>\n");
    return 2;
  }
  const int per_class = std::atoi(argv[2]);
  const int size = std::atoi(argv[3]);
  const auto seed = std::strtoull(argv[4], nullptr, 10);
  const int n = cytoxai::toy::write_image_tree(argv[1], std::vector<int>(cytoxai::kNumClasses, per_class), size, seed, 4);
  std::printf("%d images\n", n);
  return 0;
}
