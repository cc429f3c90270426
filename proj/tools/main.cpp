#include <iostream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Fields of a few hundred KB would otherwise be mmapped and unmapped on
  // every allocation.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return mdn::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
