#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Keep large activation buffers on the heap instead of fresh mmaps per step.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
    std::vector<std::string> args(argv + 1, argv + argc);
    return relpos::cli::run(args, std::cout, std::cerr);
}
