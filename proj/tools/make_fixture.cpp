// Writes the synthetic 3-subject bundle used by the tests.
#include <iostream>

#include "hrirdiff/synthetic.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixture OUT_DIR\n";
    return 2;
  }
  try {
    hrirdiff::write_synthetic_bundle(argv[1], {});
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
