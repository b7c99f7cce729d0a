#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "efficomm/runner.hpp"

int main(int argc, char** argv) {
  efficomm::tune_allocator();
  doctest::Context context(argc, argv);
  return context.run();
}
