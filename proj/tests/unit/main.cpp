#define DOCTEST_CONFIG_IMPLEMENT
#include "testing.hpp"


int main(int argc, char** argv) {
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, true);
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  return ctx.run();
}
