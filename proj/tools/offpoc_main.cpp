#include "offpoc/run.hpp"

int main(int argc, char** argv) {
  return offpoc::run_cli(argc, argv);
}
