#include "masca/cli.hpp"

int main(int argc, char** argv) {
  return masca::dispatch(argc, argv);
}
