#include <iostream>
#include <string>
#include <vector>

#include "curvecal/cli.hpp"

int main(int argc, char** argv) {
  return curvecal::dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
