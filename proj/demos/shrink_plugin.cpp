// Minimal external denoiser speaking the plugin protocol: reads one RFI1 frame and a
// "nu=<value>" line on stdin, answers with x / (1 + nu) on stdout.
//   redsample sample --denoiser plugin --denoiser_exec ./shrink_plugin --gamma 0.01 ...
#include <iostream>
#include <string>

#include "redsample/io.hpp"

int main() {
  redsample::ImageField x = redsample::io::read_rfi(std::cin);
  std::string line;
  std::getline(std::cin, line);
  const double nu = line.rfind("nu=", 0) == 0 ? std::stod(line.substr(3)) : 0.0;
  x *= 1.0 / (1.0 + nu);
  redsample::io::write_rfi(std::cout, x);
}
