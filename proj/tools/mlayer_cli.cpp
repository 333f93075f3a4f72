// Command-line front end; subcommands are implemented further down.
#include <cstdio>

int main() {
  std::printf("placeholder\n");
  return 0;
}
