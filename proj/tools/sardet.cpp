#include <cstdio>

int main() {
  std::puts("sardet: subcommands not wired up yet");
  return 2;
}
