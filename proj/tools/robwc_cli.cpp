#include <cstdio>

int main() {
  std::puts("robwc: placeholder");
  return 0;
}
