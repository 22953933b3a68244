#include "core/rng.h"

#include <sstream>

namespace avfuse {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (is.fail()) throw IoError("invalid rng state string");
}

uint64_t derive_seed(uint64_t seed, uint64_t salt_a, uint64_t salt_b) {
  // splitmix64 over the concatenated words
  uint64_t x = seed;
  for (uint64_t w : {salt_a, salt_b}) {
    x += 0x9e3779b97f4a7c15ULL + w;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    x = z ^ (z >> 31);
  }
  return x;
}

}  // namespace avfuse
