#include "lagtrack/random.hpp"

namespace lagtrack {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t point, std::uint64_t frame,
                           std::uint64_t particle) {
  std::uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL);
  h = mix64(h ^ (point + 0x632be59bd9b4e019ULL));
  h = mix64(h ^ (frame + 0x85157af5ULL));
  h = mix64(h ^ (particle + 0x1b873593ULL));
  state_ = h;
}

RandomStream::result_type RandomStream::operator()() {
  state_ += 0x9e3779b97f4a7c15ULL;
  return mix64(state_);
}

double RandomStream::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double RandomStream::normal() { return normal_(*this); }

}  // namespace lagtrack
