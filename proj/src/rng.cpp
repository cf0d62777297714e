#include "mapo/rng.hpp"

#include <bit>
#include <cmath>

namespace mapo {

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& w : s_) w = splitmix64(x);
}

uint64_t Rng::next_u64() {
  auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
  const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  // Rejection sampling over the largest multiple of span, no modulo bias.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return lo + static_cast<int>(v % span);
}

double Rng::gauss() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();  // log(0) guard
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<double> Rng::gauss_vector(int n) {
  std::vector<double> out(static_cast<size_t>(n));
  for (auto& v : out) v = gauss();
  return out;
}

Rng Rng::split(uint64_t stream) const {
  uint64_t x = s_[0] ^ (s_[2] + 0x9e3779b97f4a7c15ull * (stream + 1));
  Rng child;
  for (auto& w : child.s_) w = splitmix64(x);
  return child;
}

std::array<uint64_t, 6> Rng::state() const {
  return {s_[0], s_[1], s_[2], s_[3], has_spare_ ? 1ull : 0ull,
          std::bit_cast<uint64_t>(spare_)};
}

Rng Rng::from_state(const std::array<uint64_t, 6>& st) {
  Rng r;
  r.s_ = {st[0], st[1], st[2], st[3]};
  r.has_spare_ = st[4] != 0;
  r.spare_ = std::bit_cast<double>(st[5]);
  return r;
}

}  // namespace mapo
