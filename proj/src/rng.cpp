#include "relpos/rng.hpp"

#include <cmath>
#include <numbers>

#include "relpos/errors.hpp"

namespace relpos {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t SeededRng::next_u64() {
    return splitmix64(seed_ * 0xd1342543de82ef95ULL + 0x9e3779b97f4a7c15ULL * ++counter_);
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t SeededRng::below(std::uint64_t n) {
    if (n == 0) throw UsageError("SeededRng::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

std::int64_t SeededRng::range(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw UsageError("SeededRng::range with hi < lo");
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

double SeededRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

SeededRng SeededRng::fork(std::uint64_t salt) const {
    return SeededRng(splitmix64(seed_ ^ splitmix64(salt + 0x632be59bd9b4e019ULL)));
}

}  // namespace relpos
