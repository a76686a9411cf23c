#include "msdiff/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "msdiff/error.hpp"

namespace msd {

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

Rng Rng::derive(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(splitmix64(seed) ^ (index * 0xd1b54a32d192ed03ULL + 1)));
}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw ContractError("Rng::below(0)");
    return static_cast<std::size_t>(engine_() % n);
}

std::string Rng::state() const {
    std::ostringstream os;
    os << seed_ << ' ' << engine_;
    return os.str();
}

void Rng::set_state(const std::string& state) {
    std::istringstream is(state);
    is >> seed_ >> engine_;
    if (!is) throw ParseError("malformed rng state");
}

}  // namespace msd
