#include "lrppo/common.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace lrppo {

std::string Rng::save_state() const {
    std::ostringstream os;
    os << engine_;
    os << ' ' << (have_spare_ ? 1 : 0) << ' ' << format_double(spare_);
    return os.str();
}

void Rng::load_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    int spare_flag = 0;
    double spare = 0.0;
    if (is >> spare_flag >> spare) {
        have_spare_ = spare_flag != 0;
        spare_ = spare;
    } else {
        have_spare_ = false;
        spare_ = 0.0;
    }
    if (is.fail() && !is.eof()) throw DataError("Rng::load_state: malformed state string");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double pairwise_sum(std::span<const double> values) {
    if (values.empty()) return 0.0;
    if (values.size() <= 8) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

std::string format_double(double v) {
    char buf[64];
    // 17 significant digits round-trip any double.
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace lrppo
