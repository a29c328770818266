#include <bvcalc/rng.hpp>

#include <cmath>

namespace bvc {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    uint64_t p = (uint64_t)a * (uint64_t)b;
    hi = (uint32_t)(p >> 32);
    lo = (uint32_t)p;
}

}  // namespace

PhiloxBlock philox4x32(const std::array<uint32_t, 4>& counter,
                       const std::array<uint32_t, 2>& key) {
    uint32_t c0 = counter[0], c1 = counter[1], c2 = counter[2], c3 = counter[3];
    uint32_t k0 = key[0], k1 = key[1];
    for (int round = 0; round < 10; ++round) {
        uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, c0, hi0, lo0);
        mulhilo(kPhiloxM1, c2, hi1, lo1);
        uint32_t n0 = hi1 ^ c1 ^ k0;
        uint32_t n1 = lo1;
        uint32_t n2 = hi0 ^ c3 ^ k1;
        uint32_t n3 = lo0;
        c0 = n0; c1 = n1; c2 = n2; c3 = n3;
        k0 += kPhiloxW0;
        k1 += kPhiloxW1;
    }
    return PhiloxBlock{{c0, c1, c2, c3}};
}

SampleRng::SampleRng(uint64_t seed, uint64_t stream_id, uint32_t sample_index)
    : key_{(uint32_t)seed, (uint32_t)(seed >> 32)},
      stream_{(uint32_t)stream_id, (uint32_t)(stream_id >> 32)},
      sample_(sample_index) {}

void SampleRng::reset() {
    block_ = 0;
    pos_ = 4;
    have_cached_normal_ = false;
}

void SampleRng::refill() {
    buf_ = philox4x32({block_, sample_, stream_[0], stream_[1]}, key_);
    ++block_;
    pos_ = 0;
}

uint64_t SampleRng::next_u64() {
    if (pos_ > 2) refill();
    uint64_t lo = buf_.x[pos_];
    uint64_t hi = buf_.x[pos_ + 1];
    pos_ += 2;
    return (hi << 32) | lo;
}

double SampleRng::next_unit() {
    // 53 mantissa bits; the +0.5 offset keeps the value strictly inside (0,1).
    return ((double)(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double SampleRng::next_normal() {
    if (have_cached_normal_) {
        have_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = next_unit();
    double u2 = next_unit();
    double rad = std::sqrt(-2.0 * std::log(u1));
    double ang = 6.283185307179586476925286766559 * u2;
    cached_normal_ = rad * std::sin(ang);
    have_cached_normal_ = true;
    return rad * std::cos(ang);
}

double SampleRng::next_gamma(double shape) {
    // Marsaglia-Tsang (2000) squeeze method for shape >= 1; shapes below 1 use
    // the boost Gamma(a) = Gamma(a+1) * U^{1/a}.
    if (shape < 1.0) {
        double u = next_unit();
        return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = next_normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        double u = next_unit();
        double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
}

}  // namespace bvc
