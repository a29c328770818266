#pragma once

#include <array>
#include <cstdint>

namespace bvc {

struct PhiloxBlock {
    uint32_t x[4];
};

// One application of Philox4x32-10 (Salmon, Moraes, Dror, Shaw, SC'11).
PhiloxBlock philox4x32(const std::array<uint32_t, 4>& counter,
                       const std::array<uint32_t, 2>& key);

// Sequential generator for one cell (seed, stream_id, sample_index) of the
// counter space. Counter layout: (block, sample, stream_lo, stream_hi) with
// key = seed, so distinct cells never share counters and every sample index
// owns an independent substream no matter how work is scheduled.
class SampleRng {
  public:
    SampleRng(uint64_t seed, uint64_t stream_id, uint32_t sample_index);

    uint64_t next_u64();
    // Uniform strictly inside (0,1), 53-bit resolution.
    double next_unit();
    // Standard normal via Box-Muller; pairs are cached.
    double next_normal();
    // Gamma(shape, scale 1), any shape > 0.
    double next_gamma(double shape);
    // Rewind to the start of the cell; clears the normal cache. Used for
    // common-random-number replays.
    void reset();

  private:
    void refill();

    std::array<uint32_t, 2> key_;
    std::array<uint32_t, 2> stream_;
    uint32_t sample_;
    uint32_t block_ = 0;
    PhiloxBlock buf_{};
    int pos_ = 4;  // consumed 32-bit words in buf_
    bool have_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

// Identifies an independent substream by (seed, stream_id). Streams are
// value types; identical fields reproduce identical output on any platform.
struct RngStream {
    uint64_t seed = 0;
    uint64_t stream_id = 0;

    SampleRng at_sample(uint32_t sample_index) const {
        return SampleRng(seed, stream_id, sample_index);
    }
    // Convenience for scalar (non-sharded) consumers.
    SampleRng scalar() const { return at_sample(0); }
    RngStream with_stream(uint64_t id) const { return RngStream{seed, id}; }
};

}  // namespace bvc
