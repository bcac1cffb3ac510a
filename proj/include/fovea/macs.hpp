#pragma once

#include <cstdint>

namespace fovea::macs {

// Thread-local multiply-accumulate counter. Forward-pass kernels add their
// op counts here; the benchmark resets it, runs an episode, and reads it.
extern thread_local std::uint64_t counter;

inline void add(std::uint64_t n) { counter += n; }
inline void reset() { counter = 0; }
inline std::uint64_t read() { return counter; }

}  // namespace fovea::macs
