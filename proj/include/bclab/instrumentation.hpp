#pragma once

#include <atomic>
#include <cstdint>

namespace bclab::instrumentation {

// Process-wide call counters used to assert that evaluation never mixes or
// augments.
struct Counters {
  std::atomic<std::uint64_t> augment_calls{0};
  std::atomic<std::uint64_t> mix_calls{0};
};

Counters& counters();

inline std::uint64_t augment_calls() { return counters().augment_calls.load(); }
inline std::uint64_t mix_calls() { return counters().mix_calls.load(); }

}  // namespace bclab::instrumentation
