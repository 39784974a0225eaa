#pragma once

#include <cstddef>
#include <functional>

namespace cbsde {

// Worker count used when a caller passes threads <= 0.
int default_threads();
void set_default_threads(int threads);

// Splits [0, n) into fixed chunks of `chunk` items and calls
// fn(chunk_id, begin, end) for each. The chunk layout does not depend on the
// thread count, so per-chunk partial results reduced in chunk order are
// bit-identical for any number of workers.
void parallel_chunks(std::size_t n, std::size_t chunk, int threads,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) {
  return (n + chunk - 1) / chunk;
}

}  // namespace cbsde
