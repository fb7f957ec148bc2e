#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace deepis {

// Chunk size is fixed independently of the thread count so any per-chunk
// reduction gives the same bits for every --threads value.
inline constexpr std::size_t kPathChunk = 64;

// Calls fn(begin, end, chunk_index) for every chunk of [0, n). Chunks are
// handed out dynamically; fn must only write chunk-private output.
template <class Fn>
void parallel_for_chunks(std::size_t n, std::size_t chunk, unsigned threads, Fn&& fn) {
    const std::size_t n_chunks = (n + chunk - 1) / chunk;
    if (n_chunks == 0) return;
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n_chunks));
    if (workers == 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) fn(c * chunk, std::min(n, (c + 1) * chunk), c);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            try {
                fn(c * chunk, std::min(n, (c + 1) * chunk), c);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n_chunks);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace deepis
