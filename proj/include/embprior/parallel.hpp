#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace embprior {

// Runs fn(0..nchunks-1) across up to nthreads workers. Chunk identity, not
// thread identity, determines where results land, so outputs are independent
// of the actual degree of parallelism. nthreads <= 1 runs inline.
inline void parallel_chunks(int nchunks, int nthreads, const std::function<void(int)>& fn) {
    if (nchunks <= 0) return;
    if (nthreads <= 1 || nchunks == 1) {
        for (int c = 0; c < nchunks; ++c) fn(c);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error = nullptr;
    std::mutex err_mutex;
    int workers = std::min(nthreads, nchunks);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            int c;
            while ((c = next.fetch_add(1)) < nchunks) {
                try {
                    fn(c);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace embprior
