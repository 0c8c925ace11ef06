#include "ldrc/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace ldrc {

namespace {

std::atomic<int> g_threads{0};

int hardware_threads() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : int(n);
}

}  // namespace

void set_num_threads(int n) {
    g_threads.store(n > 0 ? n : 0);
}

int num_threads() {
    int n = g_threads.load();
    return n > 0 ? n : hardware_threads();
}

void parallel_for(std::int64_t count,
                  const std::function<void(std::int64_t, std::int64_t, int)>& fn) {
    if (count <= 0) return;
    int workers = int(std::min<std::int64_t>(num_threads(), count));
    if (workers <= 1) {
        fn(0, count, 0);
        return;
    }
    std::int64_t chunk = (count + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers - 1));
    for (int t = 1; t < workers; ++t) {
        std::int64_t b = t * chunk;
        std::int64_t e = std::min(count, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e, t] { fn(b, e, t); });
    }
    fn(0, std::min(count, chunk), 0);
    for (auto& th : pool) th.join();
}

}  // namespace ldrc
