#pragma once

#include <cstddef>
#include <functional>

namespace langbias {

// Worker count used by parallel_for; 1 runs inline. Results never depend on it.
void set_thread_count(int n);
int thread_count();

// Runs body(i) for i in [0, n). Exceptions from workers are rethrown (first by index).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace langbias
