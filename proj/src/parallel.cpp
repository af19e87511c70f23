#include "bm4dpc/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace bm4dpc {
namespace {

int default_threads() {
  if (const char* env = std::getenv("BM4DPC_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int>& threads_setting() {
  static std::atomic<int> n{default_threads()};
  return n;
}

}  // namespace

int thread_count() { return threads_setting().load(); }

void set_thread_count(int n) { threads_setting().store(n > 0 ? n : default_threads()); }

}  // namespace bm4dpc
