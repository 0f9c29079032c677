#include "depthcal/parallel.hpp"

#include <cstdlib>
#include <string>

namespace depthcal {

int workerThreads() {
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads <= 0) {
    threads = 1;
  }
  if (const char* cap = std::getenv("DEPTHCAL_THREADS")) {
    try {
      const int limit = std::stoi(cap);
      if (limit > 0) {
        threads = std::min(threads, limit);
      }
    } catch (const std::exception&) {
      // Ignore malformed values.
    }
  }
  return threads;
}

}  // namespace depthcal
