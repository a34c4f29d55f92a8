#pragma once

#include <cstddef>
#include <functional>

namespace cmet {

/// Worker cap: MET_THREADS if set, otherwise the hardware concurrency.
std::size_t default_workers();

/// Run body(i) for i in [0, n). Each index is processed exactly once; callers
/// write results by index so the output never depends on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Same, over contiguous chunks [begin, end) of at least `grain` indices.
void parallel_for_range(std::size_t n, std::size_t grain,
                        const std::function<void(std::size_t, std::size_t)>& body);

/// Overrides the worker count process-wide for its lifetime (0 restores the
/// default).
class WorkerLimit {
 public:
  explicit WorkerLimit(std::size_t workers);
  ~WorkerLimit();
  WorkerLimit(const WorkerLimit&) = delete;
  WorkerLimit& operator=(const WorkerLimit&) = delete;

 private:
  std::size_t previous_;
};

}  // namespace cmet
