#include "vitssp/dtype.hpp"

#include <atomic>

namespace vitssp {

namespace {
std::atomic<DType> g_default_dtype{DType::F64};
}

DType default_dtype() { return g_default_dtype.load(std::memory_order_relaxed); }
void set_default_dtype(DType dt) { g_default_dtype.store(dt, std::memory_order_relaxed); }

}  // namespace vitssp
