#include <cstdlib>
#include <string_view>

#include "monoflow/kernels.hpp"

namespace monoflow::kernels {

const KernelTable& active() {
  static const KernelTable& chosen = []() -> const KernelTable& {
    const char* env = std::getenv("MONOFLOW_SIMD");
    if (env != nullptr && std::string_view(env) == "scalar") return scalar_table();
    if (const KernelTable* t = avx2_table()) return *t;
    return scalar_table();
  }();
  return chosen;
}

}  // namespace monoflow::kernels
