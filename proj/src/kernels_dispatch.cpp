#include <cstdlib>
#include <string_view>

#include "dibm/kernels.hpp"

namespace dibm::kernels {

#ifndef DIBM_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif
#ifndef DIBM_HAVE_NEON
const KernelTable* neon_table() { return nullptr; }
#endif

namespace {

const KernelTable& select() {
  const char* forced = std::getenv("DIBM_KERNELS");
  if (forced != nullptr && std::string_view(forced) == "scalar") return scalar_table();
  if (const KernelTable* t = avx2_table()) return *t;
  if (const KernelTable* t = neon_table()) return *t;
  return scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace dibm::kernels
