// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string>

#include "pdwn/kernels.hpp"

namespace pdwn::kernels {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

const KernelTable* resolve() {
    const char* forced = std::getenv("PDWN_KERNELS");
    if (forced != nullptr && std::string(forced) == "scalar") return &scalar_table();
    if (avx2_table() != nullptr && cpu_has_avx2_fma()) return avx2_table();
    return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
    static std::atomic<const KernelTable*> table{resolve()};
    return table;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

Isa set_active(Isa isa) {
    const Isa previous = active().isa;
    if (isa == Isa::avx2 && avx2_table() != nullptr && cpu_has_avx2_fma()) {
        slot().store(avx2_table());
    } else {
        slot().store(&scalar_table());
    }
    return previous;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace pdwn::kernels
