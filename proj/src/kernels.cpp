#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include "kernels_internal.hpp"
#include "solarcast/common.hpp"

namespace solarcast::kernels {

double Moments::stddev() const { return std::sqrt(variance()); }

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend detect_backend() {
    const bool avx2_ok = avx2_ops_or_null() != nullptr && cpu_has_avx2();
    if (const char* env = std::getenv("SOLARCAST_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!avx2_ok)
                throw ConfigError("SOLARCAST_KERNELS=avx2 but AVX2 is unavailable");
            return Backend::Avx2;
        }
        throw ConfigError(std::string("unknown SOLARCAST_KERNELS value: ") + env);
    }
    return avx2_ok ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& backend_slot() {
    static std::atomic<Backend> slot{detect_backend()};
    return slot;
}

}  // namespace

bool backend_available(Backend backend) {
    switch (backend) {
        case Backend::Scalar:
            return true;
        case Backend::Avx2:
            return avx2_ops_or_null() != nullptr && cpu_has_avx2();
    }
    return false;
}

const Ops& ops(Backend backend) {
    if (backend == Backend::Avx2) {
        if (!backend_available(Backend::Avx2))
            throw ConfigError("AVX2 kernel backend unavailable on this machine");
        return *avx2_ops_or_null();
    }
    return scalar_ops();
}

const Ops& ops() { return ops(backend_slot().load(std::memory_order_relaxed)); }

Backend active_backend() {
    return backend_slot().load(std::memory_order_relaxed);
}

void force_backend(Backend backend) {
    if (!backend_available(backend))
        throw ConfigError("requested kernel backend unavailable: " +
                          backend_name(backend));
    backend_slot().store(backend, std::memory_order_relaxed);
}

std::string backend_name(Backend backend) {
    switch (backend) {
        case Backend::Scalar:
            return "scalar";
        case Backend::Avx2:
            return "avx2";
    }
    return "unknown";
}

}  // namespace solarcast::kernels
