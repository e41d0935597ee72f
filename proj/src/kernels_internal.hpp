#pragma once

#include "solarcast/kernels.hpp"

namespace solarcast::kernels {

const Ops& scalar_ops();
// Null when the binary was built without AVX2 support.
const Ops* avx2_ops_or_null();

}  // namespace solarcast::kernels
