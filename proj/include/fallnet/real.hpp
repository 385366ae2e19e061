#pragma once

namespace fallnet {

// Element type for all tensors. Double precision by default so analytic
// gradients can be validated against central differences at 1e-4 tolerance;
// define FALLNET_SINGLE_PRECISION to trade that for speed and memory.
#ifdef FALLNET_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

} // namespace fallnet
