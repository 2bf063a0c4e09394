#pragma once

// Element type of every tensor. The library is compiled twice: the default
// float build used for training and a double build (AGNET_DOUBLE) used for
// finite-difference gradient checks. The inline namespace keeps both builds
// linkable into the same executable.

#ifdef AGNET_DOUBLE
#define AGNET_ABI f64
#else
#define AGNET_ABI f32
#endif

namespace agnet::inline AGNET_ABI {

#ifdef AGNET_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

} // namespace agnet::inline AGNET_ABI
