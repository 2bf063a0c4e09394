#pragma once

#include <agnet/tensor.hpp>

#include <cmath>
#include <random>

namespace agnet::inline AGNET_ABI {

/// N(0, 2 / fan_in) with fan_in = numel / shape[0].
inline Tensor he_normal(const Shape &shape, std::mt19937_64 &rng)
{
    Tensor t(shape);
    const double fan_in = static_cast<double>(t.numel() / shape.front());
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto &v : t.data())
        v = static_cast<Scalar>(dist(rng));
    return t;
}

} // namespace agnet::inline AGNET_ABI
