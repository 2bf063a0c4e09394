#pragma once

#include <agnet/tensor.hpp>

#include <filesystem>
#include <iosfwd>

namespace agnet::inline AGNET_ABI {

// AGT1: 'A' 'G' 'T' '1', u32 LE ndim, ndim x u32 LE extents, float32 LE payload.

void write_agt1(std::ostream &os, const Tensor &t);
void write_agt1(const std::filesystem::path &path, const Tensor &t);
Tensor read_agt1(std::istream &is);
Tensor read_agt1(const std::filesystem::path &path);

/// 8-bit binary PGM ("P5", maxval 255) of a 2-D map (or any tensor whose
/// last two axes are H, W and leading axes are 1) after division by its max.
void write_pgm(const std::filesystem::path &path, const Tensor &map);

namespace le {
void put_u32(std::ostream &os, uint32_t v);
void put_f32(std::ostream &os, float v);
uint32_t get_u32(std::istream &is);
float get_f32(std::istream &is);
} // namespace le

} // namespace agnet::inline AGNET_ABI
