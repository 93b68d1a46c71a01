#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "occseg/grid.hpp"

namespace occseg {

/// Reads a grayscale image scaled to [0,1]. PNG (any bit depth; colour is
/// converted to luma, alpha dropped) and binary PGM/PBM (P5, P4) are accepted.
/// PBM black pixels read as 1.
Image read_image(const std::filesystem::path& path);

/// Reads a mask image; every pixel must be 0 or full scale.
BinaryMask read_mask(const std::filesystem::path& path);

void write_png8(const std::filesystem::path& path, const Image& image);
/// 16-bit grayscale; 65535 represents 1.
void write_png16(const std::filesystem::path& path, const MembershipField& q);
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);
/// Interleaved 8-bit RGB, width*height*3 bytes.
void write_rgb_png(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

/// Reads a 16-bit (or 8-bit) PNG back as a membership field.
MembershipField read_membership_png(const std::filesystem::path& path);

}  // namespace occseg
