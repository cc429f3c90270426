#pragma once

#include <filesystem>

#include "mdn/field.hpp"

namespace mdn {

// "MDNF" binary format: 4 magic bytes, little-endian u32 height, width,
// channels, then height*width*channels little-endian float64 values in
// field order.
void save_mdnf(const ScalarField& f, const std::filesystem::path& path);
ScalarField load_mdnf(const std::filesystem::path& path);

// In-memory variants used by the file functions and the tests.
std::vector<unsigned char> encode_mdnf(const ScalarField& f);
ScalarField decode_mdnf(std::span<const unsigned char> bytes);

// Binary PGM (P5) of one channel, linearly mapped from [min, max] of that
// channel to [0, 255]. A constant channel maps to 0.
void export_pgm(const ScalarField& f, int channel, const std::filesystem::path& path);
std::vector<unsigned char> pgm_pixels(const ScalarField& f, int channel);

}  // namespace mdn
