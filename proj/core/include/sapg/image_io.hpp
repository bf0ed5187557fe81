#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sapg/image.hpp"

namespace sapg::io {

/// Key/value pairs embedded in output files (config hash, seed, ...).
using Metadata = std::vector<std::pair<std::string, std::string>>;

/// Binary PGM (P5). Values are rounded and clamped to [0, maxval]; maxval <= 255
/// writes 8-bit samples, larger values 16-bit big-endian. Metadata goes into
/// comment lines.
void write_pgm(const std::filesystem::path& path, const ImageVector& image, int maxval = 255,
               const Metadata& metadata = {});
ImageVector read_pgm(const std::filesystem::path& path);

/// Raw little-endian float64 array plus `<path>.json` sidecar holding
/// {shape, domain_tag, dtype, metadata}.
void write_raw(const std::filesystem::path& path, const ImageVector& image, const Metadata& metadata = {});
ImageVector read_raw(const std::filesystem::path& path);

}  // namespace sapg::io
