#pragma once

#include <cstdint>
#include <string>

namespace nadjust {

/// Fixed 9-significant-digit formatting used by every text output so runs
/// diff cleanly.
std::string fmt_g9(double v);

std::string read_file(const std::string& path);

/// Write to a temp file in the same directory, then rename into place.
void write_file_atomic(const std::string& path, const std::string& content);

/// FNV-1a 64-bit, hex-encoded; used to fingerprint config files in manifests.
std::string fnv1a64_hex(const std::string& bytes);

}  // namespace nadjust
