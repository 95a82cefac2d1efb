#pragma once

#include <string>

namespace topodiff {

std::string read_text_file(const std::string& path);

/// Writes via a temporary sibling file and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace topodiff
