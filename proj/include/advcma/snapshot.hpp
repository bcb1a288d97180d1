#pragma once

// Binary engine snapshots. Little-endian, doubles stored bit-exact so a
// restored engine continues exactly where the saved one stopped.

#include "advcma/attack.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace advcma {

class SnapshotError : public std::runtime_error {
 public:
  explicit SnapshotError(const std::string& what) : std::runtime_error(what) {}
};

std::string encode_snapshot(const EngineSnapshot& snapshot);
EngineSnapshot decode_snapshot(std::string_view bytes);

/// Writes through a temporary file and rename, so readers never see a torn file.
void write_snapshot(const std::filesystem::path& path, const EngineSnapshot& snapshot);
EngineSnapshot read_snapshot(const std::filesystem::path& path);

}  // namespace advcma
