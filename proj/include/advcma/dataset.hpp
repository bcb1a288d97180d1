#pragma once

// Labelled image sets: MNIST-style IDX pairs and PNG directories.

#include "advcma/image.hpp"
#include "advcma/label.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace advcma {

class DatasetError : public std::runtime_error {
 public:
  explicit DatasetError(const std::string& what) : std::runtime_error(what) {}
};

enum class DatasetKind { idx_gray, png_dir };
std::string_view to_string(DatasetKind kind);

struct Dataset {
  DatasetKind kind = DatasetKind::idx_gray;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Image> images;
  std::vector<Label> labels;
  std::string label_source;  // path of the labels file

  std::size_t size() const { return images.size(); }
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Big-endian IDX: images (count, rows, cols, bytes) and labels (count, bytes).
/// Pixels are scaled by 1/255. Throws DatasetError on wrong magic, truncated
/// payloads, or differing counts.
Dataset parse_idx(std::string_view image_bytes, std::string_view label_bytes);
Dataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Directory of 8-bit PNGs plus labels.csv with "file,label" rows (an optional
/// header row is skipped). All images must share one shape.
Dataset ingest_png_dir(const std::filesystem::path& dir);

/// Writes the IDX pair for a grayscale dataset; used for fixtures and tests.
std::string encode_idx_images(const std::vector<Image>& images);
std::string encode_idx_labels(const std::vector<Label>& labels);

}  // namespace advcma
