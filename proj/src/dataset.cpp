#include "advcma/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace advcma {

std::string_view to_string(DatasetKind kind) {
  return kind == DatasetKind::idx_gray ? "idx_gray" : "png_dir";
}

namespace {

std::uint32_t read_be32(std::string_view bytes, std::size_t offset, const char* what) {
  if (bytes.size() < offset + 4) {
    throw DatasetError(std::string(what) + ": truncated header (" + std::to_string(bytes.size()) +
                       " bytes)");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

std::string hex(std::uint32_t v) {
  std::ostringstream out;
  out << "0x" << std::hex << std::setfill('0') << std::setw(8) << v;
  return out.str();
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

Dataset parse_idx(std::string_view image_bytes, std::string_view label_bytes) {
  const std::uint32_t image_magic = read_be32(image_bytes, 0, "image file");
  if (image_magic != kIdxImageMagic) {
    throw DatasetError("image file has magic " + hex(image_magic) + ", expected " + hex(kIdxImageMagic));
  }
  const std::uint32_t label_magic = read_be32(label_bytes, 0, "label file");
  if (label_magic != kIdxLabelMagic) {
    throw DatasetError("label file has magic " + hex(label_magic) + ", expected " + hex(kIdxLabelMagic));
  }
  const std::uint32_t count = read_be32(image_bytes, 4, "image file");
  const std::uint32_t rows = read_be32(image_bytes, 8, "image file");
  const std::uint32_t cols = read_be32(image_bytes, 12, "image file");
  const std::uint32_t label_count = read_be32(label_bytes, 4, "label file");
  if (count != label_count) {
    throw DatasetError("image file holds " + std::to_string(count) + " items but label file holds " +
                       std::to_string(label_count));
  }
  const std::size_t plane = std::size_t{rows} * cols;
  const std::size_t image_need = 16 + plane * count;
  if (image_bytes.size() < image_need) {
    throw DatasetError("image file truncated: " + std::to_string(image_bytes.size()) + " bytes, need " +
                       std::to_string(image_need));
  }
  if (label_bytes.size() < 8 + std::size_t{count}) {
    throw DatasetError("label file truncated: " + std::to_string(label_bytes.size()) + " bytes, need " +
                       std::to_string(8 + std::size_t{count}));
  }

  Dataset d;
  d.kind = DatasetKind::idx_gray;
  d.channels = 1;
  d.height = rows;
  d.width = cols;
  d.images.reserve(count);
  d.labels.reserve(count);
  const auto* pixels = reinterpret_cast<const unsigned char*>(image_bytes.data() + 16);
  const auto* labels = reinterpret_cast<const unsigned char*>(label_bytes.data() + 8);
  for (std::size_t i = 0; i < count; ++i) {
    Image img(1, rows, cols);
    for (std::size_t p = 0; p < plane; ++p) img.values[p] = pixels[i * plane + p] / 255.0;
    d.images.push_back(std::move(img));
    d.labels.emplace_back(labels[i]);
  }
  return d;
}

Dataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  Dataset d = parse_idx(slurp(images), slurp(labels));
  d.label_source = labels.string();
  return d;
}

Dataset ingest_png_dir(const std::filesystem::path& dir) {
  const auto csv = dir / "labels.csv";
  std::ifstream in(csv);
  if (!in) throw DatasetError("PNG directory " + dir.string() + " has no labels.csv");
  Dataset d;
  d.kind = DatasetKind::png_dir;
  d.label_source = csv.string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw DatasetError(csv.string() + ":" + std::to_string(line_no) + ": expected 'file,label'");
    }
    const std::string file = line.substr(0, comma);
    const std::string label_text = line.substr(comma + 1);
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(label_text, &used);
      if (used != label_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      if (line_no == 1) continue;  // header
      throw DatasetError(csv.string() + ":" + std::to_string(line_no) + ": bad label '" + label_text + "'");
    }
    Image img = read_png(dir / file);
    if (d.images.empty()) {
      d.channels = img.channels;
      d.height = img.height;
      d.width = img.width;
    } else if (img.channels != d.channels || img.height != d.height || img.width != d.width) {
      throw DatasetError(file + " has shape " + img.shape_string() + ", expected " +
                         d.images.front().shape_string());
    }
    d.images.push_back(std::move(img));
    d.labels.emplace_back(label);
  }
  return d;
}

std::string encode_idx_images(const std::vector<Image>& images) {
  std::string out;
  put_be32(out, kIdxImageMagic);
  put_be32(out, static_cast<std::uint32_t>(images.size()));
  const std::size_t rows = images.empty() ? 0 : images.front().height;
  const std::size_t cols = images.empty() ? 0 : images.front().width;
  put_be32(out, static_cast<std::uint32_t>(rows));
  put_be32(out, static_cast<std::uint32_t>(cols));
  for (const Image& img : images) {
    if (img.channels != 1 || img.height != rows || img.width != cols) {
      throw DatasetError("IDX images must be grayscale and share one shape");
    }
    for (double v : img.values) out.push_back(static_cast<char>(to_byte(v)));
  }
  return out;
}

std::string encode_idx_labels(const std::vector<Label>& labels) {
  std::string out;
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (Label l : labels) {
    if (l.value < 0 || l.value > 255) throw DatasetError("IDX labels must fit in one byte");
    out.push_back(static_cast<char>(l.value));
  }
  return out;
}

}  // namespace advcma
