#include "advcma/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace advcma {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'C', 'M', 'A', 'S', 'N'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "snapshot format assumes little-endian hosts");

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void vec(const Vector& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  void mat(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), sizeof(double) * v.size());
  }
  void image(const Image& img) {
    u64(img.channels);
    u64(img.height);
    u64(img.width);
    doubles(img.values);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  void raw(void* p, std::size_t n) {
    if (n > in_.size() - pos_) {
      throw SnapshotError("snapshot truncated at byte " + std::to_string(pos_));
    }
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::int32_t i32() { std::int32_t v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }
  std::size_t count(std::size_t element) {
    const std::uint64_t n = u64();
    if (element != 0 && n > (in_.size() - pos_) / element) {
      throw SnapshotError("snapshot length field " + std::to_string(n) + " exceeds the file");
    }
    return static_cast<std::size_t>(n);
  }
  Vector vec() {
    Vector v(static_cast<Eigen::Index>(count(sizeof(double))));
    raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
    return v;
  }
  Matrix mat() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = count(0);
    if (rows != 0 && cols > (in_.size() - pos_) / sizeof(double) / rows) {
      throw SnapshotError("snapshot matrix exceeds the file");
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }
  std::vector<double> doubles() {
    std::vector<double> v(count(sizeof(double)));
    raw(v.data(), sizeof(double) * v.size());
    return v;
  }
  Image image() {
    Image img;
    img.channels = u64();
    img.height = u64();
    img.width = u64();
    img.values = doubles();
    if (img.values.size() != img.channels * img.height * img.width) {
      throw SnapshotError("snapshot image shape does not match its values");
    }
    return img;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_snapshot(const EngineSnapshot& s) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);

  w.vec(s.state.mean);
  w.mat(s.state.covariance);
  w.f64(s.state.step_size);
  w.vec(s.state.path_cov);
  w.vec(s.state.path_step);
  w.u64(s.state.generation);
  w.f64(s.state.chi_n);
  w.mat(s.state.basis);
  w.vec(s.state.axis_lengths);
  w.u64(s.state.decomposed_at);

  w.u64(s.completed_generations);
  w.u64(s.population.generation);
  w.u64(s.population.candidates.size());
  for (std::size_t i = 0; i < s.population.candidates.size(); ++i) {
    w.vec(s.population.candidates[i]);
    w.vec(s.population.raw_steps[i]);
  }
  w.u64(s.labels.size());
  for (Label l : s.labels) w.i32(l.value);

  w.u64(s.queries_total);
  w.u64(s.queries_per_generation.size());
  for (std::uint64_t q : s.queries_per_generation) w.u64(q);

  w.u32(s.has_best ? 1 : 0);
  w.f64(s.best_fitness);
  w.image(s.best_image);
  w.i32(s.best_label.value);
  w.doubles(s.history);
  w.u64(s.fallback_generations);
  return w.take();
}

EngineSnapshot decode_snapshot(std::string_view bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw SnapshotError("not an engine snapshot");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw SnapshotError("unsupported snapshot version " + std::to_string(version));
  }

  EngineSnapshot s;
  s.state.mean = r.vec();
  s.state.covariance = r.mat();
  s.state.step_size = r.f64();
  s.state.path_cov = r.vec();
  s.state.path_step = r.vec();
  s.state.generation = r.u64();
  s.state.chi_n = r.f64();
  s.state.basis = r.mat();
  s.state.axis_lengths = r.vec();
  s.state.decomposed_at = r.u64();

  s.completed_generations = r.u64();
  s.population.generation = r.u64();
  const std::size_t count = r.count(16);
  for (std::size_t i = 0; i < count; ++i) {
    s.population.candidates.push_back(r.vec());
    s.population.raw_steps.push_back(r.vec());
  }
  const std::size_t labels = r.count(sizeof(std::int32_t));
  for (std::size_t i = 0; i < labels; ++i) s.labels.emplace_back(r.i32());

  s.queries_total = r.u64();
  const std::size_t gens = r.count(sizeof(std::uint64_t));
  for (std::size_t i = 0; i < gens; ++i) s.queries_per_generation.push_back(r.u64());

  s.has_best = r.u32() != 0;
  s.best_fitness = r.f64();
  s.best_image = r.image();
  s.best_label = Label(r.i32());
  s.history = r.doubles();
  s.fallback_generations = r.u64();
  if (!r.done()) throw SnapshotError("trailing bytes after snapshot");
  return s;
}

void write_snapshot(const std::filesystem::path& path, const EngineSnapshot& snapshot) {
  const std::string bytes = encode_snapshot(snapshot);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw SnapshotError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw SnapshotError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

EngineSnapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SnapshotError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_snapshot(buf.str());
}

}  // namespace advcma
