#include "pdcycon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pdcycon/error.hpp"

namespace pdcycon::nn {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
      put(std::bit_cast<U>(value));
    } else {
      for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
  }
  void put_bytes(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void put_doubles(const std::vector<double>& v) {
    for (double d : v) put(d);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  template <typename T>
  T get() {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
      return std::bit_cast<T>(get<U>());
    } else {
      need(sizeof(T));
      T value = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
      }
      pos_ += sizeof(T);
      return value;
    }
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> get_doubles(std::size_t n) {
    need(n * 8);
    std::vector<double> v(n);
    for (auto& d : v) d = get<double>();
    return v;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::TruncatedPayload, source_ + ": checkpoint ends early");
    }
  }
  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const TensorBlob* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(std::string(kMagic, 4));
  w.put(kCheckpointVersion);
  w.put(ckpt.fold);
  w.put(ckpt.seed);
  w.put(ckpt.epoch);
  w.put(ckpt.metric);
  w.put(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.put_bytes(ckpt.config_text);
  w.put(static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& b : ckpt.blobs) {
    if (b.data.size() != shape_size(b.shape)) {
      throw Error(ErrorCode::DimMismatch, "blob " + b.name + " has " + std::to_string(b.data.size()) +
                                              " values for shape " + shape_string(b.shape));
    }
    w.put(static_cast<std::uint16_t>(b.name.size()));
    w.put_bytes(b.name);
    w.put(static_cast<std::uint8_t>(b.shape.size()));
    for (auto d : b.shape) w.put(static_cast<std::uint32_t>(d));
    w.put_doubles(b.data);
    w.put(static_cast<std::uint8_t>(b.has_optimizer_state() ? 1 : 0));
    if (b.has_optimizer_state()) {
      if (b.m.size() != b.data.size() || b.v.size() != b.data.size()) {
        throw Error(ErrorCode::DimMismatch, "blob " + b.name + " optimizer moments do not match its data");
      }
      w.put_doubles(b.m);
      w.put_doubles(b.v);
      w.put(b.step);
    }
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());

  if (r.get_bytes(4) != std::string(kMagic, 4)) throw Error(ErrorCode::BadMagic, path.string() + " is not a checkpoint");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::BadMagic, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.fold = r.get<std::uint32_t>();
  c.seed = r.get<std::uint64_t>();
  c.epoch = r.get<std::uint32_t>();
  c.metric = r.get<double>();
  c.config_text = r.get_bytes(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  c.blobs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorBlob b;
    b.name = r.get_bytes(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) b.shape.push_back(r.get<std::uint32_t>());
    const std::size_t n = shape_size(b.shape);
    b.data = r.get_doubles(n);
    if (r.get<std::uint8_t>() != 0) {
      b.m = r.get_doubles(n);
      b.v = r.get_doubles(n);
      b.step = r.get<std::uint64_t>();
    }
    c.blobs.push_back(std::move(b));
  }
  if (!r.at_end()) throw Error(ErrorCode::DimMismatch, path.string() + ": trailing bytes after checkpoint");
  return c;
}

}  // namespace pdcycon::nn
