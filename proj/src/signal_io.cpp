#include "pdcycon/signal_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string_view>

#include "pdcycon/error.hpp"

namespace pdcycon {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonFiniteSample: return "NonFiniteSample";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::NoZeroCrossing: return "NoZeroCrossing";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InputTooSmall: return "InputTooSmall";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::PeakAxisMismatch: return "PeakAxisMismatch";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NumericFailure: return "NumericFailure";
  }
  return "Unknown";
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

bool parse_double(std::string_view text, double& value) {
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc{} && ptr == end;
}

void write_matrix(std::string& out, const Matrix<float>& m) {
  for (float v : m.values) put_le(out, v);
}

Matrix<float> read_matrix(const char*& p, std::size_t rows, std::size_t cols) {
  Matrix<float> m(rows, cols);
  for (auto& v : m.values) {
    v = get_le<float>(p);
    p += sizeof(float);
  }
  return m;
}

}  // namespace

void RawMeasurement::validate() const {
  for (std::size_t ph = 0; ph < kPhaseCount; ++ph) {
    if (samples[ph].size() != n_samples) {
      throw Error(ErrorCode::DimMismatch, "measurement " + id + ": phase " + std::to_string(ph) +
                                              " has " + std::to_string(samples[ph].size()) +
                                              " samples, expected " + std::to_string(n_samples));
    }
  }
  if (label != 0 && label != 1) {
    throw Error(ErrorCode::MalformedRow, "measurement " + id + ": label must be 0 or 1");
  }
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());

  const auto base = path.parent_path();
  Manifest manifest;
  manifest.class_counts = {{0, 0}, {1, 0}};
  std::set<std::string> seen;

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (!header_seen) {
      if (fields.size() != 3 || fields[0] != "id" || fields[1] != "path" || fields[2] != "label") {
        throw Error(ErrorCode::MalformedRow, "line " + std::to_string(line_no) + ": expected header id,path,label");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(line_no));
    }
    if (fields[2] != "0" && fields[2] != "1") {
      throw Error(ErrorCode::MalformedRow,
                  "line " + std::to_string(line_no) + ": label '" + std::string(fields[2]) + "' not in {0,1}");
    }
    ManifestEntry entry;
    entry.id = std::string(fields[0]);
    entry.path = std::filesystem::path(std::string(fields[1]));
    if (entry.path.is_relative()) entry.path = base / entry.path;
    entry.label = fields[2] == "1" ? 1 : 0;
    if (!seen.insert(entry.id).second) throw Error(ErrorCode::DuplicateId, entry.id);
    ++manifest.class_counts[entry.label];
    manifest.entries.push_back(std::move(entry));
  }
  if (!header_seen) {
    throw Error(ErrorCode::MalformedRow, "line 1: missing header id,path,label");
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ostringstream out;
  out << "id,path,label\n";
  const auto base = path.parent_path();
  for (const auto& e : manifest.entries) {
    auto p = e.path;
    if (!base.empty()) {
      // Store paths under the manifest directory relative to it.
      const auto abs_p = std::filesystem::absolute(p).lexically_normal();
      const auto abs_base = std::filesystem::absolute(base).lexically_normal();
      const auto rel = abs_p.lexically_relative(abs_base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
      else p = abs_p;
    }
    out << e.id << ',' << p.generic_string() << ',' << e.label << '\n';
  }
  spit(path, out.str());
}

RawMeasurement read_measurement(const std::filesystem::path& path, const ManifestEntry& meta) {
  RawMeasurement m;
  m.id = meta.id;
  m.label = meta.label;

  if (path.extension() == ".csv") {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingFile, path.string());
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto fields = split_csv(line);
      if (fields.size() != kPhaseCount) {
        throw Error(ErrorCode::MalformedRow, path.string() + ": row " + std::to_string(row + 1));
      }
      for (std::size_t ph = 0; ph < kPhaseCount; ++ph) {
        double v = 0.0;
        if (!parse_double(fields[ph], v)) {
          throw Error(ErrorCode::MalformedRow, path.string() + ": row " + std::to_string(row + 1));
        }
        if (!std::isfinite(v)) {
          throw Error(ErrorCode::NonFiniteSample, path.string() + ": index " + std::to_string(row));
        }
        m.samples[ph].push_back(v);
      }
      ++row;
    }
    m.n_samples = row;
    return m;
  }

  const auto bytes = slurp(path);
  if (bytes.size() < 8 || bytes.compare(0, 4, "PDMS") != 0) throw Error(ErrorCode::BadMagic, path.string());
  const auto n = static_cast<std::size_t>(get_le<std::uint32_t>(bytes.data() + 4));
  const std::size_t expected = 8 + kPhaseCount * n * sizeof(float);
  if (bytes.size() < expected) {
    throw Error(ErrorCode::TruncatedPayload, path.string() + ": header declares " + std::to_string(n) +
                                                 " samples per phase, payload holds " +
                                                 std::to_string((bytes.size() - 8) / sizeof(float)) + " values");
  }
  if (bytes.size() > expected) {
    throw Error(ErrorCode::DimMismatch, path.string() + ": trailing bytes after declared payload");
  }
  m.n_samples = n;
  const char* p = bytes.data() + 8;
  for (std::size_t ph = 0; ph < kPhaseCount; ++ph) {
    auto& out = m.samples[ph];
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i, p += sizeof(float)) {
      const float v = get_le<float>(p);
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFiniteSample, path.string() + ": index " + std::to_string(ph * n + i));
      }
      out[i] = v;
    }
  }
  return m;
}

void write_measurement(const std::filesystem::path& path, const RawMeasurement& m) {
  m.validate();
  std::string out;
  out.reserve(8 + kPhaseCount * m.n_samples * sizeof(float));
  out.append("PDMS");
  put_le(out, static_cast<std::uint32_t>(m.n_samples));
  for (const auto& phase : m.samples) {
    for (double v : phase) put_le(out, static_cast<float>(v));
  }
  spit(path, out);
}

std::size_t feature_file_size(std::size_t n_peaks, std::size_t w_t, std::size_t f_bins) {
  return kFeatureHeaderBytes + 2 * (n_peaks * w_t + n_peaks * f_bins) * sizeof(float) + 1;
}

void write_features(const std::filesystem::path& path, const MeasurementFeatures& f) {
  const std::size_t n_peaks = f.td_pos.rows;
  const std::size_t w_t = f.td_pos.cols;
  const std::size_t f_bins = f.fd_pos.cols;
  auto check = [&](const Matrix<float>& m, std::size_t cols, const char* name) {
    if (m.rows != n_peaks || m.cols != cols || m.values.size() != m.rows * m.cols) {
      throw Error(ErrorCode::DimMismatch, std::string(name) + " is " + std::to_string(m.rows) + "x" +
                                              std::to_string(m.cols) + ", header expects " +
                                              std::to_string(n_peaks) + "x" + std::to_string(cols));
    }
    for (float v : m.values) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NumericFailure, std::string(name) + " has non-finite values");
    }
  };
  check(f.td_pos, w_t, "td_pos");
  check(f.td_neg, w_t, "td_neg");
  check(f.fd_pos, f_bins, "fd_pos");
  check(f.fd_neg, f_bins, "fd_neg");
  if (f.label != 0 && f.label != 1) throw Error(ErrorCode::MalformedRow, "label must be 0 or 1");

  std::string out;
  out.reserve(feature_file_size(n_peaks, w_t, f_bins));
  out.append("PDCF");
  put_le(out, kFeatureFileVersion);
  put_le(out, static_cast<std::uint32_t>(n_peaks));
  put_le(out, static_cast<std::uint32_t>(w_t));
  put_le(out, static_cast<std::uint32_t>(f_bins));
  write_matrix(out, f.td_pos);
  write_matrix(out, f.td_neg);
  write_matrix(out, f.fd_pos);
  write_matrix(out, f.fd_neg);
  out.push_back(static_cast<char>(f.label));
  spit(path, out);
}

MeasurementFeatures read_features(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < kFeatureHeaderBytes || bytes.compare(0, 4, "PDCF") != 0) {
    throw Error(ErrorCode::BadMagic, path.string());
  }
  const auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kFeatureFileVersion) {
    throw Error(ErrorCode::BadMagic, path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::size_t n_peaks = get_le<std::uint32_t>(bytes.data() + 6);
  const std::size_t w_t = get_le<std::uint32_t>(bytes.data() + 10);
  const std::size_t f_bins = get_le<std::uint32_t>(bytes.data() + 14);
  if (bytes.size() != feature_file_size(n_peaks, w_t, f_bins)) {
    throw Error(ErrorCode::DimMismatch, path.string() + ": header " + std::to_string(n_peaks) + "/" +
                                            std::to_string(w_t) + "/" + std::to_string(f_bins) +
                                            " implies " + std::to_string(feature_file_size(n_peaks, w_t, f_bins)) +
                                            " bytes, file has " + std::to_string(bytes.size()));
  }
  MeasurementFeatures f;
  f.id = path.stem().string();
  const char* p = bytes.data() + kFeatureHeaderBytes;
  f.td_pos = read_matrix(p, n_peaks, w_t);
  f.td_neg = read_matrix(p, n_peaks, w_t);
  f.fd_pos = read_matrix(p, n_peaks, f_bins);
  f.fd_neg = read_matrix(p, n_peaks, f_bins);
  f.label = static_cast<unsigned char>(*p);
  if (f.label != 0 && f.label != 1) throw Error(ErrorCode::MalformedRow, path.string() + ": label byte");
  return f;
}

}  // namespace pdcycon
