#pragma once

// Feature and label files.
//
// Binary layout ("CAJF"): 4 magic bytes, rows and cols as little-endian
// uint32, then rows*cols little-endian IEEE-754 doubles in row-major order.
// CSV: optional header row, comma-separated decimals, one sample per row.
// Paths ending in ".csv" use CSV, everything else the binary layout.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cajnet/error.hpp"
#include "cajnet/matrix.hpp"

namespace cajnet {

inline constexpr std::array<char, 4> kFeatureMagic{'C', 'A', 'J', 'F'};
inline constexpr std::size_t kFeatureHeaderBytes = 12;

namespace detail {

inline bool has_csv_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".csv";
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f64(std::string& buf, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline std::uint64_t get_le(const std::string& buf, std::size_t offset, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[offset + i])) << (8 * i);
  return v;
}

inline std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error("write failed for " + path.string());
}

inline Matrix decode_binary(const std::string& bytes, const std::string& name) {
  if (bytes.size() < kFeatureHeaderBytes) throw format_error(name + ": truncated header");
  if (!std::equal(kFeatureMagic.begin(), kFeatureMagic.end(), bytes.begin())) {
    throw format_error(name + ": bad magic, expected CAJF");
  }
  const auto rows = static_cast<std::size_t>(get_le(bytes, 4, 4));
  const auto cols = static_cast<std::size_t>(get_le(bytes, 8, 4));
  const std::size_t expected = kFeatureHeaderBytes + rows * cols * 8;
  if (bytes.size() != expected) {
    throw format_error(name + ": expected " + std::to_string(expected) + " bytes for " + std::to_string(rows) + "x" +
                       std::to_string(cols) + ", found " + std::to_string(bytes.size()));
  }
  if (rows == 0 || cols == 0) throw format_error(name + ": empty matrix");
  std::vector<double> data(rows * cols);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<double>(get_le(bytes, kFeatureHeaderBytes + 8 * i, 8));
    if (!std::isfinite(data[i])) {
      throw data_error(name + ": non-finite value at row " + std::to_string(i / cols) + ", col " +
                       std::to_string(i % cols));
    }
  }
  return {rows, cols, std::move(data)};
}

inline Matrix decode_csv(const std::string& text, const std::string& name) {
  std::vector<double> data;
  std::size_t rows = 0, cols = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_possible = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_commas(view);
    double first = 0.0;
    if (header_possible && !parse_double(fields[0], first)) {
      // A header row carries no numbers in its first field; all later rows must.
      header_possible = false;
      if (std::none_of(fields.begin(), fields.end(), [](std::string_view f) {
            double v;
            return parse_double(f, v);
          })) {
        continue;
      }
    }
    header_possible = false;
    if (cols == 0) cols = fields.size();
    if (fields.size() != cols) {
      throw format_error(name + ": line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                         " fields, expected " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      double v = 0.0;
      if (!parse_double(fields[c], v)) {
        throw format_error(name + ": unparsable value at row " + std::to_string(rows) + ", col " + std::to_string(c));
      }
      if (!std::isfinite(v)) {
        throw data_error(name + ": non-finite value at row " + std::to_string(rows) + ", col " + std::to_string(c));
      }
      data.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw format_error(name + ": no data rows");
  return {rows, cols, std::move(data)};
}

inline std::string encode_binary(const Matrix& m) {
  std::string buf(kFeatureMagic.begin(), kFeatureMagic.end());
  buf.reserve(kFeatureHeaderBytes + 8 * m.size());
  put_u32(buf, static_cast<std::uint32_t>(m.rows()));
  put_u32(buf, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) put_f64(buf, v);
  return buf;
}

inline std::string encode_csv(const Matrix& m) {
  std::string out;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    if (c) out += ',';
    out += 'f' + std::to_string(c);
  }
  out += '\n';
  std::array<char, 32> buf{};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      // Shortest representation that parses back to the same double.
      const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), m(r, c));
      out.append(buf.data(), res.ptr);
    }
    out += '\n';
  }
  return out;
}

}  // namespace detail

inline Matrix load_feature_file(const std::filesystem::path& path) {
  const std::string bytes = detail::read_all(path);
  return detail::has_csv_extension(path) ? detail::decode_csv(bytes, path.string())
                                         : detail::decode_binary(bytes, path.string());
}

inline void save_feature_file(const Matrix& m, const std::filesystem::path& path) {
  if (m.rows() < 1 || m.cols() < 1) throw data_error("refusing to save an empty matrix to " + path.string());
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() || m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw data_error("matrix too large for the feature format: " + path.string());
  }
  detail::write_all(path, detail::has_csv_extension(path) ? detail::encode_csv(m) : detail::encode_binary(m));
}

inline Labels load_labels(const std::filesystem::path& path, std::size_t num_classes) {
  const std::string text = detail::read_all(path);
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();

  Labels labels;
  labels.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view s = detail::trim(lines[i]);
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
      throw data_error(path.string() + ": line " + std::to_string(i + 1) + " is not an integer");
    }
    if (v < 0 || static_cast<unsigned long long>(v) >= num_classes) {
      throw data_error(path.string() + ": label " + std::to_string(v) + " at line " + std::to_string(i + 1) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
    labels.push_back(static_cast<int>(v));
  }
  if (labels.empty()) throw data_error(path.string() + ": no labels");
  return labels;
}

inline void save_labels(const Labels& labels, const std::filesystem::path& path) {
  std::string out;
  for (int y : labels) {
    out += std::to_string(y);
    out += '\n';
  }
  detail::write_all(path, out);
}

}  // namespace cajnet
