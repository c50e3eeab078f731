#include "rosd/tensor_store.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "rosd/errors.hpp"

namespace rosd {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicSize = 6;
constexpr std::size_t kPreambleSize = 10;  // magic + version + u16 header length
constexpr std::size_t kAlign = 64;

std::string at_offset(const fs::path& path, std::size_t offset) {
  return path.string() + " at byte " + std::to_string(offset);
}

// Minimal reader for the Python dict literal in an NPY header.
class HeaderParser {
 public:
  HeaderParser(std::string_view text, const fs::path& path) : text_(text), path_(path) {}

  void parse(std::string& descr, bool& fortran_order, std::vector<std::size_t>& shape) {
    bool seen_descr = false;
    bool seen_order = false;
    bool seen_shape = false;
    skip_ws();
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = parse_string();
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        descr = parse_string();
        seen_descr = true;
      } else if (key == "fortran_order") {
        fortran_order = parse_bool();
        seen_order = true;
      } else if (key == "shape") {
        shape = parse_tuple();
        seen_shape = true;
      } else {
        fail("unexpected header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws();
      expect('}');
      break;
    }
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters after header dict");
    if (!seen_descr || !seen_order || !seen_shape) fail("header must contain descr, fortran_order and shape");
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::MalformedHeader, what + " (" + at_offset(path_, kPreambleSize + pos_) + ")");
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n')) ++pos_;
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string parse_string() {
    const char quote = peek();
    if (quote != '\'' && quote != '"') fail("expected quoted string");
    ++pos_;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != quote) ++pos_;
    if (pos_ >= text_.size()) fail("unterminated string");
    std::string out(text_.substr(start, pos_ - start));
    ++pos_;
    return out;
  }

  bool parse_bool() {
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail("expected True or False");
  }

  std::vector<std::size_t> parse_tuple() {
    std::vector<std::size_t> dims;
    expect('(');
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return dims;
      }
      if (peek() < '0' || peek() > '9') fail("expected shape dimension");
      std::uint64_t value = 0;
      while (peek() >= '0' && peek() <= '9') {
        value = value * 10 + static_cast<std::uint64_t>(peek() - '0');
        if (value > (std::uint64_t{1} << 40)) fail("shape dimension too large");
        ++pos_;
      }
      dims.push_back(static_cast<std::size_t>(value));
      skip_ws();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != ')') {
        fail("expected ',' or ')' in shape");
      }
    }
  }

  std::string_view text_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

std::string shape_literal(std::span<const std::size_t> shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  if (shape.size() == 1) out += ",";
  out += ")";
  return out;
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0x0000ff00u) | ((v << 8) & 0x00ff0000u) | (v << 24);
}

fs::path temp_sibling(const fs::path& path) {
  static std::atomic<std::uint64_t> counter{0};
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  return path.parent_path() /
         ("." + path.filename().string() + ".tmp." + std::to_string(tid) + "." + std::to_string(counter++));
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view contents) {
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      fs::remove(tmp, ignored);
      throw Error(ErrorCode::IoFailure, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw Error(ErrorCode::IoFailure, "cannot rename into " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::error_code ec;
  if (fs::is_directory(path, ec)) throw Error(ErrorCode::IoFailure, path.string() + " is a directory");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed for " + path.string());
  return std::move(buffer).str();
}

NpyArray read_npy(const fs::path& path, std::size_t expected_rank) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kPreambleSize || std::memcmp(bytes.data(), kMagic, kMagicSize) != 0) {
    throw Error(ErrorCode::MalformedHeader, "missing NPY magic (" + at_offset(path, 0) + ")");
  }
  const auto major = static_cast<unsigned char>(bytes[6]);
  const auto minor = static_cast<unsigned char>(bytes[7]);
  if (major != 1 || minor != 0) {
    throw Error(ErrorCode::MalformedHeader, "unsupported NPY version " + std::to_string(major) + "." +
                                                std::to_string(minor) + " (" + at_offset(path, 6) + ")");
  }
  const std::size_t header_len =
      static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
  if (kPreambleSize + header_len > bytes.size()) {
    throw Error(ErrorCode::MalformedHeader, "header length exceeds file size (" + at_offset(path, 8) + ")");
  }

  std::string descr;
  bool fortran_order = true;
  std::vector<std::size_t> shape;
  HeaderParser(std::string_view(bytes).substr(kPreambleSize, header_len), path).parse(descr, fortran_order, shape);

  if (descr != "<f4") {
    throw Error(ErrorCode::MalformedHeader, "dtype '" + descr + "' is not '<f4' (" + at_offset(path, kPreambleSize) + ")");
  }
  if (fortran_order) {
    throw Error(ErrorCode::MalformedHeader, "fortran_order arrays are not supported (" +
                                                at_offset(path, kPreambleSize) + ")");
  }
  if (expected_rank != 0 && shape.size() != expected_rank) {
    throw Error(ErrorCode::MalformedHeader, "expected " + std::to_string(expected_rank) + " axes, header has " +
                                                std::to_string(shape.size()) + " (" + at_offset(path, kPreambleSize) +
                                                ")");
  }

  std::size_t count = 1;
  for (std::size_t dim : shape) count *= dim;
  const std::size_t data_offset = kPreambleSize + header_len;
  const std::size_t data_bytes = bytes.size() - data_offset;
  if (data_bytes != count * sizeof(float)) {
    throw Error(ErrorCode::ShapeMismatch, "header shape " + shape_literal(shape) + " needs " + std::to_string(count) +
                                              " floats, found " + std::to_string(data_bytes) + " bytes (" +
                                              at_offset(path, data_offset) + ")");
  }

  NpyArray array;
  array.shape = std::move(shape);
  array.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t raw;
    std::memcpy(&raw, bytes.data() + data_offset + i * sizeof(float), sizeof(raw));
    if constexpr (std::endian::native == std::endian::big) raw = byteswap32(raw);
    float value;
    std::memcpy(&value, &raw, sizeof(value));
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::NonFiniteValue,
                  "element " + std::to_string(i) + " is not finite (" + at_offset(path, data_offset + i * 4) + ")");
    }
    array.values[i] = value;
  }
  return array;
}

void write_npy(const fs::path& path, std::span<const std::size_t> shape, std::span<const float> values) {
  std::size_t count = 1;
  for (std::size_t dim : shape) count *= dim;
  if (count != values.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + shape_literal(shape) + " does not match " +
                                              std::to_string(values.size()) + " values for " + path.string());
  }

  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape_literal(shape) + ", }";
  // Pad with spaces so that the data starts on an aligned boundary; the
  // header always ends with a newline.
  const std::size_t unpadded = kPreambleSize + dict.size() + 1;
  dict.append((kAlign - unpadded % kAlign) % kAlign, ' ');
  dict.push_back('\n');

  std::string out;
  out.reserve(kPreambleSize + dict.size() + values.size() * sizeof(float));
  out.append(kMagic, kMagicSize);
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(dict.size() & 0xff));
  out.push_back(static_cast<char>((dict.size() >> 8) & 0xff));
  out += dict;
  for (float v : values) {
    std::uint32_t raw;
    std::memcpy(&raw, &v, sizeof(raw));
    if constexpr (std::endian::native == std::endian::big) raw = byteswap32(raw);
    char buf[4];
    std::memcpy(buf, &raw, sizeof(buf));
    out.append(buf, sizeof(buf));
  }
  write_file_atomic(path, out);
}

void check_invariants(const FeatureTensor& tensor) {
  if (tensor.height == 0 || tensor.width == 0 || tensor.depth == 0) {
    throw Error(ErrorCode::ShapeMismatch, "tensor dimensions must be positive");
  }
  if (tensor.values.size() != tensor.height * tensor.width * tensor.depth) {
    throw Error(ErrorCode::ShapeMismatch, "tensor holds " + std::to_string(tensor.values.size()) +
                                              " values for shape (" + std::to_string(tensor.height) + ", " +
                                              std::to_string(tensor.width) + ", " + std::to_string(tensor.depth) + ")");
  }
  for (std::size_t i = 0; i < tensor.values.size(); ++i) {
    if (!std::isfinite(tensor.values[i])) {
      throw Error(ErrorCode::NonFiniteValue, "tensor element " + std::to_string(i) + " is not finite");
    }
  }
}

FeatureTensor load_tensor(const fs::path& path, std::string layer_tag) {
  NpyArray array = read_npy(path, 3);
  FeatureTensor tensor;
  tensor.height = array.shape[0];
  tensor.width = array.shape[1];
  tensor.depth = array.shape[2];
  if (tensor.height == 0 || tensor.width == 0 || tensor.depth == 0) {
    throw Error(ErrorCode::ShapeMismatch, "zero-sized axis in " + path.string());
  }
  tensor.values = std::move(array.values);
  tensor.layer_tag = std::move(layer_tag);
  return tensor;
}

void save_tensor(const FeatureTensor& tensor, const fs::path& path) {
  check_invariants(tensor);
  const std::size_t shape[] = {tensor.height, tensor.width, tensor.depth};
  write_npy(path, shape, tensor.values);
}

GlobalDescriptor GlobalDescriptor::make(std::string image_id, std::vector<float> vector) {
  if (vector.empty()) throw Error(ErrorCode::ShapeMismatch, "global descriptor for " + image_id + " is empty");
  double sq = 0.0;
  for (float v : vector) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "global descriptor for " + image_id);
    sq += static_cast<double>(v) * v;
  }
  GlobalDescriptor out;
  out.image_id = std::move(image_id);
  out.vector = std::move(vector);
  out.norm = std::sqrt(sq);
  return out;
}

GlobalDescriptor load_descriptor(const fs::path& path, std::string image_id) {
  NpyArray array = read_npy(path, 1);
  return GlobalDescriptor::make(std::move(image_id), std::move(array.values));
}

void save_descriptor(const GlobalDescriptor& descriptor, const fs::path& path) {
  const std::size_t shape[] = {descriptor.vector.size()};
  write_npy(path, shape, descriptor.vector);
}

}  // namespace rosd
