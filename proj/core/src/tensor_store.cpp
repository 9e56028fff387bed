// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltaquant/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <utility>

#include "deltaquant/error.hpp"
#include "json.hpp"

namespace deltaquant::store {

static_assert(std::endian::native == std::endian::little,
              "float payloads are copied verbatim; big-endian hosts are not supported");

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'D', 'Q', 'T', 'C'};
constexpr std::size_t kPreamble = 16;

std::size_t align_up(std::size_t n) { return (n + kAlignment - 1) / kAlignment * kAlignment; }

std::string shape_text(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return v;
}

void check_shape(const std::string& name, const Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    fail(ErrorCode::kInvalidTensor, "tensor '" + name + "' has rank " +
                                        std::to_string(shape.size()) + "; rank must be 1 or 2");
  }
}

std::uint64_t json_uint(const json& j, const char* key, const std::string& tensor) {
  if (!j.contains(key) || !j.at(key).is_number_unsigned()) {
    if (j.contains(key) && j.at(key).is_number_integer()) {
      fail(ErrorCode::kOverlap, "tensor '" + tensor + "' declares negative " + key);
    }
    fail(ErrorCode::kCorruptHeader, "tensor '" + tensor + "' lacks unsigned field '" + key + "'");
  }
  return j.at(key).get<std::uint64_t>();
}

json parse_header(std::string_view text) {
  // Duplicate keys are rejected; nlohmann would otherwise keep the last one.
  std::string top_key;
  std::set<std::string> seen_tensors;
  std::set<std::string> seen_meta;
  std::set<std::string> seen_top;
  std::string duplicate;
  json::parser_callback_t cb = [&](int depth, json::parse_event_t event, json& parsed) {
    if (event != json::parse_event_t::key) return true;
    const auto key = parsed.get<std::string>();
    if (depth == 1) {
      top_key = key;
      if (!seen_top.insert(key).second && duplicate.empty()) duplicate = key;
    } else if (depth == 2) {
      auto& seen = top_key == "tensors" ? seen_tensors : seen_meta;
      if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  json header;
  try {
    header = json::parse(text.begin(), text.end(), cb);
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptHeader, std::string("header is not valid JSON: ") + e.what());
  }
  if (!duplicate.empty()) fail(ErrorCode::kDuplicateName, "'" + duplicate + "' appears twice");
  return header;
}

}  // namespace

std::string_view to_string(DType dtype) { return dtype == DType::kF32 ? "f32" : "u8"; }

std::uint64_t element_count(const Shape& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::from_floats(Shape shape, std::vector<float> values) {
  check_shape("<unnamed>", shape);
  if (element_count(shape) != values.size()) {
    fail(ErrorCode::kInvalidTensor, "shape " + shape_text(shape) + " does not match " +
                                        std::to_string(values.size()) + " float values");
  }
  Tensor t;
  t.dtype_ = DType::kF32;
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::from_bytes(Shape shape, std::vector<std::uint8_t> bytes) {
  check_shape("<unnamed>", shape);
  Tensor t;
  t.dtype_ = DType::kU8;
  t.shape_ = std::move(shape);
  t.data_ = std::move(bytes);
  return t;
}

Tensor Tensor::from_matrix(const Matrix& m) {
  return from_floats({m.rows(), m.cols()}, std::vector<float>(m.values().begin(), m.values().end()));
}

Tensor Tensor::from_vector(std::span<const float> v) {
  return from_floats({v.size()}, std::vector<float>(v.begin(), v.end()));
}

std::size_t Tensor::nbytes() const noexcept {
  if (dtype_ == DType::kF32) return std::get<0>(data_).size() * sizeof(float);
  return std::get<1>(data_).size();
}

std::span<const float> Tensor::floats() const {
  if (dtype_ != DType::kF32) fail(ErrorCode::kDTypeMismatch, "tensor is u8, expected f32");
  return std::get<0>(data_);
}

std::span<const std::uint8_t> Tensor::bytes() const {
  if (dtype_ != DType::kU8) fail(ErrorCode::kDTypeMismatch, "tensor is f32, expected u8");
  return std::get<1>(data_);
}

std::vector<std::uint8_t> Tensor::raw() const {
  if (dtype_ == DType::kU8) return std::get<1>(data_);
  const auto& f = std::get<0>(data_);
  std::vector<std::uint8_t> out(f.size() * sizeof(float));
  if (!f.empty()) std::memcpy(out.data(), f.data(), out.size());
  return out;
}

Matrix Tensor::to_matrix() const {
  const auto f = floats();
  if (rank() == 1) return Matrix(1, shape_[0], std::vector<float>(f.begin(), f.end()));
  return Matrix(shape_[0], shape_[1], std::vector<float>(f.begin(), f.end()));
}

std::vector<float> Tensor::to_vector() const {
  const auto f = floats();
  return {f.begin(), f.end()};
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.dtype_ == b.dtype_ && a.shape_ == b.shape_ && a.raw() == b.raw();
}

const Tensor& TensorMap::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorCode::kMissingTensor, "'" + name + "'");
  return it->second;
}

void TensorMap::put(const std::string& name, Tensor tensor) {
  validate_name(name);
  tensors.insert_or_assign(name, std::move(tensor));
}

void validate_name(const std::string& name) {
  if (name.empty()) fail(ErrorCode::kInvalidTensor, "tensor name is empty");
  for (unsigned char c : name) {
    if (c < 0x20 || c > 0x7e) {
      fail(ErrorCode::kInvalidTensor, "tensor name '" + name + "' is not printable ASCII");
    }
  }
}

void validate(const TensorMap& map) {
  for (const auto& [name, t] : map.tensors) {
    validate_name(name);
    check_shape(name, t.shape());
    if (t.dtype() == DType::kF32 && t.nbytes() != t.elements() * sizeof(float)) {
      fail(ErrorCode::kInvalidTensor, "tensor '" + name + "' buffer length disagrees with shape");
    }
  }
}

std::vector<std::uint8_t> serialize(const TensorMap& map) {
  validate(map);
  json header;
  header["meta"] = json::object();
  for (const auto& [k, v] : map.meta) header["meta"][k] = v;
  header["tensors"] = json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : map.tensors) {
    json entry;
    entry["dtype"] = std::string(to_string(t.dtype()));
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["nbytes"] = t.nbytes();
    if (t.dtype() == DType::kU8) entry["elements"] = t.elements();
    header["tensors"][name] = std::move(entry);
    offset = align_up(offset + t.nbytes());
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kContainerVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t data_start = align_up(out.size());
  out.resize(data_start, 0);
  for (const auto& [name, t] : map.tensors) {
    const auto raw = t.raw();
    out.insert(out.end(), raw.begin(), raw.end());
    out.resize(data_start + align_up(out.size() - data_start), 0);
  }
  return out;
}

TensorMap deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreamble) fail(ErrorCode::kTruncatedData, "file shorter than preamble");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    fail(ErrorCode::kBadMagic, "expected 'DQTC'");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kContainerVersion) {
    fail(ErrorCode::kUnsupportedVersion, "version " + std::to_string(version));
  }
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - kPreamble) {
    fail(ErrorCode::kTruncatedData, "header length " + std::to_string(header_len) +
                                        " exceeds file size");
  }
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()) + kPreamble, header_len);
  const json header = parse_header(text);
  if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_object()) {
    fail(ErrorCode::kCorruptHeader, "header lacks a 'tensors' object");
  }

  TensorMap map;
  if (header.contains("meta")) {
    if (!header["meta"].is_object()) fail(ErrorCode::kCorruptHeader, "'meta' is not an object");
    for (const auto& [k, v] : header["meta"].items()) {
      if (!v.is_string()) fail(ErrorCode::kCorruptHeader, "meta '" + k + "' is not a string");
      map.meta[k] = v.get<std::string>();
    }
  }

  const std::size_t data_start = align_up(kPreamble + header_len);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& [name, entry] : header["tensors"].items()) {
    validate_name(name);
    if (!entry.is_object()) fail(ErrorCode::kCorruptHeader, "entry '" + name + "' is not an object");
    if (!entry.contains("dtype") || !entry["dtype"].is_string()) {
      fail(ErrorCode::kCorruptHeader, "tensor '" + name + "' lacks dtype");
    }
    const auto dtype_text = entry["dtype"].get<std::string>();
    if (dtype_text != "f32" && dtype_text != "u8") {
      fail(ErrorCode::kInvalidTensor, "tensor '" + name + "' has unknown dtype '" + dtype_text + "'");
    }
    if (!entry.contains("shape") || !entry["shape"].is_array()) {
      fail(ErrorCode::kCorruptHeader, "tensor '" + name + "' lacks shape");
    }
    Shape shape;
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_unsigned()) fail(ErrorCode::kCorruptHeader, "bad dimension in '" + name + "'");
      shape.push_back(d.get<std::uint64_t>());
    }
    check_shape(name, shape);
    const std::uint64_t offset = json_uint(entry, "offset", name);
    const std::uint64_t nbytes = json_uint(entry, "nbytes", name);
    if (offset % kAlignment != 0) {
      fail(ErrorCode::kCorruptHeader, "tensor '" + name + "' offset is not 64-byte aligned");
    }
    if (dtype_text == "f32" && nbytes != element_count(shape) * sizeof(float)) {
      fail(ErrorCode::kInvalidTensor, "tensor '" + name + "' nbytes disagrees with shape");
    }
    if (dtype_text == "u8" && json_uint(entry, "elements", name) != element_count(shape)) {
      fail(ErrorCode::kInvalidTensor, "tensor '" + name + "' element count disagrees with shape");
    }
    if (data_start + offset + nbytes > bytes.size() || offset + nbytes < offset) {
      fail(ErrorCode::kTruncatedData, "tensor '" + name + "' extends past end of file");
    }
    ranges.emplace_back(offset, offset + nbytes);

    const auto* src = bytes.data() + data_start + offset;
    if (dtype_text == "f32") {
      std::vector<float> values(nbytes / sizeof(float));
      if (nbytes) std::memcpy(values.data(), src, nbytes);
      map.tensors.emplace(name, Tensor::from_floats(std::move(shape), std::move(values)));
    } else {
      map.tensors.emplace(name, Tensor::from_bytes(std::move(shape),
                                                   std::vector<std::uint8_t>(src, src + nbytes)));
    }
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      fail(ErrorCode::kOverlap, "tensor payloads overlap");
    }
  }
  return map;
}

void save_container(const TensorMap& map, const std::filesystem::path& path) {
  const auto bytes = serialize(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

TensorMap load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void check_compatible(const TensorMap& a, const TensorMap& b) {
  std::set<std::string> names;
  for (const auto& [n, _] : a.tensors) names.insert(n);
  for (const auto& [n, _] : b.tensors) names.insert(n);
  for (const auto& name : names) {
    const auto ia = a.tensors.find(name);
    const auto ib = b.tensors.find(name);
    if (ia == a.tensors.end() || ib == b.tensors.end()) {
      fail(ErrorCode::kMissingTensor, "'" + name + "' is present in only one checkpoint");
    }
    if (ia->second.dtype() != ib->second.dtype()) {
      fail(ErrorCode::kDTypeMismatch, "'" + name + "': " + std::string(to_string(ia->second.dtype())) +
                                          " vs " + std::string(to_string(ib->second.dtype())));
    }
    if (ia->second.shape() != ib->second.shape()) {
      fail(ErrorCode::kShapeMismatch, "'" + name + "': " + shape_text(ia->second.shape()) + " vs " +
                                          shape_text(ib->second.shape()));
    }
  }
}

}  // namespace deltaquant::store
