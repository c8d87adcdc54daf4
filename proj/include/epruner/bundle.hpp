#pragma once

// ModelBundle: a single-file container of named float32 tensors.
//
// Layout:
//   bytes 0..7    magic "EPBUNDLE"
//   bytes 8..15   manifest length in bytes, unsigned 64-bit little-endian
//   manifest      UTF-8 JSON: {"tensors":[{"dtype":"float32","name":...,"shape":[...]}, ...],"version":1}
//   payloads      each tensor's values, little-endian IEEE-754 float32,
//                 row-major, concatenated in manifest order
// Nothing may follow the last payload.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "epruner/error.hpp"
#include "json.hpp"

namespace epruner {

inline constexpr std::array<char, 8> kBundleMagic = {'E', 'P', 'B', 'U', 'N', 'D', 'L', 'E'};
inline constexpr int kBundleVersion = 1;

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;

  [[nodiscard]] std::size_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  friend bool operator==(const TensorEntry& a, const TensorEntry& b) {
    // Bitwise comparison so NaN payloads and signed zeros round-trip exactly.
    return a.name == b.name && a.shape == b.shape && a.data.size() == b.data.size() &&
           (a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
  }
};

class ModelBundle {
 public:
  ModelBundle() = default;
  explicit ModelBundle(std::vector<TensorEntry> tensors) {
    for (auto& t : tensors) add(std::move(t));
  }

  /// Appends a tensor; names must be unique and the payload must match the shape.
  void add(TensorEntry t) {
    if (t.name.empty()) throw BundleError("tensor with empty name");
    if (find(t.name) != nullptr) throw BundleError("duplicate tensor '" + t.name + "'");
    if (t.data.size() != t.element_count()) {
      throw BundleError("tensor '" + t.name + "': shape needs " + std::to_string(t.element_count()) +
                        " values, payload has " + std::to_string(t.data.size()));
    }
    tensors_.push_back(std::move(t));
  }

  [[nodiscard]] const TensorEntry* find(std::string_view name) const {
    auto it = std::find_if(tensors_.begin(), tensors_.end(), [&](const auto& t) { return t.name == name; });
    return it == tensors_.end() ? nullptr : &*it;
  }

  [[nodiscard]] const std::vector<TensorEntry>& tensors() const noexcept { return tensors_; }
  [[nodiscard]] std::size_t size() const noexcept { return tensors_.size(); }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;

 private:
  std::vector<TensorEntry> tensors_;
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

inline std::uint64_t get_u64_le(std::string_view in) {
  std::uint64_t v = 0;
  for (int k = 7; k >= 0; --k) v = (v << 8) | static_cast<unsigned char>(in[static_cast<std::size_t>(k)]);
  return v;
}

}  // namespace detail

/// Serializes to the exact on-disk byte sequence.
inline std::string encode_bundle(const ModelBundle& bundle) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : bundle.tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "float32"}});
  }
  const nlohmann::json manifest = {{"version", kBundleVersion}, {"tensors", std::move(tensors)}};
  const std::string text = manifest.dump();

  std::string out(kBundleMagic.begin(), kBundleMagic.end());
  detail::put_u64_le(out, text.size());
  out += text;
  for (const auto& t : bundle.tensors()) {
    for (float f : t.data) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFFu));
    }
  }
  return out;
}

inline ModelBundle decode_bundle(std::string_view bytes, const std::string& source = "<bundle>") {
  auto fail = [&](const std::string& msg) { return BundleError(source + ": " + msg); };
  if (bytes.size() < 16 || !std::equal(kBundleMagic.begin(), kBundleMagic.end(), bytes.begin())) {
    throw fail("not a bundle (bad magic)");
  }
  const std::uint64_t manifest_len = detail::get_u64_le(bytes.substr(8, 8));
  if (manifest_len > bytes.size() - 16) throw fail("manifest length exceeds file size");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(std::string("malformed manifest: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw fail("malformed manifest: expected an object with a 'tensors' array");
  }
  if (auto v = manifest.find("version"); v != manifest.end() && *v != kBundleVersion) {
    throw fail("unsupported bundle version " + v->dump());
  }

  std::size_t offset = 16 + manifest_len;
  ModelBundle bundle;
  std::set<std::string> seen;
  for (const auto& entry : manifest["tensors"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string()) {
      throw fail("malformed manifest: tensor entry without a name");
    }
    const std::string name = entry["name"].get<std::string>();
    if (!seen.insert(name).second) throw fail("duplicate tensor '" + name + "'");
    const auto dtype = entry.value("dtype", std::string{});
    if (dtype != "float32") throw fail("tensor '" + name + "': unsupported dtype '" + dtype + "'");
    if (!entry.contains("shape") || !entry["shape"].is_array()) throw fail("tensor '" + name + "': missing shape");
    TensorEntry t;
    t.name = name;
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_integer() || d.get<long long>() < 0) throw fail("tensor '" + name + "': invalid shape");
      t.shape.push_back(d.get<std::size_t>());
    }
    const std::size_t count = t.element_count();
    if (count > (bytes.size() - offset) / 4) {
      throw fail("tensor '" + name + "': payload truncated (shape needs " + std::to_string(count) + " floats, " +
                 std::to_string((bytes.size() - offset) / 4) + " available)");
    }
    t.data.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(bytes[offset + 4 * k + b]);
      t.data[k] = std::bit_cast<float>(bits);
    }
    offset += 4 * count;
    bundle.add(std::move(t));
  }
  if (offset != bytes.size()) {
    throw fail(std::to_string(bytes.size() - offset) + " trailing bytes after the last payload");
  }
  return bundle;
}

inline ModelBundle read_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError(path + ": cannot open bundle");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_bundle(ss.str(), path);
}

inline void write_bundle(const ModelBundle& bundle, const std::string& path) {
  const std::string bytes = encode_bundle(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw BundleError(path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw BundleError(path + ": write failed");
}

}  // namespace epruner
