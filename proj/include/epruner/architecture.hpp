#pragma once

// Architecture graph: layer nodes, channel-flow edges, prunable flags, and
// the JSON descriptor format they are loaded from.

#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "epruner/detail/json_lines.hpp"
#include "epruner/error.hpp"
#include "json.hpp"

namespace epruner {

enum class LayerKind { kInput, kConv, kFc, kBatchNorm, kPool, kAdd, kConcat, kOutput };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kInput: return "input";
    case LayerKind::kConv: return "conv";
    case LayerKind::kFc: return "fc";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kPool: return "pool";
    case LayerKind::kAdd: return "add";
    case LayerKind::kConcat: return "concat";
    case LayerKind::kOutput: return "output";
  }
  return "?";
}

inline std::optional<LayerKind> parse_layer_kind(std::string_view s) {
  static const std::map<std::string_view, LayerKind> kinds = {
      {"input", LayerKind::kInput}, {"conv", LayerKind::kConv},         {"fc", LayerKind::kFc},
      {"batchnorm", LayerKind::kBatchNorm}, {"pool", LayerKind::kPool}, {"add", LayerKind::kAdd},
      {"concat", LayerKind::kConcat},   {"output", LayerKind::kOutput}};
  if (auto it = kinds.find(s); it != kinds.end()) return it->second;
  return std::nullopt;
}

enum class PoolMode { kMax, kAvg };

/// One node of the architecture. Which fields matter depends on `kind`:
///   input      channels (out_channels), height, width
///   conv       in/out channels, kernel, stride, padding, bias
///   fc         in_channels = in_features, out_channels = out_features, bias
///   batchnorm  out_channels (= in_channels)
///   pool       pool_mode, kernel, stride, padding, global_pool
///   add        pad_shortcut: first input is the main path; the others may
///              have fewer channels / larger maps and are zero-padded and
///              subsampled to match
struct LayerNode {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  bool prunable = false;
  std::vector<std::string> inputs;

  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  bool bias = false;
  PoolMode pool_mode = PoolMode::kMax;
  bool global_pool = false;
  std::size_t height = 0, width = 0;
  bool pad_shortcut = false;

  friend bool operator==(const LayerNode&, const LayerNode&) = default;
};

/// Resolved activation shape flowing into and out of a node.
struct NodeShape {
  std::size_t in_channels = 0, in_h = 0, in_w = 0;
  std::size_t channels = 0, h = 0, w = 0;
};

/// Structural error attributed to one layer.
class LayerError : public DescriptorError {
 public:
  LayerError(std::size_t index, const std::string& layer, const std::string& msg)
      : DescriptorError("layer '" + layer + "': " + msg), index_(index) {}
  [[nodiscard]] std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class ArchitectureGraph {
 public:
  ArchitectureGraph() = default;

  /// Layers must be listed in topological order (inputs refer to earlier
  /// layers), which also rules out cycles.
  explicit ArchitectureGraph(std::vector<LayerNode> layers, std::string name = {})
      : name_(std::move(name)), layers_(std::move(layers)) {
    resolve();
  }

  [[nodiscard]] const std::string& name() const noexcept { return name_; }
  [[nodiscard]] const std::vector<LayerNode>& layers() const noexcept { return layers_; }
  [[nodiscard]] std::size_t size() const noexcept { return layers_.size(); }
  [[nodiscard]] const LayerNode& layer(std::size_t i) const { return layers_.at(i); }
  [[nodiscard]] const NodeShape& shape(std::size_t i) const { return shapes_.at(i); }
  [[nodiscard]] const std::vector<std::size_t>& producers(std::size_t i) const { return producers_.at(i); }

  [[nodiscard]] std::optional<std::size_t> index_of(std::string_view name) const {
    if (auto it = index_.find(std::string(name)); it != index_.end()) return it->second;
    return std::nullopt;
  }

  /// Layers that own tensors in a bundle.
  [[nodiscard]] static bool has_weights(LayerKind k) noexcept {
    return k == LayerKind::kConv || k == LayerKind::kFc || k == LayerKind::kBatchNorm;
  }

 private:
  void fail(std::size_t i, const std::string& msg) const { throw LayerError(i, layers_[i].name, msg); }

  static std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, bool& ok) {
    ok = s > 0 && in + 2 * p >= k;
    return ok ? (in + 2 * p - k) / s + 1 : 0;
  }

  void resolve() {
    shapes_.assign(layers_.size(), {});
    producers_.assign(layers_.size(), {});
    index_.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      LayerNode& l = layers_[i];
      if (l.name.empty()) fail(i, "empty layer name");
      if (index_.count(l.name)) fail(i, "duplicate layer name");
      if (l.prunable && l.kind != LayerKind::kConv) fail(i, "only conv layers can be prunable");
      if (l.kind == LayerKind::kInput) {
        if (!l.inputs.empty()) fail(i, "input layers take no inputs");
      } else if (l.inputs.empty()) {
        fail(i, "layer has no inputs");
      }
      for (const auto& in : l.inputs) {
        auto it = index_.find(in);
        if (it == index_.end()) fail(i, "unknown or later-defined input '" + in + "'");
        producers_[i].push_back(it->second);
      }
      index_.emplace(l.name, i);
      resolve_shape(i);
    }
  }

  void resolve_shape(std::size_t i) {
    LayerNode& l = layers_[i];
    NodeShape& sh = shapes_[i];
    const auto& prod = producers_[i];
    auto single_input = [&]() -> const NodeShape& {
      if (prod.size() != 1) fail(i, std::string(to_string(l.kind)) + " layers take exactly one input");
      return shapes_[prod[0]];
    };
    bool ok = true;
    switch (l.kind) {
      case LayerKind::kInput:
        if (l.out_channels == 0 || l.height == 0 || l.width == 0) fail(i, "input needs channels, height, width >= 1");
        sh = {0, 0, 0, l.out_channels, l.height, l.width};
        break;
      case LayerKind::kConv: {
        const NodeShape& in = single_input();
        if (l.in_channels == 0 || l.out_channels == 0) fail(i, "conv needs in_channels and out_channels >= 1");
        if (l.kernel_h == 0 || l.kernel_w == 0) fail(i, "kernel must be >= 1");
        if (l.in_channels != in.channels) {
          fail(i, "in_channels " + std::to_string(l.in_channels) + " but producer '" + layers_[prod[0]].name +
                      "' emits " + std::to_string(in.channels));
        }
        const std::size_t h = out_extent(in.h, l.kernel_h, l.stride_h, l.pad_h, ok);
        bool ok_w = true;
        const std::size_t w = out_extent(in.w, l.kernel_w, l.stride_w, l.pad_w, ok_w);
        if (!ok || !ok_w) fail(i, "kernel/stride/padding do not fit the input feature map");
        sh = {in.channels, in.h, in.w, l.out_channels, h, w};
        break;
      }
      case LayerKind::kFc: {
        const NodeShape& in = single_input();
        if (l.out_channels == 0) fail(i, "fc needs out_features >= 1");
        const std::size_t features = in.channels * in.h * in.w;
        if (l.in_channels != features) {
          fail(i, "in_features " + std::to_string(l.in_channels) + " but producer '" + layers_[prod[0]].name +
                      "' emits " + std::to_string(features) + " (" + std::to_string(in.channels) + "x" +
                      std::to_string(in.h) + "x" + std::to_string(in.w) + ")");
        }
        sh = {in.channels, in.h, in.w, l.out_channels, 1, 1};
        break;
      }
      case LayerKind::kBatchNorm: {
        const NodeShape& in = single_input();
        if (l.out_channels != in.channels) {
          fail(i, "channels " + std::to_string(l.out_channels) + " but producer emits " + std::to_string(in.channels));
        }
        l.in_channels = l.out_channels;
        sh = {in.channels, in.h, in.w, in.channels, in.h, in.w};
        break;
      }
      case LayerKind::kPool: {
        const NodeShape& in = single_input();
        if (l.global_pool) {
          sh = {in.channels, in.h, in.w, in.channels, 1, 1};
          break;
        }
        if (l.kernel_h == 0 || l.kernel_w == 0) fail(i, "kernel must be >= 1");
        const std::size_t h = out_extent(in.h, l.kernel_h, l.stride_h, l.pad_h, ok);
        bool ok_w = true;
        const std::size_t w = out_extent(in.w, l.kernel_w, l.stride_w, l.pad_w, ok_w);
        if (!ok || !ok_w) fail(i, "kernel/stride/padding do not fit the input feature map");
        sh = {in.channels, in.h, in.w, in.channels, h, w};
        break;
      }
      case LayerKind::kAdd: {
        if (prod.size() < 2) fail(i, "add needs at least two inputs");
        const NodeShape& main = shapes_[prod[0]];
        for (std::size_t k = 1; k < prod.size(); ++k) {
          const NodeShape& other = shapes_[prod[k]];
          const bool same = other.channels == main.channels && other.h == main.h && other.w == main.w;
          if (l.pad_shortcut) {
            if (other.channels > main.channels || other.h < main.h || other.w < main.w) {
              fail(i, "shortcut input '" + layers_[prod[k]].name + "' cannot be padded to the main path shape");
            }
          } else if (!same) {
            fail(i, "input '" + layers_[prod[k]].name + "' shape differs from '" + layers_[prod[0]].name +
                        "' (use shortcut \"pad\" for zero-padded shortcuts)");
          }
        }
        sh = {main.channels, main.h, main.w, main.channels, main.h, main.w};
        break;
      }
      case LayerKind::kConcat: {
        if (prod.empty()) fail(i, "concat needs inputs");
        const NodeShape& first = shapes_[prod[0]];
        std::size_t c = 0;
        for (std::size_t p : prod) {
          if (shapes_[p].h != first.h || shapes_[p].w != first.w) {
            fail(i, "input '" + layers_[p].name + "' spatial size differs from '" + layers_[prod[0]].name + "'");
          }
          c += shapes_[p].channels;
        }
        sh = {c, first.h, first.w, c, first.h, first.w};
        break;
      }
      case LayerKind::kOutput: {
        const NodeShape& in = single_input();
        sh = {in.channels, in.h, in.w, in.channels, in.h, in.w};
        break;
      }
    }
  }

  std::string name_;
  std::vector<LayerNode> layers_;
  std::vector<NodeShape> shapes_;
  std::vector<std::vector<std::size_t>> producers_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// JSON descriptor

namespace detail {

struct SchemaIssue {
  std::string pointer;
  std::string message;
};

inline std::size_t get_count(const nlohmann::json& obj, const std::string& key, const std::string& ptr,
                             std::optional<std::size_t> fallback = std::nullopt) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return *fallback;
    throw SchemaIssue{ptr, "missing required field '" + key + "'"};
  }
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<long long>() >= 0)) {
    throw SchemaIssue{ptr + "/" + key, "'" + key + "' must be a non-negative integer"};
  }
  return it->get<std::size_t>();
}

inline bool get_bool(const nlohmann::json& obj, const std::string& key, const std::string& ptr, bool fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_boolean()) throw SchemaIssue{ptr + "/" + key, "'" + key + "' must be true or false"};
  return it->get<bool>();
}

/// Accepts either a scalar or a [h, w] pair.
inline std::pair<std::size_t, std::size_t> get_pair(const nlohmann::json& obj, const std::string& key,
                                                    const std::string& ptr, std::optional<std::size_t> fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return {*fallback, *fallback};
    throw SchemaIssue{ptr, "missing required field '" + key + "'"};
  }
  auto as_count = [&](const nlohmann::json& v) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw SchemaIssue{ptr + "/" + key, "'" + key + "' must be a non-negative integer or [h, w] pair"};
    }
    return v.get<std::size_t>();
  };
  if (it->is_array()) {
    if (it->size() != 2) throw SchemaIssue{ptr + "/" + key, "'" + key + "' pair must have exactly two entries"};
    return {as_count((*it)[0]), as_count((*it)[1])};
  }
  const std::size_t v = as_count(*it);
  return {v, v};
}

inline LayerNode parse_layer(const nlohmann::json& j, std::size_t index, const LayerNode* previous) {
  const std::string ptr = "/layers/" + std::to_string(index);
  if (!j.is_object()) throw SchemaIssue{ptr, "layer entry must be an object"};
  LayerNode l;
  auto name = j.find("name");
  if (name == j.end() || !name->is_string()) throw SchemaIssue{ptr, "layer needs a string 'name'"};
  l.name = name->get<std::string>();
  auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string()) throw SchemaIssue{ptr, "layer '" + l.name + "' needs a string 'kind'"};
  auto parsed_kind = parse_layer_kind(kind->get<std::string>());
  if (!parsed_kind) throw SchemaIssue{ptr + "/kind", "unknown layer kind '" + kind->get<std::string>() + "'"};
  l.kind = *parsed_kind;
  l.prunable = get_bool(j, "prunable", ptr, false);

  if (auto in = j.find("inputs"); in != j.end()) {
    if (!in->is_array()) throw SchemaIssue{ptr + "/inputs", "'inputs' must be an array of layer names"};
    for (const auto& v : *in) {
      if (!v.is_string()) throw SchemaIssue{ptr + "/inputs", "'inputs' must be an array of layer names"};
      l.inputs.push_back(v.get<std::string>());
    }
  } else if (l.kind != LayerKind::kInput && previous != nullptr) {
    l.inputs.push_back(previous->name);
  }

  static const nlohmann::json kEmpty = nlohmann::json::object();
  const nlohmann::json* params = &kEmpty;
  if (auto p = j.find("params"); p != j.end()) {
    if (!p->is_object()) throw SchemaIssue{ptr + "/params", "'params' must be an object"};
    params = &*p;
  }
  const std::string pp = ptr + "/params";
  switch (l.kind) {
    case LayerKind::kInput:
      l.out_channels = get_count(*params, "channels", pp);
      l.height = get_count(*params, "height", pp);
      l.width = get_count(*params, "width", pp);
      break;
    case LayerKind::kConv:
      l.in_channels = get_count(*params, "in_channels", pp);
      l.out_channels = get_count(*params, "out_channels", pp);
      std::tie(l.kernel_h, l.kernel_w) = get_pair(*params, "kernel", pp, std::nullopt);
      std::tie(l.stride_h, l.stride_w) = get_pair(*params, "stride", pp, 1);
      std::tie(l.pad_h, l.pad_w) = get_pair(*params, "padding", pp, 0);
      l.bias = get_bool(*params, "bias", pp, false);
      if (get_count(*params, "groups", pp, 1) != 1) {
        throw SchemaIssue{pp + "/groups", "grouped and depthwise convolutions are not supported"};
      }
      break;
    case LayerKind::kFc:
      l.in_channels = get_count(*params, "in_features", pp);
      l.out_channels = get_count(*params, "out_features", pp);
      l.bias = get_bool(*params, "bias", pp, false);
      break;
    case LayerKind::kBatchNorm:
      l.out_channels = get_count(*params, "channels", pp);
      l.in_channels = l.out_channels;
      break;
    case LayerKind::kPool: {
      l.global_pool = get_bool(*params, "global", pp, false);
      if (auto m = params->find("mode"); m != params->end()) {
        if (*m == "max") {
          l.pool_mode = PoolMode::kMax;
        } else if (*m == "avg") {
          l.pool_mode = PoolMode::kAvg;
        } else {
          throw SchemaIssue{pp + "/mode", "pool 'mode' must be \"max\" or \"avg\""};
        }
      }
      if (!l.global_pool) {
        std::tie(l.kernel_h, l.kernel_w) = get_pair(*params, "kernel", pp, std::nullopt);
        std::tie(l.stride_h, l.stride_w) = get_pair(*params, "stride", pp, l.kernel_h == l.kernel_w
                                                                                ? std::optional(l.kernel_h)
                                                                                : std::nullopt);
        std::tie(l.pad_h, l.pad_w) = get_pair(*params, "padding", pp, 0);
      }
      break;
    }
    case LayerKind::kAdd:
      if (auto s = params->find("shortcut"); s != params->end()) {
        if (*s == "pad") {
          l.pad_shortcut = true;
        } else if (*s != "identity") {
          throw SchemaIssue{pp + "/shortcut", "add 'shortcut' must be \"identity\" or \"pad\""};
        }
      }
      break;
    case LayerKind::kConcat:
    case LayerKind::kOutput:
      break;
  }
  return l;
}

}  // namespace detail

/// Parses a JSON architecture descriptor. Errors carry `source:line:`.
inline ArchitectureGraph parse_architecture(std::string_view text, const std::string& source = "<descriptor>") {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // Report the position of the offending byte as line:column.
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t k = 0; k < stop; ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw DescriptorError(source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                          ": malformed JSON: " + e.what());
  }

  const detail::JsonLineMap lines(text);
  auto located = [&](const std::string& pointer, const std::string& msg) {
    return DescriptorError(source + ":" + std::to_string(lines.line_of(pointer)) + ": " + msg);
  };

  std::vector<LayerNode> nodes;
  std::string name;
  try {
    if (!doc.is_object()) throw detail::SchemaIssue{"", "descriptor must be a JSON object"};
    if (auto n = doc.find("name"); n != doc.end() && n->is_string()) name = n->get<std::string>();
    auto layers = doc.find("layers");
    if (layers == doc.end() || !layers->is_array()) {
      throw detail::SchemaIssue{"", "descriptor needs a 'layers' array"};
    }
    for (std::size_t i = 0; i < layers->size(); ++i) {
      nodes.push_back(detail::parse_layer((*layers)[i], i, nodes.empty() ? nullptr : &nodes.back()));
    }
  } catch (const detail::SchemaIssue& issue) {
    throw located(issue.pointer, issue.message);
  }
  try {
    return ArchitectureGraph(std::move(nodes), std::move(name));
  } catch (const LayerError& e) {
    throw located("/layers/" + std::to_string(e.index()), e.what());
  }
}

inline ArchitectureGraph load_architecture(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DescriptorError(path + ": cannot open descriptor");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_architecture(ss.str(), path);
}

inline nlohmann::ordered_json to_json(const ArchitectureGraph& g) {
  using nlohmann::ordered_json;
  auto pair = [](std::size_t a, std::size_t b) { return a == b ? ordered_json(a) : ordered_json::array({a, b}); };
  ordered_json layers = ordered_json::array();
  for (const LayerNode& l : g.layers()) {
    ordered_json j;
    j["name"] = l.name;
    j["kind"] = std::string(to_string(l.kind));
    if (l.kind == LayerKind::kConv) j["prunable"] = l.prunable;
    if (!l.inputs.empty()) j["inputs"] = l.inputs;
    ordered_json p = ordered_json::object();
    switch (l.kind) {
      case LayerKind::kInput:
        p["channels"] = l.out_channels;
        p["height"] = l.height;
        p["width"] = l.width;
        break;
      case LayerKind::kConv:
        p["in_channels"] = l.in_channels;
        p["out_channels"] = l.out_channels;
        p["kernel"] = pair(l.kernel_h, l.kernel_w);
        p["stride"] = pair(l.stride_h, l.stride_w);
        p["padding"] = pair(l.pad_h, l.pad_w);
        p["bias"] = l.bias;
        break;
      case LayerKind::kFc:
        p["in_features"] = l.in_channels;
        p["out_features"] = l.out_channels;
        p["bias"] = l.bias;
        break;
      case LayerKind::kBatchNorm:
        p["channels"] = l.out_channels;
        break;
      case LayerKind::kPool:
        p["mode"] = l.pool_mode == PoolMode::kMax ? "max" : "avg";
        if (l.global_pool) {
          p["global"] = true;
        } else {
          p["kernel"] = pair(l.kernel_h, l.kernel_w);
          p["stride"] = pair(l.stride_h, l.stride_w);
          p["padding"] = pair(l.pad_h, l.pad_w);
        }
        break;
      case LayerKind::kAdd:
        p["shortcut"] = l.pad_shortcut ? "pad" : "identity";
        break;
      case LayerKind::kConcat:
      case LayerKind::kOutput:
        break;
    }
    if (!p.empty()) j["params"] = std::move(p);
    layers.push_back(std::move(j));
  }
  ordered_json doc;
  if (!g.name().empty()) doc["name"] = g.name();
  doc["layers"] = std::move(layers);
  return doc;
}

}  // namespace epruner
