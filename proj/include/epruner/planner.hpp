#pragma once

// Turns per-layer exemplar selections into a network-wide pruning plan whose
// channel bookkeeping is consistent across every edge of the architecture.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "epruner/affinity_propagation.hpp"
#include "epruner/architecture.hpp"
#include "epruner/bundle.hpp"
#include "epruner/error.hpp"
#include "epruner/parallel.hpp"
#include "epruner/tensor.hpp"
#include "json.hpp"

namespace epruner {

using IndexList = std::vector<std::size_t>;

struct LayerPlan {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  /// Output channels kept (filters, for conv/fc).
  IndexList kept_filters;
  /// Input channels kept; for concat, indices into the concatenated input.
  IndexList kept_inputs;
  /// Pruned weight shape for conv/fc, [channels] for every other kind.
  std::vector<std::size_t> shape;

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

struct PruningPlan {
  double beta = 0.0;
  std::vector<LayerPlan> layers;
  std::size_t channels_kept = 0;
  std::size_t channels_baseline = 0;

  [[nodiscard]] const LayerPlan* find(std::string_view name) const {
    auto it = std::find_if(layers.begin(), layers.end(), [&](const auto& l) { return l.name == name; });
    return it == layers.end() ? nullptr : &*it;
  }

  friend bool operator==(const PruningPlan&, const PruningPlan&) = default;
};

struct Violation {
  std::string layer;
  std::string message;
};

// ---------------------------------------------------------------------------
// Bundle access

inline std::string weight_name(const LayerNode& l) { return l.name + ".weight"; }
inline std::string bias_name(const LayerNode& l) { return l.name + ".bias"; }
inline std::vector<std::string> batchnorm_tensor_names(const LayerNode& l) {
  return {l.name + ".weight", l.name + ".bias", l.name + ".running_mean", l.name + ".running_var"};
}

/// Every conv/fc layer must have its weight (and bias, iff declared) with the
/// declared shape; batchnorm tensors are optional but shape-checked.
inline std::vector<Violation> check_bundle(const ArchitectureGraph& arch, const ModelBundle& bundle) {
  std::vector<Violation> out;
  auto shape_str = [](const std::vector<std::size_t>& s) {
    std::string r = "[";
    for (std::size_t k = 0; k < s.size(); ++k) r += (k ? "," : "") + std::to_string(s[k]);
    return r + "]";
  };
  for (const LayerNode& l : arch.layers()) {
    auto expect = [&](const std::string& tensor, const std::vector<std::size_t>& shape, bool required) {
      const TensorEntry* t = bundle.find(tensor);
      if (t == nullptr) {
        if (required) out.push_back({l.name, "missing tensor '" + tensor + "'"});
        return;
      }
      if (t->shape != shape) {
        out.push_back({l.name, "tensor '" + tensor + "' has shape " + shape_str(t->shape) + ", expected " +
                                   shape_str(shape)});
      }
    };
    switch (l.kind) {
      case LayerKind::kConv:
        expect(weight_name(l), {l.out_channels, l.in_channels, l.kernel_h, l.kernel_w}, true);
        if (l.bias) {
          expect(bias_name(l), {l.out_channels}, true);
        } else if (bundle.find(bias_name(l)) != nullptr) {
          out.push_back({l.name, "bundle has '" + bias_name(l) + "' but the layer declares no bias"});
        }
        break;
      case LayerKind::kFc:
        expect(weight_name(l), {l.out_channels, l.in_channels}, true);
        if (l.bias) {
          expect(bias_name(l), {l.out_channels}, true);
        } else if (bundle.find(bias_name(l)) != nullptr) {
          out.push_back({l.name, "bundle has '" + bias_name(l) + "' but the layer declares no bias"});
        }
        break;
      case LayerKind::kBatchNorm:
        for (const auto& n : batchnorm_tensor_names(l)) expect(n, {l.out_channels}, false);
        break;
      default:
        break;
    }
  }
  return out;
}

inline std::string describe(const std::vector<Violation>& vs) {
  std::string msg;
  for (const auto& v : vs) msg += "\n  " + (v.layer.empty() ? std::string("<plan>") : v.layer) + ": " + v.message;
  return msg;
}

inline std::vector<double> to_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

/// Conv weights (fc weights viewed as (out, C, H, W) over the producer's
/// feature map) and the optional bias, widened to double.
inline std::pair<WeightTensor4D, std::optional<std::vector<double>>> layer_weights(const ArchitectureGraph& arch,
                                                                                   const ModelBundle& bundle,
                                                                                   std::size_t index) {
  const LayerNode& l = arch.layer(index);
  const NodeShape& sh = arch.shape(index);
  const TensorEntry* w = bundle.find(weight_name(l));
  if (w == nullptr) throw ValidationError("layer '" + l.name + "': missing tensor '" + weight_name(l) + "'");
  Shape4 shape;
  if (l.kind == LayerKind::kConv) {
    shape = {l.out_channels, l.in_channels, l.kernel_h, l.kernel_w};
  } else if (l.kind == LayerKind::kFc) {
    shape = {l.out_channels, sh.in_channels, sh.in_h, sh.in_w};
  } else {
    throw ValidationError("layer '" + l.name + "' has no filter weights");
  }
  if (w->element_count() != shape.size()) {
    throw ValidationError("layer '" + l.name + "': weight tensor does not match the architecture");
  }
  std::optional<std::vector<double>> bias;
  if (l.bias) {
    const TensorEntry* b = bundle.find(bias_name(l));
    if (b == nullptr || b->data.size() != l.out_channels) {
      throw ValidationError("layer '" + l.name + "': missing or mis-shaped bias '" + bias_name(l) + "'");
    }
    bias = to_double(b->data);
  }
  return {WeightTensor4D(w->name, shape, to_double(w->data)), std::move(bias)};
}

inline FilterMatrix layer_filter_matrix(const ArchitectureGraph& arch, const ModelBundle& bundle, std::size_t index) {
  auto [w, bias] = layer_weights(arch, bundle, index);
  if (bias) return flatten(w, std::span<const double>(*bias));
  return flatten(w);
}

// ---------------------------------------------------------------------------
// Channel propagation

namespace detail {

inline IndexList iota_list(std::size_t n) {
  IndexList v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = k;
  return v;
}

inline std::vector<std::size_t> pruned_shape(const ArchitectureGraph& arch, std::size_t i, std::size_t kept_out,
                                             std::size_t kept_in) {
  const LayerNode& l = arch.layer(i);
  const NodeShape& sh = arch.shape(i);
  switch (l.kind) {
    case LayerKind::kConv: return {kept_out, kept_in, l.kernel_h, l.kernel_w};
    case LayerKind::kFc: return {kept_out, kept_in * sh.in_h * sh.in_w};
    default: return {kept_out};
  }
}

/// Input channels implied by the producers' kept filters.
inline IndexList expected_inputs(const ArchitectureGraph& arch, std::size_t i,
                                 const std::vector<const IndexList*>& producer_kept) {
  const LayerNode& l = arch.layer(i);
  if (l.kind == LayerKind::kInput) return {};
  if (l.kind == LayerKind::kConcat) {
    IndexList out;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < producer_kept.size(); ++k) {
      for (std::size_t c : *producer_kept[k]) out.push_back(offset + c);
      offset += arch.shape(arch.producers(i)[k]).channels;
    }
    return out;
  }
  return *producer_kept.front();
}

}  // namespace detail

/// Builds the plan implied by `selected` (layer index -> kept filters of a
/// prunable conv). Layers absent from `selected` keep every filter.
inline PruningPlan derive_plan(const ArchitectureGraph& arch, const std::map<std::size_t, IndexList>& selected,
                               double beta = 0.0) {
  PruningPlan plan;
  plan.beta = beta;
  plan.layers.resize(arch.size());
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const LayerNode& l = arch.layer(i);
    const NodeShape& sh = arch.shape(i);
    LayerPlan& lp = plan.layers[i];
    lp.name = l.name;
    lp.kind = l.kind;
    std::vector<const IndexList*> producer_kept;
    for (std::size_t p : arch.producers(i)) producer_kept.push_back(&plan.layers[p].kept_filters);
    lp.kept_inputs = detail::expected_inputs(arch, i, producer_kept);
    switch (l.kind) {
      case LayerKind::kInput:
      case LayerKind::kFc:
        lp.kept_filters = detail::iota_list(sh.channels);
        break;
      case LayerKind::kConv:
        if (auto it = selected.find(i); it != selected.end() && l.prunable) {
          lp.kept_filters = it->second;
        } else {
          lp.kept_filters = detail::iota_list(sh.channels);
        }
        break;
      default:
        lp.kept_filters = lp.kept_inputs;
        break;
    }
    lp.shape = detail::pruned_shape(arch, i, lp.kept_filters.size(), lp.kept_inputs.size());
    if (l.kind == LayerKind::kConv) {
      plan.channels_kept += lp.kept_filters.size();
      plan.channels_baseline += sh.channels;
    }
  }
  return plan;
}

/// Lists every broken invariant; at most one violation per layer, with all
/// of that layer's problems joined into its message.
inline std::vector<Violation> validate(const PruningPlan& plan, const ArchitectureGraph& arch) {
  std::vector<Violation> out;
  if (plan.layers.size() != arch.size()) {
    out.push_back({"", "plan has " + std::to_string(plan.layers.size()) + " layers, architecture has " +
                           std::to_string(arch.size())});
    return out;
  }
  auto well_formed = [](const IndexList& v, std::size_t bound) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (v[k] >= bound || (k > 0 && v[k] <= v[k - 1])) return false;
    }
    return true;
  };
  std::size_t kept = 0, baseline = 0;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const LayerNode& l = arch.layer(i);
    const NodeShape& sh = arch.shape(i);
    const LayerPlan& lp = plan.layers[i];
    std::vector<std::string> problems;
    if (lp.name != l.name || lp.kind != l.kind) {
      out.push_back({l.name, "plan entry '" + lp.name + "' (" + std::string(to_string(lp.kind)) +
                                 ") does not match architecture layer"});
      continue;
    }
    if (!well_formed(lp.kept_filters, sh.channels)) {
      problems.push_back("kept_filter_indices not strictly increasing within [0, " + std::to_string(sh.channels) +
                         ")");
    }
    const std::size_t in_bound = l.kind == LayerKind::kInput ? 0 : sh.in_channels;
    if (!well_formed(lp.kept_inputs, in_bound)) {
      problems.push_back("kept_input_channel_indices not strictly increasing within [0, " +
                         std::to_string(in_bound) + ")");
    }

    const auto& prod = arch.producers(i);
    std::vector<const IndexList*> producer_kept;
    for (std::size_t p : prod) producer_kept.push_back(&plan.layers[p].kept_filters);
    if (l.kind == LayerKind::kAdd) {
      for (std::size_t k = 1; k < prod.size(); ++k) {
        const bool ok = l.pad_shortcut ? producer_kept[k]->size() == arch.shape(prod[k]).channels
                                       : *producer_kept[k] == *producer_kept[0];
        if (!ok) {
          problems.push_back("residual input '" + arch.layer(prod[k]).name + "' channels disagree with '" +
                             arch.layer(prod[0]).name + "'");
        }
      }
    }
    if (lp.kept_inputs != detail::expected_inputs(arch, i, producer_kept)) {
      std::string from;
      for (std::size_t p : prod) from += (from.empty() ? "'" : ", '") + arch.layer(p).name + "'";
      problems.push_back("kept_input_channel_indices do not match kept filters of " + from);
    }

    switch (l.kind) {
      case LayerKind::kInput:
      case LayerKind::kFc:
        if (lp.kept_filters.size() != sh.channels) problems.push_back("layer must keep all outputs");
        break;
      case LayerKind::kConv:
        if (!l.prunable && lp.kept_filters.size() != sh.channels) {
          problems.push_back("non-prunable layer must keep all filters");
        }
        if (lp.kept_filters.empty()) problems.push_back("conv layer keeps no filters");
        kept += lp.kept_filters.size();
        baseline += sh.channels;
        break;
      default:
        if (lp.kept_filters != lp.kept_inputs) problems.push_back("pass-through layer must keep its input channels");
        break;
    }
    if (lp.shape != detail::pruned_shape(arch, i, lp.kept_filters.size(), lp.kept_inputs.size())) {
      problems.push_back("shape does not match kept index counts");
    }
    if (!problems.empty()) {
      std::string msg = problems.front();
      for (std::size_t k = 1; k < problems.size(); ++k) msg += "; " + problems[k];
      out.push_back({l.name, msg});
    }
  }
  if (kept != plan.channels_kept || baseline != plan.channels_baseline) {
    out.push_back({"", "channel totals do not match the per-layer entries"});
  }
  return out;
}

struct PlanOptions {
  ApOptions ap;
  /// 0 = hardware concurrency; EPRUNER_THREADS caps it either way.
  std::size_t threads = 0;
};

/// Selects exemplars in every prunable conv and propagates the result.
inline PruningPlan plan(const ArchitectureGraph& arch, const ModelBundle& bundle, double beta,
                        const PlanOptions& opts = {}) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ParameterError("beta must lie in (0, 1], got " + std::to_string(beta));
  if (auto problems = check_bundle(arch, bundle); !problems.empty()) {
    throw ValidationError("bundle does not match architecture:" + describe(problems));
  }
  std::vector<std::size_t> prunable;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    if (arch.layer(i).prunable) prunable.push_back(i);
  }
  std::vector<IndexList> kept(prunable.size());
  parallel_for(prunable.size(), thread_count(opts.threads), [&](std::size_t k) {
    kept[k] = select_exemplars(layer_filter_matrix(arch, bundle, prunable[k]), beta, opts.ap).exemplars;
  });
  std::map<std::size_t, IndexList> selected;
  for (std::size_t k = 0; k < prunable.size(); ++k) selected.emplace(prunable[k], std::move(kept[k]));

  PruningPlan result = derive_plan(arch, selected, beta);
  if (auto problems = validate(result, arch); !problems.empty()) {
    throw ValidationError("architecture cannot be pruned consistently:" + describe(problems));
  }
  return result;
}

/// The identity plan (nothing pruned).
inline PruningPlan identity_plan(const ArchitectureGraph& arch) { return derive_plan(arch, {}); }

// ---------------------------------------------------------------------------
// Plan files

inline nlohmann::ordered_json to_json(const PruningPlan& plan) {
  nlohmann::ordered_json doc;
  doc["beta"] = plan.beta;
  doc["channels"] = {{"kept", plan.channels_kept}, {"baseline", plan.channels_baseline}};
  auto layers = nlohmann::ordered_json::array();
  for (const auto& lp : plan.layers) {
    nlohmann::ordered_json j;
    j["name"] = lp.name;
    j["kind"] = std::string(to_string(lp.kind));
    j["kept_filter_indices"] = lp.kept_filters;
    j["kept_input_channel_indices"] = lp.kept_inputs;
    j["shape"] = lp.shape;
    layers.push_back(std::move(j));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

inline PruningPlan plan_from_json(const nlohmann::json& doc, const std::string& source = "<plan>") {
  auto fail = [&](const std::string& msg) { return ValidationError(source + ": " + msg); };
  try {
    PruningPlan plan;
    plan.beta = doc.at("beta").get<double>();
    plan.channels_kept = doc.at("channels").at("kept").get<std::size_t>();
    plan.channels_baseline = doc.at("channels").at("baseline").get<std::size_t>();
    for (const auto& j : doc.at("layers")) {
      LayerPlan lp;
      lp.name = j.at("name").get<std::string>();
      auto kind = parse_layer_kind(j.at("kind").get<std::string>());
      if (!kind) throw fail("layer '" + lp.name + "': unknown kind");
      lp.kind = *kind;
      lp.kept_filters = j.at("kept_filter_indices").get<IndexList>();
      lp.kept_inputs = j.at("kept_input_channel_indices").get<IndexList>();
      lp.shape = j.at("shape").get<std::vector<std::size_t>>();
      plan.layers.push_back(std::move(lp));
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed plan: ") + e.what());
  }
}

inline PruningPlan load_plan(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path + ": cannot open plan");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return plan_from_json(nlohmann::json::parse(ss.str()), path);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": malformed plan: " + e.what());
  }
}

inline void save_plan(const PruningPlan& plan, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError(path + ": cannot open for writing");
  out << to_json(plan).dump(1) << '\n';
}

}  // namespace epruner
