#pragma once

// Initial weights for the pruned network: exemplar weights (default), sparse
// random projection of exemplars, l1-norm filters, or seeded Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "epruner/architecture.hpp"
#include "epruner/bundle.hpp"
#include "epruner/error.hpp"
#include "epruner/planner.hpp"
#include "epruner/random.hpp"
#include "epruner/tensor.hpp"

namespace epruner {

enum class InitStrategy { kExemplar, kRandomProjection, kL1Norm, kRandomGaussian };

inline std::string_view to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::kExemplar: return "exemplar";
    case InitStrategy::kRandomProjection: return "proj";
    case InitStrategy::kL1Norm: return "l1";
    case InitStrategy::kRandomGaussian: return "random";
  }
  return "?";
}

inline std::optional<InitStrategy> parse_init_strategy(std::string_view s) {
  if (s == "exemplar") return InitStrategy::kExemplar;
  if (s == "proj" || s == "random_projection") return InitStrategy::kRandomProjection;
  if (s == "l1" || s == "l1_norm") return InitStrategy::kL1Norm;
  if (s == "random" || s == "random_gaussian") return InitStrategy::kRandomGaussian;
  return std::nullopt;
}

using PrunedWeights = std::pair<WeightTensor4D, std::optional<std::vector<double>>>;

/// Keeps filters `rows` and, within each, the input-channel slices `inputs`.
inline PrunedWeights slice_weights(const WeightTensor4D& w, const std::optional<std::vector<double>>& bias,
                                   const IndexList& rows, const IndexList& inputs) {
  const Shape4& s = w.shape();
  for (std::size_t r : rows) {
    if (r >= s.out) throw ValidationError("tensor '" + w.name() + "': plan keeps filter " + std::to_string(r) +
                                          " but the layer has " + std::to_string(s.out));
  }
  for (std::size_t c : inputs) {
    if (c >= s.in) throw ValidationError("tensor '" + w.name() + "': plan keeps input channel " + std::to_string(c) +
                                         " but the layer has " + std::to_string(s.in));
  }
  const Shape4 out_shape{rows.size(), inputs.size(), s.h, s.w};
  std::vector<double> data;
  data.reserve(out_shape.size());
  for (std::size_t r : rows) {
    for (std::size_t c : inputs) {
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) data.push_back(w.at(r, c, y, x));
      }
    }
  }
  std::optional<std::vector<double>> out_bias;
  if (bias) {
    out_bias.emplace();
    for (std::size_t r : rows) out_bias->push_back((*bias)[r]);
  }
  return {WeightTensor4D(w.name(), out_shape, std::move(data)), std::move(out_bias)};
}

/// Exemplar filters with the pruned producers' channels removed.
inline PrunedWeights init_exemplar(const WeightTensor4D& w, const std::optional<std::vector<double>>& bias,
                                   const LayerPlan& lp) {
  return slice_weights(w, bias, lp.kept_filters, lp.kept_inputs);
}

struct ProjectionOptions {
  /// Sparsity parameter s: entries are nonzero with probability 1/s. 0 means
  /// s = sqrt(source dimension).
  double sparsity = 0.0;
};

/// Sparse random projection matrix (source_dim x target_dim, row-major).
/// Entries are +-sqrt(s / target_dim) with probability 1/(2s) each and 0
/// otherwise, so E||xR||^2 = ||x||^2.
inline std::vector<double> sparse_projection_matrix(std::size_t source_dim, std::size_t target_dim,
                                                    std::uint64_t seed, const ProjectionOptions& opts = {}) {
  const double s = opts.sparsity > 0.0 ? opts.sparsity : std::sqrt(static_cast<double>(source_dim));
  if (s < 1.0) throw ParameterError("projection sparsity must be >= 1");
  const double magnitude = std::sqrt(s / static_cast<double>(target_dim));
  const double half = 1.0 / (2.0 * s);
  RandomStream rng(seed);
  std::vector<double> m(source_dim * target_dim, 0.0);
  for (double& v : m) {
    const double u = rng.uniform();
    if (u < half) {
      v = magnitude;
    } else if (u < 2.0 * half) {
      v = -magnitude;
    }
  }
  return m;
}

/// Projects each exemplar row (bias included) from c_in*h*w(+1) down to
/// c_in_kept*h*w(+1). Falls back to init_exemplar when the target dimension
/// is not smaller than the source.
inline PrunedWeights init_random_projection(const WeightTensor4D& w, const std::optional<std::vector<double>>& bias,
                                            const LayerPlan& lp, std::uint64_t seed,
                                            const ProjectionOptions& opts = {}) {
  const Shape4& s = w.shape();
  const std::size_t extra = bias ? 1 : 0;
  const std::size_t source_dim = s.filter_size() + extra;
  const std::size_t target_dim = lp.kept_inputs.size() * s.kernel_area() + extra;
  if (target_dim >= source_dim) return init_exemplar(w, bias, lp);

  const auto rows = slice_weights(w, bias, lp.kept_filters, detail::iota_list(s.in));
  const FilterMatrix source = rows.second ? flatten(rows.first, std::span<const double>(*rows.second))
                                          : flatten(rows.first);
  const std::vector<double> proj = sparse_projection_matrix(source_dim, target_dim, seed, opts);
  std::vector<double> out(source.rows() * target_dim, 0.0);
  for (std::size_t r = 0; r < source.rows(); ++r) {
    auto x = source.row(r);
    double* dst = out.data() + r * target_dim;
    for (std::size_t k = 0; k < source_dim; ++k) {
      if (x[k] == 0.0) continue;
      const double* p = proj.data() + k * target_dim;
      for (std::size_t j = 0; j < target_dim; ++j) dst[j] += x[k] * p[j];
    }
  }
  const FilterMatrix projected(source.rows(), target_dim, bias.has_value(), std::move(out));
  return unflatten(projected, Shape4{lp.kept_filters.size(), lp.kept_inputs.size(), s.h, s.w}, w.name());
}

/// The `keep` rows with the largest l1 norm (bias column included), ties to
/// the lower index, returned in ascending index order.
inline IndexList select_l1(const FilterMatrix& m, std::size_t keep) {
  if (keep > m.rows()) throw ParameterError("cannot keep more filters than the layer has");
  std::vector<double> norms(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    norms[i] = std::accumulate(r.begin(), r.end(), 0.0, [](double acc, double v) { return acc + std::abs(v); });
  }
  IndexList order = detail::iota_list(m.rows());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

/// The l1 baseline: every prunable conv keeps as many filters as `plan` does,
/// chosen by l1 norm, and consumers are rewired to those choices.
inline PruningPlan l1_plan(const ArchitectureGraph& arch, const ModelBundle& bundle, const PruningPlan& plan) {
  std::map<std::size_t, IndexList> selected;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    if (!arch.layer(i).prunable) continue;
    selected.emplace(i, select_l1(layer_filter_matrix(arch, bundle, i), plan.layers.at(i).kept_filters.size()));
  }
  return derive_plan(arch, selected, plan.beta);
}

/// Top-`keep` filters by l1 norm, sliced to the given input channels.
inline PrunedWeights init_l1(const WeightTensor4D& w, const std::optional<std::vector<double>>& bias,
                             std::size_t keep, const IndexList& kept_inputs) {
  const FilterMatrix m = bias ? flatten(w, std::span<const double>(*bias)) : flatten(w);
  return slice_weights(w, bias, select_l1(m, keep), kept_inputs);
}

/// I.i.d. N(0, 2 / fan_in) weights with fan_in = c_in*h*w; zero bias.
inline PrunedWeights init_random(const Shape4& pruned, bool has_bias, std::uint64_t seed, std::string name = {}) {
  RandomStream rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(pruned.filter_size()));
  std::vector<double> data(pruned.size());
  for (double& v : data) v = stddev * rng.gaussian();
  std::optional<std::vector<double>> bias;
  if (has_bias) bias.emplace(pruned.out, 0.0);
  return {WeightTensor4D(std::move(name), pruned, std::move(data)), std::move(bias)};
}

struct InitOptions {
  InitStrategy strategy = InitStrategy::kExemplar;
  std::uint64_t seed = 0;
  ProjectionOptions projection;
};

/// Applies `plan` to every tensor of `bundle`. Tensors the architecture does
/// not reference are copied unchanged; order follows the input bundle.
inline ModelBundle prune_bundle(const ArchitectureGraph& arch, const ModelBundle& bundle, const PruningPlan& plan,
                                const InitOptions& opts = {}) {
  if (auto problems = check_bundle(arch, bundle); !problems.empty()) {
    throw ValidationError("bundle does not match architecture:" + describe(problems));
  }
  if (auto problems = validate(plan, arch); !problems.empty()) {
    throw ValidationError("invalid plan:" + describe(problems));
  }
  const PruningPlan effective = opts.strategy == InitStrategy::kL1Norm ? l1_plan(arch, bundle, plan) : plan;

  std::map<std::string, TensorEntry> replaced;
  auto narrow = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const LayerNode& l = arch.layer(i);
    const LayerPlan& lp = effective.layers[i];
    const std::uint64_t seed = derive_seed(opts.seed, l.name);
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kFc) {
      auto [w, bias] = layer_weights(arch, bundle, i);
      PrunedWeights out;
      switch (opts.strategy) {
        case InitStrategy::kExemplar:
        case InitStrategy::kL1Norm:
          out = init_exemplar(w, bias, lp);
          break;
        case InitStrategy::kRandomProjection:
          out = init_random_projection(w, bias, lp, seed, opts.projection);
          break;
        case InitStrategy::kRandomGaussian:
          out = init_random(Shape4{lp.kept_filters.size(), lp.kept_inputs.size(), w.shape().h, w.shape().w},
                            bias.has_value(), seed, w.name());
          break;
      }
      const Shape4& ps = out.first.shape();
      std::vector<std::size_t> shape = l.kind == LayerKind::kConv
                                           ? std::vector<std::size_t>{ps.out, ps.in, ps.h, ps.w}
                                           : std::vector<std::size_t>{ps.out, ps.filter_size()};
      const auto data = out.first.data();
      replaced[weight_name(l)] = {weight_name(l), std::move(shape), std::vector<float>(data.begin(), data.end())};
      if (out.second) replaced[bias_name(l)] = {bias_name(l), {out.second->size()}, narrow(*out.second)};
    } else if (l.kind == LayerKind::kBatchNorm) {
      const auto names = batchnorm_tensor_names(l);
      const float fresh[4] = {1.0f, 0.0f, 0.0f, 1.0f};  // weight, bias, running mean, running var
      for (std::size_t t = 0; t < names.size(); ++t) {
        const TensorEntry* src = bundle.find(names[t]);
        if (src == nullptr) continue;
        TensorEntry e{names[t], {lp.kept_filters.size()}, {}};
        for (std::size_t c : lp.kept_filters) {
          e.data.push_back(opts.strategy == InitStrategy::kRandomGaussian ? fresh[t] : src->data.at(c));
        }
        replaced[names[t]] = std::move(e);
      }
    }
  }

  ModelBundle out;
  for (const auto& t : bundle.tensors()) {
    auto it = replaced.find(t.name);
    out.add(it != replaced.end() ? std::move(it->second) : t);
  }
  return out;
}

/// The pruned architecture: channel counts replaced by the plan's kept counts.
inline ArchitectureGraph prune_architecture(const ArchitectureGraph& arch, const PruningPlan& plan) {
  if (auto problems = validate(plan, arch); !problems.empty()) {
    throw ValidationError("invalid plan:" + describe(problems));
  }
  std::vector<LayerNode> nodes = arch.layers();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    LayerNode& l = nodes[i];
    const LayerPlan& lp = plan.layers[i];
    const NodeShape& sh = arch.shape(i);
    switch (l.kind) {
      case LayerKind::kConv:
        l.in_channels = lp.kept_inputs.size();
        l.out_channels = lp.kept_filters.size();
        break;
      case LayerKind::kFc:
        l.in_channels = lp.kept_inputs.size() * sh.in_h * sh.in_w;
        break;
      case LayerKind::kBatchNorm:
        l.in_channels = l.out_channels = lp.kept_filters.size();
        break;
      default:
        break;
    }
  }
  return ArchitectureGraph(std::move(nodes), arch.name());
}

}  // namespace epruner
