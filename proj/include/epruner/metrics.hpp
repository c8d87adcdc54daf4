#pragma once

// Channel, FLOP and parameter accounting.
//
// FLOPs count one per multiply-accumulate plus one per elementwise output op:
//   conv       c_out*c_in*k_h*k_w*H_out*W_out  (+ c_out*H_out*W_out with bias)
//   fc         in*out                          (+ out with bias)
//   batchnorm  2*c*H*W (scale and shift)
//   pool       k_h*k_w*c*H_out*W_out           (global: c*H_in*W_in)
//   add        c*H*W per extra operand
// Parameters are trainable weights + biases + batchnorm affine (2*c); running
// statistics are excluded. Channels are summed over conv layers only.

#include <cstddef>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "epruner/architecture.hpp"
#include "epruner/planner.hpp"
#include "json.hpp"

namespace epruner {

struct ComplexityReport {
  std::size_t channels = 0;
  std::size_t flops = 0;
  std::size_t params = 0;

  friend bool operator==(const ComplexityReport&, const ComplexityReport&) = default;
};

/// Baseline and pruned counts with pruning rates 1 - pruned/baseline.
struct PruningReport {
  ComplexityReport baseline;
  ComplexityReport pruned;

  static double rate(std::size_t pruned, std::size_t baseline) {
    return baseline == 0 ? 0.0 : 1.0 - static_cast<double>(pruned) / static_cast<double>(baseline);
  }
  [[nodiscard]] double channel_rate() const { return rate(pruned.channels, baseline.channels); }
  [[nodiscard]] double flop_rate() const { return rate(pruned.flops, baseline.flops); }
  [[nodiscard]] double param_rate() const { return rate(pruned.params, baseline.params); }
};

/// Counts for `arch`, or for its pruned form when `plan` is given.
inline ComplexityReport count(const ArchitectureGraph& arch, const PruningPlan* plan = nullptr) {
  if (plan != nullptr) {
    if (auto problems = validate(*plan, arch); !problems.empty()) {
      throw ValidationError("invalid plan:" + describe(problems));
    }
  }
  ComplexityReport r;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const LayerNode& l = arch.layer(i);
    const NodeShape& sh = arch.shape(i);
    const std::size_t out_c = plan ? plan->layers[i].kept_filters.size() : sh.channels;
    const std::size_t in_c = plan ? plan->layers[i].kept_inputs.size() : sh.in_channels;
    const std::size_t out_area = sh.h * sh.w;
    switch (l.kind) {
      case LayerKind::kConv: {
        const std::size_t weights = out_c * in_c * l.kernel_h * l.kernel_w;
        r.channels += out_c;
        r.flops += weights * out_area + (l.bias ? out_c * out_area : 0);
        r.params += weights + (l.bias ? out_c : 0);
        break;
      }
      case LayerKind::kFc: {
        const std::size_t weights = out_c * in_c * sh.in_h * sh.in_w;
        r.flops += weights + (l.bias ? out_c : 0);
        r.params += weights + (l.bias ? out_c : 0);
        break;
      }
      case LayerKind::kBatchNorm:
        r.flops += 2 * out_c * out_area;
        r.params += 2 * out_c;
        break;
      case LayerKind::kPool:
        r.flops += l.global_pool ? out_c * sh.in_h * sh.in_w : l.kernel_h * l.kernel_w * out_c * out_area;
        break;
      case LayerKind::kAdd:
        r.flops += (arch.producers(i).size() - 1) * out_c * out_area;
        break;
      default:
        break;
    }
  }
  return r;
}

inline PruningReport compare(const ArchitectureGraph& arch, const PruningPlan& plan) {
  return {count(arch), count(arch, &plan)};
}

inline nlohmann::ordered_json to_json(const ComplexityReport& r) {
  return {{"channels", r.channels}, {"flops", r.flops}, {"params", r.params}};
}

inline nlohmann::ordered_json to_json(const PruningReport& r) {
  return {{"baseline", to_json(r.baseline)},
          {"pruned", to_json(r.pruned)},
          {"pruning_rate",
           {{"channels", r.channel_rate()}, {"flops", r.flop_rate()}, {"params", r.param_rate()}}}};
}

namespace detail {
inline std::string millions(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fM", static_cast<double>(v) / 1e6);
  return buf;
}
inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}
}  // namespace detail

/// Aligned human-readable table.
inline std::string format_table(const ComplexityReport& baseline, const std::optional<ComplexityReport>& pruned) {
  char line[160];
  std::string out;
  if (!pruned) {
    std::snprintf(line, sizeof line, "%-10s %14s\n", "metric", "baseline");
    out += line;
    std::snprintf(line, sizeof line, "%-10s %14zu\n", "channels", baseline.channels);
    out += line;
    std::snprintf(line, sizeof line, "%-10s %14s\n", "flops", detail::millions(baseline.flops).c_str());
    out += line;
    std::snprintf(line, sizeof line, "%-10s %14s\n", "params", detail::millions(baseline.params).c_str());
    out += line;
    return out;
  }
  const PruningReport r{baseline, *pruned};
  std::snprintf(line, sizeof line, "%-10s %14s %14s %14s\n", "metric", "baseline", "pruned", "pruning rate");
  out += line;
  std::snprintf(line, sizeof line, "%-10s %14zu %14zu %14s\n", "channels", baseline.channels, pruned->channels,
                detail::percent(r.channel_rate()).c_str());
  out += line;
  std::snprintf(line, sizeof line, "%-10s %14s %14s %14s\n", "flops", detail::millions(baseline.flops).c_str(),
                detail::millions(pruned->flops).c_str(), detail::percent(r.flop_rate()).c_str());
  out += line;
  std::snprintf(line, sizeof line, "%-10s %14s %14s %14s\n", "params", detail::millions(baseline.params).c_str(),
                detail::millions(pruned->params).c_str(), detail::percent(r.param_rate()).c_str());
  out += line;
  return out;
}

}  // namespace epruner
