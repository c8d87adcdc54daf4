#pragma once

// Built-in CIFAR-10 descriptors: VGG-16 (with batchnorm) and ResNet-56 with
// zero-padding shortcuts.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "epruner/architecture.hpp"

namespace epruner {

namespace detail {

inline LayerNode input_node(std::size_t c, std::size_t h, std::size_t w) {
  LayerNode n;
  n.name = "input";
  n.kind = LayerKind::kInput;
  n.out_channels = c;
  n.height = h;
  n.width = w;
  return n;
}

inline LayerNode conv3x3(std::string name, std::string input, std::size_t in, std::size_t out, std::size_t stride,
                         bool bias, bool prunable) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::kConv;
  n.inputs = {std::move(input)};
  n.in_channels = in;
  n.out_channels = out;
  n.kernel_h = n.kernel_w = 3;
  n.stride_h = n.stride_w = stride;
  n.pad_h = n.pad_w = 1;
  n.bias = bias;
  n.prunable = prunable;
  return n;
}

inline LayerNode batchnorm(std::string name, std::string input, std::size_t c) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::kBatchNorm;
  n.inputs = {std::move(input)};
  n.in_channels = n.out_channels = c;
  return n;
}

inline LayerNode pool(std::string name, std::string input, PoolMode mode, std::size_t k) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::kPool;
  n.inputs = {std::move(input)};
  n.pool_mode = mode;
  n.kernel_h = n.kernel_w = k;
  n.stride_h = n.stride_w = k;
  return n;
}

inline LayerNode fc(std::string name, std::string input, std::size_t in, std::size_t out) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::kFc;
  n.inputs = {std::move(input)};
  n.in_channels = in;
  n.out_channels = out;
  n.bias = true;
  return n;
}

inline LayerNode output_node(std::string input) {
  LayerNode n;
  n.name = "output";
  n.kind = LayerKind::kOutput;
  n.inputs = {std::move(input)};
  return n;
}

}  // namespace detail

/// VGG-16 for 32x32 inputs: 13 conv+bn layers (all prunable), four 2x2 max
/// pools, a final 2x2 average pool and a 512->10 classifier.
inline ArchitectureGraph vgg16_cifar() {
  const std::vector<std::vector<std::size_t>> blocks = {
      {64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  std::vector<LayerNode> nodes{detail::input_node(3, 32, 32)};
  std::string prev = "input";
  std::size_t in = 3;
  std::size_t conv_id = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t width : blocks[b]) {
      ++conv_id;
      const std::string conv = "conv" + std::to_string(conv_id);
      const std::string bn = "bn" + std::to_string(conv_id);
      nodes.push_back(detail::conv3x3(conv, prev, in, width, 1, true, true));
      nodes.push_back(detail::batchnorm(bn, conv, width));
      prev = bn;
      in = width;
    }
    const std::string p = "pool" + std::to_string(b + 1);
    nodes.push_back(detail::pool(p, prev, b + 1 < blocks.size() ? PoolMode::kMax : PoolMode::kAvg, 2));
    prev = p;
  }
  nodes.push_back(detail::fc("fc", prev, 512, 10));
  nodes.push_back(detail::output_node("fc"));
  return ArchitectureGraph(std::move(nodes), "vgg16-cifar");
}

/// ResNet-(6n+2) for 32x32 inputs with basic blocks. Only the first conv of
/// each block is prunable; the stem conv is not. Downsampling blocks use a
/// zero-padded, subsampled identity shortcut.
inline ArchitectureGraph resnet_cifar(std::size_t blocks_per_stage, std::string name) {
  std::vector<LayerNode> nodes{detail::input_node(3, 32, 32)};
  nodes.push_back(detail::conv3x3("conv1", "input", 3, 16, 1, false, false));
  nodes.push_back(detail::batchnorm("bn1", "conv1", 16));
  std::string prev = "bn1";
  std::size_t in = 16;
  const std::size_t widths[3] = {16, 32, 64};
  for (std::size_t stage = 0; stage < 3; ++stage) {
    for (std::size_t b = 0; b < blocks_per_stage; ++b) {
      const std::string base = "layer" + std::to_string(stage + 1) + "." + std::to_string(b) + ".";
      const std::size_t w = widths[stage];
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      nodes.push_back(detail::conv3x3(base + "conv1", prev, in, w, stride, false, true));
      nodes.push_back(detail::batchnorm(base + "bn1", base + "conv1", w));
      nodes.push_back(detail::conv3x3(base + "conv2", base + "bn1", w, w, 1, false, false));
      nodes.push_back(detail::batchnorm(base + "bn2", base + "conv2", w));
      LayerNode add;
      add.name = base + "add";
      add.kind = LayerKind::kAdd;
      add.inputs = {base + "bn2", prev};
      add.pad_shortcut = in != w || stride != 1;
      nodes.push_back(add);
      prev = add.name;
      in = w;
    }
  }
  LayerNode gap;
  gap.name = "avgpool";
  gap.kind = LayerKind::kPool;
  gap.inputs = {prev};
  gap.pool_mode = PoolMode::kAvg;
  gap.global_pool = true;
  nodes.push_back(gap);
  nodes.push_back(detail::fc("fc", "avgpool", 64, 10));
  nodes.push_back(detail::output_node("fc"));
  return ArchitectureGraph(std::move(nodes), std::move(name));
}

inline ArchitectureGraph resnet56_cifar() { return resnet_cifar(9, "resnet56-cifar"); }

inline std::vector<std::string> builtin_architecture_names() { return {"vgg16-cifar", "resnet56-cifar"}; }

inline std::optional<ArchitectureGraph> builtin_architecture(std::string_view name) {
  if (name == "vgg16-cifar") return vgg16_cifar();
  if (name == "resnet56-cifar") return resnet56_cifar();
  return std::nullopt;
}

}  // namespace epruner
