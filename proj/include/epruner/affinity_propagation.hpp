#pragma once

// Exemplar selection over one layer's filters by affinity-propagation
// message passing.
//
// Conventions that differ from textbook AP:
//  * the preference of filter i is beta * median(row i), not a global median;
//  * self-responsibility is r(i,i) = s(i,i) - max_{i' != i} s(i,i'), i.e. it
//    does not see the availabilities;
//  * no noise is injected into the similarities. Ties in the final argmax go
//    to the lowest column index, self column included.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epruner/error.hpp"
#include "epruner/tensor.hpp"

namespace epruner {

/// Dense n x n matrix of doubles, row-major.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}
  SquareMatrix(std::size_t n, std::vector<double> data) : n_(n), data_(std::move(data)) {
    if (data_.size() != n_ * n_) {
      throw DimensionError("square matrix of order " + std::to_string(n_) + " needs " + std::to_string(n_ * n_) +
                           " values, got " + std::to_string(data_.size()));
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return n_; }
  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * n_ + j]; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const noexcept {
    return std::span<const double>(data_).subspan(i * n_, n_);
  }
  [[nodiscard]] std::span<double> row(std::size_t i) noexcept { return std::span<double>(data_).subspan(i * n_, n_); }
  [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
  [[nodiscard]] std::span<double> values() noexcept { return data_; }

  friend bool operator==(const SquareMatrix&, const SquareMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

/// Pairwise similarities; the diagonal holds the preferences.
using SimilarityMatrix = SquareMatrix;

/// Responsibilities, availabilities and the number of completed rounds.
struct MessageState {
  SquareMatrix r;
  SquareMatrix a;
  std::size_t iteration = 0;

  static MessageState zeros(std::size_t n) { return {SquareMatrix(n), SquareMatrix(n), 0}; }
};

struct ExemplarResult {
  /// exemplar_of[i] is the exemplar chosen for filter i.
  std::vector<std::size_t> exemplar_of;
  /// Sorted indices of the filters that chose themselves.
  std::vector<std::size_t> exemplars;
  /// Rounds of message passing actually run (0 for the single-filter case).
  std::size_t iterations = 0;

  friend bool operator==(const ExemplarResult&, const ExemplarResult&) = default;
};

struct ApOptions {
  double damping = 0.5;
  std::size_t iterations = 200;
  /// Stop once assignments have been unchanged for `stable_rounds` rounds.
  bool early_exit = false;
  std::size_t stable_rounds = 20;
};

namespace detail {

/// Median; for even lengths, the mean of the two central order statistics.
inline double median(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lo + hi) / 2.0;
}

inline double squared_distance(std::span<const double> x, std::span<const double> y) noexcept {
  // Four accumulators so the loop vectorizes without -ffast-math.
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = x.size();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    for (std::size_t u = 0; u < 4; ++u) {
      const double d = x[k + u] - y[k + u];
      acc[u] += d * d;
    }
  }
  for (; k < n; ++k) {
    const double d = x[k] - y[k];
    acc[0] += d * d;
  }
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

inline void check_damping(double damping) {
  if (!(damping >= 0.0 && damping <= 1.0)) {
    throw ParameterError("damping must lie in [0, 1], got " + std::to_string(damping));
  }
}

}  // namespace detail

/// s(i,j) = -||row_i - row_j||^2 off the diagonal, s(i,i) = beta * median(row_i).
inline SimilarityMatrix build_similarity(const FilterMatrix& m, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw ParameterError("beta must lie in (0, 1], got " + std::to_string(beta));
  }
  const std::size_t n = m.rows();
  SimilarityMatrix s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s(i, i) = beta * detail::median(m.row(i));
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = -detail::squared_distance(m.row(i), m.row(j));
      s(i, j) = d;
      s(j, i) = d;
    }
  }
  return s;
}

/// Raw (undamped) responsibilities from the similarities and current
/// availabilities. Self-responsibilities use the similarities only.
inline SquareMatrix update_responsibilities(const SimilarityMatrix& s, const MessageState& state) {
  const std::size_t n = s.size();
  if (state.a.size() != n) throw DimensionError("availability matrix does not match similarity matrix");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  SquareMatrix r(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Best and second-best of a(i,j') + s(i,j') over every column.
    double best = kNegInf;
    double second = kNegInf;
    std::size_t best_j = n;
    double best_offdiag_s = kNegInf;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = state.a(i, j) + s(i, j);
      if (v > best) {
        second = best;
        best = v;
        best_j = j;
      } else if (v > second) {
        second = v;
      }
      if (j != i) best_offdiag_s = std::max(best_offdiag_s, s(i, j));
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        r(i, i) = s(i, i) - best_offdiag_s;
      } else {
        r(i, j) = s(i, j) - (j == best_j ? second : best);
      }
    }
  }
  return r;
}

/// Raw (undamped) availabilities from the current responsibilities.
inline SquareMatrix update_availabilities(const MessageState& state) {
  const std::size_t n = state.r.size();
  std::vector<double> positive(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = state.r.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) positive[j] += std::max(0.0, row[j]);
    }
  }
  SquareMatrix a(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        a(i, i) = positive[i];
      } else {
        a(i, j) = std::min(0.0, state.r(j, j) + (positive[j] - std::max(0.0, state.r(i, j))));
      }
    }
  }
  return a;
}

/// target <- damping * target + (1 - damping) * fresh, elementwise.
inline void damp(SquareMatrix& target, const SquareMatrix& fresh, double damping) {
  auto t = target.values();
  auto f = fresh.values();
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = damping * t[k] + (1.0 - damping) * f[k];
}

/// Reads exemplars off r + a. A filter whose argmax is itself is an
/// exemplar. Filters whose argmax is a non-exemplar are reassigned to their
/// best exemplar; if no filter selects itself, the filter with the largest
/// r(i,i) + a(i,i) becomes the sole exemplar. Ties go to the lower index.
inline ExemplarResult extract_exemplars(const MessageState& state) {
  const std::size_t n = state.r.size();
  ExemplarResult out;
  out.exemplar_of.assign(n, 0);
  auto score = [&](std::size_t i, std::size_t j) { return state.r(i, j) + state.a(i, j); };
  std::vector<bool> is_exemplar(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = 0;
    double best = score(i, 0);
    for (std::size_t j = 1; j < n; ++j) {
      const double v = score(i, j);
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    out.exemplar_of[i] = arg;
    if (arg == i) {
      is_exemplar[i] = true;
      out.exemplars.push_back(i);
    }
  }
  if (out.exemplars.empty() && n > 0) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (score(i, i) > score(arg, arg)) arg = i;
    }
    is_exemplar[arg] = true;
    out.exemplars.push_back(arg);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (is_exemplar[i]) {
      out.exemplar_of[i] = i;
      continue;
    }
    if (is_exemplar[out.exemplar_of[i]]) continue;
    std::size_t arg = out.exemplars.front();
    for (std::size_t e : out.exemplars) {
      if (score(i, e) > score(i, arg)) arg = e;
    }
    out.exemplar_of[i] = arg;
  }
  return out;
}

/// Stepwise driver, exposed so callers can observe the messages per round.
class AffinityPropagation {
 public:
  AffinityPropagation(SimilarityMatrix s, double damping = 0.5)
      : s_(std::move(s)), damping_(damping), state_(MessageState::zeros(s_.size())) {
    detail::check_damping(damping_);
  }

  /// Resumes from an existing message state.
  AffinityPropagation(SimilarityMatrix s, double damping, MessageState initial)
      : s_(std::move(s)), damping_(damping), state_(std::move(initial)) {
    detail::check_damping(damping_);
    if (state_.r.size() != s_.size() || state_.a.size() != s_.size()) {
      throw DimensionError("message state does not match the similarity matrix");
    }
  }

  /// One round: responsibilities, then availabilities, each damped.
  void step() {
    damp(state_.r, update_responsibilities(s_, state_), damping_);
    damp(state_.a, update_availabilities(state_), damping_);
    ++state_.iteration;
  }

  [[nodiscard]] const MessageState& state() const noexcept { return state_; }
  [[nodiscard]] const SimilarityMatrix& similarity() const noexcept { return s_; }
  [[nodiscard]] ExemplarResult result() const {
    ExemplarResult r = extract_exemplars(state_);
    r.iterations = state_.iteration;
    return r;
  }

 private:
  SimilarityMatrix s_;
  double damping_;
  MessageState state_;
};

/// Runs message passing for a fixed number of rounds and extracts exemplars.
inline ExemplarResult run_ap(const SimilarityMatrix& s, const ApOptions& opts = {}) {
  detail::check_damping(opts.damping);
  if (opts.iterations < 1) throw ParameterError("iterations must be >= 1");
  const std::size_t n = s.size();
  if (n == 0) throw DimensionError("similarity matrix is empty");
  if (n == 1) return {{0}, {0}, 0};

  AffinityPropagation ap(s, opts.damping);
  std::vector<std::size_t> last;
  std::size_t stable = 0;
  for (std::size_t t = 0; t < opts.iterations; ++t) {
    ap.step();
    if (opts.early_exit) {
      auto current = extract_exemplars(ap.state()).exemplar_of;
      stable = (current == last) ? stable + 1 : 0;
      last = std::move(current);
      if (stable >= opts.stable_rounds) break;
    }
  }
  return ap.result();
}

/// Convenience: similarity + message passing over one layer's filters.
inline ExemplarResult select_exemplars(const FilterMatrix& m, double beta, const ApOptions& opts = {}) {
  return run_ap(build_similarity(m, beta), opts);
}

}  // namespace epruner
