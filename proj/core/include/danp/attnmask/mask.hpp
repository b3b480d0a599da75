#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "danp/attnmask/record.hpp"
#include "danp/diffcore/ops.hpp"
#include "danp/toydiff/prompt.hpp"

namespace danp::attnmask {

/// Block-averaged attention over the prompt's content tokens at the largest
/// block resolution.
struct AggregatedAttention {
  std::size_t height = 0;
  std::size_t width = 0;
  /// Pre-normalization values, row-major.
  std::vector<double> raw;
  /// Min-max normalized to [0,1], snapped to a 1e-9 grid. All zero when
  /// `degenerate`.
  std::vector<double> map;
  std::vector<std::size_t> token_selection;
  bool degenerate = false;
};

/// Differentiable raw aggregate as an (H, W) Var on the record's tape.
diffcore::Var aggregate_var(const AttentionRecord& rec, const toydiff::Prompt& prompt);

/// Values-only aggregate plus normalization.
AggregatedAttention aggregate(const AttentionRecord& rec, const toydiff::Prompt& prompt);

/// Min-max normalization of an arbitrary raw map.
AggregatedAttention normalize(std::vector<double> raw, std::size_t height, std::size_t width);

/// Bin k holds values in (k/L, (k+1)/L]; bin 0 also holds 0.
struct KapurHistogram {
  std::vector<double> p;

  std::size_t levels() const noexcept { return p.size(); }
  /// Upper edge of bin k.
  double upper_edge(std::size_t k) const { return static_cast<double>(k + 1) / static_cast<double>(p.size()); }
};

std::size_t bin_index(double value, std::size_t levels);
KapurHistogram build_histogram(const std::vector<double>& values, std::size_t levels);

struct KapurResult {
  std::size_t tau = 0;
  double score = 0.0;
};

/// H_0(tau) + H_1(tau) for one split; negative infinity when a class is empty.
double kapur_score(const KapurHistogram& hist, std::size_t tau);

/// Entropy-maximizing split. Ties go to the smallest tau. Throws
/// DegenerateThresholdError when no split leaves both classes non-empty.
KapurResult kapur_threshold(const KapurHistogram& hist);

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;
  double threshold = 0.0;
  std::size_t tau = 0;
  double score = 0.0;
  bool degenerate = false;
  std::size_t timestep = 0;

  std::size_t ones() const;
  std::uint64_t checksum() const;
  /// (H, W) tensor of 0/1 values.
  diffcore::Tensor as_tensor() const;
};

/// mask = value > upper edge of the Kapur bin.
BinaryMask make_mask(const AggregatedAttention& agg, std::size_t levels, std::size_t timestep = 0);

/// mask = raw > threshold, no normalization.
BinaryMask fixed_threshold_mask(const AggregatedAttention& agg, double threshold, std::size_t timestep = 0);

/// Writes <stem>_map.ppm, <stem>_mask.ppm and <stem>.json.
void dump_debug(const std::filesystem::path& stem, const AggregatedAttention& agg, const BinaryMask& mask);

}  // namespace danp::attnmask
