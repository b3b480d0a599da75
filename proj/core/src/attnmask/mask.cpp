#include "danp/attnmask/mask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "danp/error.hpp"
#include "danp/io/ppm.hpp"
#include "danp/rng.hpp"

namespace danp::attnmask {

using diffcore::Tensor;
using diffcore::Var;

namespace {

constexpr std::int64_t kGrid = 1'000'000'000;

std::vector<std::size_t> content_tokens(const toydiff::Prompt& prompt, std::size_t tokens) {
  std::vector<std::size_t> sel;
  for (std::size_t i = 0; i < prompt.content_mask.size() && i < tokens; ++i) {
    if (prompt.content_mask[i]) sel.push_back(i);
  }
  if (sel.empty()) throw ContractError("aggregate: prompt has no content tokens");
  return sel;
}

std::size_t upsample_factor(const AttentionBlock& b, std::size_t height, std::size_t width) {
  std::size_t f = 1;
  while (b.height * f < height) f *= 2;
  if (b.height * f != height || b.width * f != width) {
    throw ContractError("aggregate: block resolution does not divide the target by a power of two");
  }
  return f;
}

void check_record(const AttentionRecord& rec) {
  if (rec.blocks.empty()) throw ContractError("aggregate: attention record is empty");
}

std::int64_t to_grid(double v) {
  return std::clamp<std::int64_t>(std::llround(v * static_cast<double>(kGrid)), 0, kGrid);
}

}  // namespace

Var aggregate_var(const AttentionRecord& rec, const toydiff::Prompt& prompt) {
  check_record(rec);
  const auto sel = content_tokens(prompt, rec.tokens);
  const std::size_t height = rec.blocks.front().height, width = rec.blocks.front().width;
  Tensor select({rec.tokens, 1}, 0.0f);
  for (std::size_t s : sel) select[s] = static_cast<float>(1.0 / static_cast<double>(sel.size()));

  diffcore::Tape& tape = rec.blocks.front().probs.tape();
  Var total;
  for (const auto& b : rec.blocks) {
    const std::size_t f = upsample_factor(b, height, width);
    Var m = diffcore::reshape(diffcore::matmul(b.probs, tape.constant(select)), {b.height, b.width, 1});
    for (std::size_t k = f; k > 1; k /= 2) m = diffcore::upsample2x(m);
    total = total.valid() ? diffcore::add(total, m) : m;
  }
  total = diffcore::scale(total, 1.0 / static_cast<double>(rec.blocks.size()));
  return diffcore::reshape(total, {height, width});
}

AggregatedAttention aggregate(const AttentionRecord& rec, const toydiff::Prompt& prompt) {
  check_record(rec);
  const auto sel = content_tokens(prompt, rec.tokens);
  const std::size_t height = rec.blocks.front().height, width = rec.blocks.front().width;
  std::vector<double> raw(height * width, 0.0);
  for (const auto& b : rec.blocks) {
    const std::size_t f = upsample_factor(b, height, width);
    const Tensor& probs = b.probs.value();
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t q = (y / f) * b.width + (x / f);
        double acc = 0.0;
        for (std::size_t s : sel) acc += probs[q * rec.tokens + s];
        raw[y * width + x] += acc / static_cast<double>(sel.size());
      }
    }
  }
  for (double& v : raw) v /= static_cast<double>(rec.blocks.size());
  AggregatedAttention agg = normalize(std::move(raw), height, width);
  agg.token_selection = sel;
  return agg;
}

AggregatedAttention normalize(std::vector<double> raw, std::size_t height, std::size_t width) {
  if (raw.size() != height * width || raw.empty()) throw ContractError("normalize: map size does not match shape");
  AggregatedAttention agg;
  agg.height = height;
  agg.width = width;
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double mn = *lo, range = *hi - *lo;
  agg.map.assign(raw.size(), 0.0);
  if (!(range > 0.0) || !std::isfinite(range)) {
    agg.degenerate = true;
  } else {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      agg.map[i] = static_cast<double>(to_grid((raw[i] - mn) / range)) / static_cast<double>(kGrid);
    }
  }
  agg.raw = std::move(raw);
  return agg;
}

std::size_t bin_index(double value, std::size_t levels) {
  if (levels == 0) throw ContractError("histogram: levels must be >= 1");
  const std::int64_t k = to_grid(value);
  if (k == 0) return 0;
  const auto bin = static_cast<std::size_t>((k * static_cast<std::int64_t>(levels) - 1) / kGrid);
  return std::min(bin, levels - 1);
}

KapurHistogram build_histogram(const std::vector<double>& values, std::size_t levels) {
  if (levels < 2) throw ContractError("histogram: at least 2 levels required");
  if (values.empty()) throw ContractError("histogram: no values");
  KapurHistogram h;
  h.p.assign(levels, 0.0);
  std::vector<std::size_t> counts(levels, 0);
  for (double v : values) ++counts[bin_index(v, levels)];
  for (std::size_t i = 0; i < levels; ++i) h.p[i] = static_cast<double>(counts[i]) / static_cast<double>(values.size());
  return h;
}

double kapur_score(const KapurHistogram& hist, std::size_t tau) {
  const std::size_t n = hist.levels();
  if (tau + 1 >= n) throw ContractError("kapur_score: tau out of range");
  double p0 = 0.0, p1 = 0.0;
  for (std::size_t i = 0; i <= tau; ++i) p0 += hist.p[i];
  for (std::size_t i = tau + 1; i < n; ++i) p1 += hist.p[i];
  if (!(p0 > 0.0) || !(p1 > 0.0)) return -std::numeric_limits<double>::infinity();
  double h = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (hist.p[i] <= 0.0) continue;
    const double q = hist.p[i] / (i <= tau ? p0 : p1);
    h -= q * std::log(std::max(q, 1e-12));
  }
  return h;
}

KapurResult kapur_threshold(const KapurHistogram& hist) {
  const std::size_t n = hist.levels();
  if (n < 2) throw ContractError("kapur_threshold: at least 2 levels required");
  // H_c = log P_c - (sum_{i in c} p_i log p_i) / P_c
  std::vector<double> p0(n), s0(n), p1(n + 1, 0.0), s1(n + 1, 0.0);
  double cp = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = hist.p[i];
    if (p < 0.0 || !std::isfinite(p)) throw ContractError("kapur_threshold: invalid bin mass");
    cp += p;
    if (p > 0.0) cs += p * std::log(std::max(p, 1e-12));
    p0[i] = cp;
    s0[i] = cs;
  }
  for (std::size_t i = n; i-- > 0;) {
    const double p = hist.p[i];
    p1[i] = p1[i + 1] + p;
    s1[i] = s1[i + 1] + (p > 0.0 ? p * std::log(std::max(p, 1e-12)) : 0.0);
  }
  KapurResult best;
  bool found = false;
  for (std::size_t tau = 0; tau + 1 < n; ++tau) {
    const double a = p0[tau], b = p1[tau + 1];
    if (!(a > 0.0) || !(b > 0.0)) continue;
    const double score = (std::log(a) - s0[tau] / a) + (std::log(b) - s1[tau + 1] / b);
    if (!found || score > best.score + 1e-12) {
      best = {tau, score};
      found = true;
    }
  }
  if (!found) throw DegenerateThresholdError("kapur_threshold: all mass in a single bin");
  return best;
}

std::size_t BinaryMask::ones() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::uint64_t BinaryMask::checksum() const {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(mask.data()), mask.size()));
}

Tensor BinaryMask::as_tensor() const {
  Tensor t({height, width});
  for (std::size_t i = 0; i < mask.size(); ++i) t[i] = static_cast<float>(mask[i]);
  return t;
}

BinaryMask make_mask(const AggregatedAttention& agg, std::size_t levels, std::size_t timestep) {
  BinaryMask m;
  m.height = agg.height;
  m.width = agg.width;
  m.timestep = timestep;
  m.mask.assign(agg.map.size(), 0);
  if (agg.degenerate) {
    m.degenerate = true;
    return m;
  }
  const KapurHistogram hist = build_histogram(agg.map, levels);
  KapurResult r;
  try {
    r = kapur_threshold(hist);
  } catch (const DegenerateThresholdError&) {
    m.degenerate = true;
    return m;
  }
  m.tau = r.tau;
  m.score = r.score;
  m.threshold = hist.upper_edge(r.tau);
  // bin > tau is exactly value > upper edge of bin tau on the snapped grid.
  for (std::size_t i = 0; i < agg.map.size(); ++i) m.mask[i] = bin_index(agg.map[i], levels) > r.tau ? 1 : 0;
  return m;
}

BinaryMask fixed_threshold_mask(const AggregatedAttention& agg, double threshold, std::size_t timestep) {
  BinaryMask m;
  m.height = agg.height;
  m.width = agg.width;
  m.timestep = timestep;
  m.threshold = threshold;
  m.mask.resize(agg.raw.size());
  for (std::size_t i = 0; i < agg.raw.size(); ++i) m.mask[i] = agg.raw[i] > threshold ? 1 : 0;
  return m;
}

void dump_debug(const std::filesystem::path& stem, const AggregatedAttention& agg, const BinaryMask& mask) {
  const auto dir = stem.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const std::string base = stem.string();
  io::write_heatmap_ppm(base + "_map.ppm", agg.map, agg.height, agg.width);
  std::vector<double> mv(mask.mask.begin(), mask.mask.end());
  io::write_heatmap_ppm(base + "_mask.ppm", mv, mask.height, mask.width);
  nlohmann::json j{{"threshold", mask.threshold},
                   {"tau", mask.tau},
                   {"entropy_score", mask.score},
                   {"degenerate", mask.degenerate},
                   {"timestep", mask.timestep},
                   {"ones", mask.ones()},
                   {"height", mask.height},
                   {"width", mask.width}};
  std::ofstream out(base + ".json");
  if (!out) throw IoError("cannot write " + base + ".json");
  out << j.dump(2) << "\n";
}

}  // namespace danp::attnmask
