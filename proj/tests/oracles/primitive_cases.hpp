#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "danp/diffcore/ops.hpp"

// Central finite-difference checks of every primitive's VJP. Each case has
// an independent double-precision oracle of its forward map; the scalar
// probed is sum(w * op(inputs)) for random weights w.
namespace oracle {

using Vec = std::vector<double>;

// Relative error against the finite difference, with the denominator
// floored at 1e-5.
inline bool fd_close(double g, double fd) { return std::fabs(g - fd) <= 1e-3 * std::max(std::fabs(fd), 1e-5); }

struct FdStats {
  std::size_t total = 0;
  std::size_t passed = 0;
  double max_abs_err = 0.0;

  void add(double g, double fd) {
    ++total;
    if (fd_close(g, fd)) ++passed;
    max_abs_err = std::max(max_abs_err, std::fabs(g - fd));
  }
  bool ok() const { return total > 0 && passed * 100 >= total * 99; }
  double fraction() const { return total ? static_cast<double>(passed) / static_cast<double>(total) : 0.0; }
};

enum class Domain { kAny, kPositive, kAwayFromZero };

struct PrimitiveCase {
  std::string name;
  std::vector<danp::diffcore::Shape> inputs;
  Domain domain = Domain::kAny;
  std::function<danp::diffcore::Var(const std::vector<danp::diffcore::Var>&)> build;
  std::function<Vec(const std::vector<Vec>&)> reference;
};

inline Vec softmax_ref(const Vec& x, std::size_t rows, std::size_t cols, std::size_t axis) {
  Vec out(x.size());
  const std::size_t outer = axis == 1 ? rows : cols, inner = axis == 1 ? cols : rows;
  for (std::size_t o = 0; o < outer; ++o) {
    auto idx = [&](std::size_t i) { return axis == 1 ? o * cols + i : i * cols + o; };
    double mx = x[idx(0)];
    for (std::size_t i = 1; i < inner; ++i) mx = std::max(mx, x[idx(i)]);
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += std::exp(x[idx(i)] - mx);
    for (std::size_t i = 0; i < inner; ++i) out[idx(i)] = std::exp(x[idx(i)] - mx) / s;
  }
  return out;
}

inline std::vector<PrimitiveCase> primitive_cases() {
  namespace d = danp::diffcore;
  using V = std::vector<d::Var>;
  using I = std::vector<Vec>;
  std::vector<PrimitiveCase> cs;
  cs.push_back({"add", {{2, 3}, {2, 3}}, Domain::kAny, [](const V& v) { return d::add(v[0], v[1]); },
                [](const I& x) { Vec o(6); for (int i = 0; i < 6; ++i) o[i] = x[0][i] + x[1][i]; return o; }});
  cs.push_back({"add_broadcast", {{4, 3}, {3}}, Domain::kAny, [](const V& v) { return d::add(v[0], v[1]); },
                [](const I& x) { Vec o(12); for (int i = 0; i < 12; ++i) o[i] = x[0][i] + x[1][i % 3]; return o; }});
  cs.push_back({"sub_broadcast", {{3}, {2, 3}}, Domain::kAny, [](const V& v) { return d::sub(v[0], v[1]); },
                [](const I& x) { Vec o(6); for (int i = 0; i < 6; ++i) o[i] = x[0][i % 3] - x[1][i]; return o; }});
  cs.push_back({"mul_broadcast", {{2, 2, 3}, {2, 3}}, Domain::kAny, [](const V& v) { return d::mul(v[0], v[1]); },
                [](const I& x) { Vec o(12); for (int i = 0; i < 12; ++i) o[i] = x[0][i] * x[1][i % 6]; return o; }});
  cs.push_back({"matmul", {{2, 3}, {3, 4}}, Domain::kAny, [](const V& v) { return d::matmul(v[0], v[1]); },
                [](const I& x) {
                  Vec o(8, 0.0);
                  for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 4; ++j)
                      for (int k = 0; k < 3; ++k) o[i * 4 + j] += x[0][i * 3 + k] * x[1][k * 4 + j];
                  return o;
                }});
  cs.push_back({"scale", {{5}}, Domain::kAny, [](const V& v) { return d::scale(v[0], -2.5); },
                [](const I& x) { Vec o(5); for (int i = 0; i < 5; ++i) o[i] = -2.5 * x[0][i]; return o; }});
  cs.push_back({"relu", {{6}}, Domain::kAwayFromZero, [](const V& v) { return d::relu(v[0]); },
                [](const I& x) { Vec o(6); for (int i = 0; i < 6; ++i) o[i] = x[0][i] > 0 ? x[0][i] : 0.0; return o; }});
  cs.push_back({"silu", {{6}}, Domain::kAny, [](const V& v) { return d::silu(v[0]); },
                [](const I& x) { Vec o(6); for (int i = 0; i < 6; ++i) o[i] = x[0][i] / (1 + std::exp(-x[0][i])); return o; }});
  cs.push_back({"square", {{6}}, Domain::kAny, [](const V& v) { return d::square(v[0]); },
                [](const I& x) { Vec o(6); for (int i = 0; i < 6; ++i) o[i] = x[0][i] * x[0][i]; return o; }});
  cs.push_back({"sqrt", {{6}}, Domain::kPositive, [](const V& v) { return d::sqrt(v[0]); },
                [](const I& x) { Vec o(6); for (int i = 0; i < 6; ++i) o[i] = std::sqrt(x[0][i]); return o; }});
  cs.push_back({"softmax_axis1", {{2, 4}}, Domain::kAny, [](const V& v) { return d::softmax(v[0], 1); },
                [](const I& x) { return softmax_ref(x[0], 2, 4, 1); }});
  cs.push_back({"softmax_axis0", {{3, 2}}, Domain::kAny, [](const V& v) { return d::softmax(v[0], 0); },
                [](const I& x) { return softmax_ref(x[0], 3, 2, 0); }});
  cs.push_back({"sum", {{2, 3}}, Domain::kAny, [](const V& v) { return d::sum(v[0]); },
                [](const I& x) { double s = 0; for (double e : x[0]) s += e; return Vec{s}; }});
  cs.push_back({"mean", {{2, 3}}, Domain::kAny, [](const V& v) { return d::mean(v[0]); },
                [](const I& x) { double s = 0; for (double e : x[0]) s += e; return Vec{s / 6.0}; }});
  cs.push_back({"frobenius_sq", {{2, 3}}, Domain::kAny, [](const V& v) { return d::frobenius_sq(v[0]); },
                [](const I& x) { double s = 0; for (double e : x[0]) s += e * e; return Vec{s}; }});
  cs.push_back({"l2_sq_distance", {{5}, {5}}, Domain::kAny, [](const V& v) { return d::l2_sq_distance(v[0], v[1]); },
                [](const I& x) {
                  double s = 0;
                  for (int i = 0; i < 5; ++i) s += (x[0][i] - x[1][i]) * (x[0][i] - x[1][i]);
                  return Vec{s};
                }});
  cs.push_back({"reshape", {{2, 3}}, Domain::kAny, [](const V& v) { return d::reshape(v[0], {3, 2}); },
                [](const I& x) { return x[0]; }});
  cs.push_back({"transpose", {{2, 3}}, Domain::kAny, [](const V& v) { return d::transpose(v[0]); },
                [](const I& x) {
                  Vec o(6);
                  for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 3; ++j) o[j * 2 + i] = x[0][i * 3 + j];
                  return o;
                }});
  cs.push_back({"concat_axis1", {{2, 2}, {2, 3}}, Domain::kAny, [](const V& v) { return d::concat({v[0], v[1]}, 1); },
                [](const I& x) {
                  Vec o;
                  for (int i = 0; i < 2; ++i) {
                    for (int j = 0; j < 2; ++j) o.push_back(x[0][i * 2 + j]);
                    for (int j = 0; j < 3; ++j) o.push_back(x[1][i * 3 + j]);
                  }
                  return o;
                }});
  cs.push_back({"concat_axis0", {{1, 3}, {2, 3}}, Domain::kAny, [](const V& v) { return d::concat({v[0], v[1]}, 0); },
                [](const I& x) {
                  Vec o = x[0];
                  o.insert(o.end(), x[1].begin(), x[1].end());
                  return o;
                }});
  cs.push_back({"slice", {{4, 3}}, Domain::kAny, [](const V& v) { return d::slice(v[0], 0, 1, 3); },
                [](const I& x) { return Vec(x[0].begin() + 3, x[0].begin() + 9); }});
  cs.push_back({"upsample2x", {{2, 2, 2}}, Domain::kAny, [](const V& v) { return d::upsample2x(v[0]); },
                [](const I& x) {
                  Vec o(32);
                  for (int y = 0; y < 4; ++y)
                    for (int xx = 0; xx < 4; ++xx)
                      for (int c = 0; c < 2; ++c) o[(y * 4 + xx) * 2 + c] = x[0][((y / 2) * 2 + xx / 2) * 2 + c];
                  return o;
                }});
  cs.push_back({"avgpool2x", {{4, 4, 2}}, Domain::kAny, [](const V& v) { return d::avgpool2x(v[0]); },
                [](const I& x) {
                  Vec o(8, 0.0);
                  for (int y = 0; y < 4; ++y)
                    for (int xx = 0; xx < 4; ++xx)
                      for (int c = 0; c < 2; ++c) o[((y / 2) * 2 + xx / 2) * 2 + c] += 0.25 * x[0][(y * 4 + xx) * 2 + c];
                  return o;
                }});
  return cs;
}

// Runs the VJP check for one case; `seed` drives inputs and weights.
inline FdStats check_primitive(const PrimitiveCase& pc, std::uint64_t seed) {
  namespace d = danp::diffcore;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<Vec> inputs;
  for (const auto& s : pc.inputs) {
    Vec v(d::shape_numel(s));
    for (double& e : v) {
      e = u(rng);
      if (pc.domain == Domain::kPositive) e = 0.2 + std::fabs(e);
      if (pc.domain == Domain::kAwayFromZero && std::fabs(e) < 0.05) e = e < 0 ? -0.3 : 0.3;
      e = static_cast<float>(e);
    }
    inputs.push_back(std::move(v));
  }
  const std::size_t out_n = pc.reference(inputs).size();
  Vec w(out_n);
  for (double& e : w) e = static_cast<float>(u(rng));

  d::Tape tape;
  std::vector<d::Var> vars;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    d::Tensor t(pc.inputs[k]);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(inputs[k][i]);
    vars.push_back(tape.leaf(std::move(t), true));
  }
  d::Var out = pc.build(vars);
  d::Tensor wt(out.shape());
  for (std::size_t i = 0; i < out_n; ++i) wt[i] = static_cast<float>(w[i]);
  d::Var root = d::sum(d::mul(out, tape.constant(wt)));
  const auto grads = tape.backward(root);

  auto objective = [&](const std::vector<Vec>& x) {
    const Vec o = pc.reference(x);
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += w[i] * o[i];
    return s;
  };
  FdStats stats;
  constexpr double h = 1e-3;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& g = grads.of(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      stats.add(g[i], (objective(plus) - objective(minus)) / (2 * h));
    }
  }
  return stats;
}

}  // namespace oracle
