#include "danp/diffcore/ops.hpp"

#include <algorithm>
#include <memory>
#include <cmath>
#include <string>

#include "danp/error.hpp"

namespace danp::diffcore {
namespace {

Var emit(const char* name, Tensor out, std::vector<Var> parents, BackwardFn fn) {
  if (!out.all_finite()) throw NumericError(std::string(name) + ": non-finite output");
  Tape& tape = parents.front().tape();
  return tape.record(std::move(out), std::move(parents), std::move(fn));
}

void require_same_tape(const char* name, const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw ContractError(std::string(name) + ": operands must live on the same tape");
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// (outer, n, inner) decomposition around an axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class BinaryKind { kAdd, kSub, kMul };

Var binary(const char* name, Var a, Var b, BinaryKind kind) {
  require_same_tape(name, a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool a_big = true;
  if (sa != sb) {
    if (is_suffix(sb, sa)) {
      a_big = true;
    } else if (is_suffix(sa, sb)) {
      a_big = false;
    } else {
      throw ShapeError(name, shape_string(sa), shape_string(sb));
    }
  }
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  const std::size_t na = va.numel(), nb = vb.numel();
  Tensor out(a_big ? sa : sb);
  const std::size_t n = out.numel();
  {
    // Iterate in tiles of the shorter operand's length to avoid index modulo.
    const float* pa_data = va.data().data();
    const float* pb_data = vb.data().data();
    float* po = out.data().data();
    const std::size_t period = std::min(na, nb);
    for (std::size_t base = 0; base < n; base += period) {
      const float* x = pa_data + (na == n ? base : 0);
      const float* y = pb_data + (nb == n ? base : 0);
      float* o = po + base;
      switch (kind) {
        case BinaryKind::kAdd: for (std::size_t i = 0; i < period; ++i) o[i] = x[i] + y[i]; break;
        case BinaryKind::kSub: for (std::size_t i = 0; i < period; ++i) o[i] = x[i] - y[i]; break;
        case BinaryKind::kMul: for (std::size_t i = 0; i < period; ++i) o[i] = x[i] * y[i]; break;
      }
    }
  }
  const Tensor* pa = &va;
  const Tensor* pb = &vb;
  return emit(name, std::move(out), {a, b}, [=](const Tensor& g, GradSlots& grads) {
    // Full-size operands take the gradient directly; a tiled operand sums
    // its tiles in double before rounding once.
    const std::size_t period = std::min(na, nb);
    for (int side = 0; side < 2; ++side) {
      Tensor* dst = grads[side];
      if (!dst) continue;
      const std::size_t own = side == 0 ? na : nb;
      const Tensor* other = side == 0 ? pb : pa;
      const std::size_t other_n = side == 0 ? nb : na;
      const double sign = (kind == BinaryKind::kSub && side == 1) ? -1.0 : 1.0;
      if (own == n) {
        float* d = dst->data().data();
        if (kind == BinaryKind::kMul) {
          for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * (*other)[other_n == n ? i : i % other_n];
        } else if (sign > 0) {
          for (std::size_t i = 0; i < n; ++i) d[i] += g[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) d[i] -= g[i];
        }
      } else {
        std::vector<double> acc(period, 0.0);
        for (std::size_t base = 0; base < n; base += period) {
          for (std::size_t i = 0; i < period; ++i) {
            const double coeff = kind == BinaryKind::kMul ? static_cast<double>((*other)[base + i]) : sign;
            acc[i] += static_cast<double>(g[base + i]) * coeff;
          }
        }
        for (std::size_t i = 0; i < period; ++i) (*dst)[i] += static_cast<float>(acc[i]);
      }
    }
  });
}

std::vector<double> widen(const float* p, std::size_t n) { return std::vector<double>(p, p + n); }

// C(M,N) += A(M,K) * B(K,N)
void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  const std::vector<double> bd = widen(b, k * n);
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    float* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += static_cast<float>(acc[j]);
  }
}

// C(M,K) += G(M,N) * B(K,N)^T
void gemm_nt(const float* g, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  // Transpose B once so the inner loop streams contiguous rows.
  std::vector<double> bt(k * n);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  std::vector<double> acc(k);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* grow = g + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double gv = grow[j];
      if (gv == 0.0) continue;
      const double* btrow = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) acc[p] += gv * btrow[p];
    }
    float* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) crow[p] += static_cast<float>(acc[p]);
  }
}

// C(K,N) += A(M,K)^T * G(M,N)
void gemm_tn(const float* a, const float* g, float* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> acc(k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    const float* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* accrow = acc.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) accrow[j] += av * grow[j];
    }
  }
  for (std::size_t i = 0; i < k * n; ++i) c[i] += static_cast<float>(acc[i]);
}

// Like emit(), but the backward closure also receives the node's own output.
template <typename Fn>
Var emit_with_output(const char* name, Tensor out, std::vector<Var> parents, Fn fn) {
  auto self = std::make_shared<const Tensor*>(nullptr);
  Var r = emit(name, std::move(out), std::move(parents),
               [self, fn](const Tensor& g, GradSlots& grads) { fn(**self, g, grads); });
  *self = &r.value();
  return r;
}

}  // namespace

Var add(Var a, Var b) { return binary("add", a, b, BinaryKind::kAdd); }
Var sub(Var a, Var b) { return binary("sub", a, b, BinaryKind::kSub); }
Var mul(Var a, Var b) { return binary("mul", a, b, BinaryKind::kMul); }

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul", shape_string(sa), shape_string(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  const Tensor* pa = &a.value();
  const Tensor* pb = &b.value();
  Tensor out({m, n});
  gemm_nn(pa->data().data(), pb->data().data(), out.data().data(), m, k, n);
  return emit("matmul", std::move(out), {a, b}, [=](const Tensor& g, GradSlots& grads) {
    if (grads[0]) gemm_nt(g.data().data(), pb->data().data(), grads[0]->data().data(), m, k, n);
    if (grads[1]) gemm_tn(pa->data().data(), g.data().data(), grads[1]->data().data(), m, k, n);
  });
}

Var scale(Var a, double s) {
  const Tensor& va = a.value();
  Tensor out(va.shape());
  for (std::size_t i = 0; i < va.numel(); ++i) out[i] = static_cast<float>(va[i] * s);
  return emit("scale", std::move(out), {a}, [s](const Tensor& g, GradSlots& grads) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += static_cast<float>(g[i] * s);
  });
}

Var relu(Var a) {
  const Tensor* pa = &a.value();
  Tensor out(pa->shape());
  for (std::size_t i = 0; i < pa->numel(); ++i) out[i] = (*pa)[i] > 0.0f ? (*pa)[i] : 0.0f;
  return emit("relu", std::move(out), {a}, [pa](const Tensor& g, GradSlots& grads) {
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if ((*pa)[i] > 0.0f) (*grads[0])[i] += g[i];
    }
  });
}

Var silu(Var a) {
  const Tensor* pa = &a.value();
  Tensor out(pa->shape());
  for (std::size_t i = 0; i < pa->numel(); ++i) {
    const double x = (*pa)[i];
    out[i] = static_cast<float>(x / (1.0 + std::exp(-x)));
  }
  return emit("silu", std::move(out), {a}, [pa](const Tensor& g, GradSlots& grads) {
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double x = (*pa)[i];
      const double sig = 1.0 / (1.0 + std::exp(-x));
      (*grads[0])[i] += static_cast<float>(g[i] * sig * (1.0 + x * (1.0 - sig)));
    }
  });
}

Var square(Var a) {
  const Tensor* pa = &a.value();
  Tensor out(pa->shape());
  for (std::size_t i = 0; i < pa->numel(); ++i) out[i] = (*pa)[i] * (*pa)[i];
  return emit("square", std::move(out), {a}, [pa](const Tensor& g, GradSlots& grads) {
    for (std::size_t i = 0; i < g.numel(); ++i) {
      (*grads[0])[i] += static_cast<float>(2.0 * (*pa)[i] * g[i]);
    }
  });
}

Var sqrt(Var a) {
  const Tensor& va = a.value();
  Tensor out(va.shape());
  for (std::size_t i = 0; i < va.numel(); ++i) {
    if (!(va[i] > 0.0f)) throw NumericError("sqrt: input must be strictly positive");
    out[i] = std::sqrt(va[i]);
  }
  return emit_with_output("sqrt", std::move(out), {a}, [](const Tensor& y, const Tensor& g, GradSlots& grads) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += static_cast<float>(0.5 * g[i] / y[i]);
  });
}

Var softmax(Var a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("softmax", shape_string(s), "axis " + std::to_string(axis));
  const auto sp = split_axis(s, axis);
  const Tensor& va = a.value();
  Tensor out(s);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      float mx = va[base];
      for (std::size_t k = 1; k < sp.n; ++k) mx = std::max(mx, va[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) z += std::exp(static_cast<double>(va[base + k * sp.inner]) - mx);
      for (std::size_t k = 0; k < sp.n; ++k) {
        out[base + k * sp.inner] = static_cast<float>(std::exp(static_cast<double>(va[base + k * sp.inner]) - mx) / z);
      }
    }
  }
  return emit_with_output("softmax", std::move(out), {a}, [sp](const Tensor& y, const Tensor& g, GradSlots& grads) {
    // dx = y * (g - sum(g * y)) along the axis
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.n * sp.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t i = base + k * sp.inner;
          dot += static_cast<double>(g[i]) * y[i];
        }
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t i = base + k * sp.inner;
          (*grads[0])[i] += static_cast<float>(y[i] * (g[i] - dot));
        }
      }
    }
  });
}

Var sum(Var a) {
  const Tensor& va = a.value();
  double acc = 0.0;
  for (float v : va.data()) acc += v;
  return emit("sum", Tensor::scalar(static_cast<float>(acc)), {a}, [](const Tensor& g, GradSlots& grads) {
    const float gv = g[0];
    for (auto& v : grads[0]->data()) v += gv;
  });
}

Var mean(Var a) {
  const Tensor& va = a.value();
  double acc = 0.0;
  for (float v : va.data()) acc += v;
  const double n = static_cast<double>(va.numel());
  return emit("mean", Tensor::scalar(static_cast<float>(acc / n)), {a}, [n](const Tensor& g, GradSlots& grads) {
    const float gv = static_cast<float>(g[0] / n);
    for (auto& v : grads[0]->data()) v += gv;
  });
}

Var frobenius_sq(Var a) {
  const Tensor* pa = &a.value();
  double acc = 0.0;
  for (float v : pa->data()) acc += static_cast<double>(v) * v;
  return emit("frobenius_sq", Tensor::scalar(static_cast<float>(acc)), {a}, [pa](const Tensor& g, GradSlots& grads) {
    const double gv = g[0];
    for (std::size_t i = 0; i < pa->numel(); ++i) (*grads[0])[i] += static_cast<float>(2.0 * gv * (*pa)[i]);
  });
}

Var l2_sq_distance(Var a, Var b) {
  require_same_tape("l2_sq_distance", a, b);
  if (a.shape() != b.shape()) throw ShapeError("l2_sq_distance", shape_string(a.shape()), shape_string(b.shape()));
  const Tensor* pa = &a.value();
  const Tensor* pb = &b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < pa->numel(); ++i) {
    const double d = static_cast<double>((*pa)[i]) - (*pb)[i];
    acc += d * d;
  }
  return emit("l2_sq_distance", Tensor::scalar(static_cast<float>(acc)), {a, b},
              [pa, pb](const Tensor& g, GradSlots& grads) {
                const double gv = g[0];
                for (std::size_t i = 0; i < pa->numel(); ++i) {
                  const double d = 2.0 * gv * (static_cast<double>((*pa)[i]) - (*pb)[i]);
                  if (grads[0]) (*grads[0])[i] += static_cast<float>(d);
                  if (grads[1]) (*grads[1])[i] -= static_cast<float>(d);
                }
              });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return emit("reshape", std::move(out), {a}, [](const Tensor& g, GradSlots& grads) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i];
  });
}

Var transpose(Var a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw ShapeError("transpose", shape_string(s), "rank-2");
  const std::size_t r = s[0], c = s[1];
  const Tensor& va = a.value();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = va[i * c + j];
  }
  return emit("transpose", std::move(out), {a}, [r, c](const Tensor& g, GradSlots& grads) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) (*grads[0])[i * c + j] += g[j * r + i];
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) throw ShapeError("concat", shape_string(s0), "axis " + std::to_string(axis));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_same_tape("concat", parts.front(), p);
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) throw ShapeError("concat", shape_string(s0), shape_string(s));
    widths.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const auto sp = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    const std::size_t w = widths[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(v.data().data() + o * w, w, out.data().data() + o * sp.n * sp.inner + offset);
    }
    offset += w;
  }
  return emit("concat", std::move(out), parts, [widths, sp](const Tensor& g, GradSlots& grads) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t w = widths[k] * sp.inner;
      if (grads[k]) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const float* src = g.data().data() + o * sp.n * sp.inner + off;
          float* dst = grads[k]->data().data() + o * w;
          for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
        }
      }
      off += w;
    }
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice", shape_string(s),
                     "axis " + std::to_string(axis) + " [" + std::to_string(begin) + "," + std::to_string(end) + ")");
  }
  const auto sp = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t w = (end - begin) * sp.inner;
  const std::size_t off = begin * sp.inner;
  const Tensor& va = a.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(va.data().data() + o * sp.n * sp.inner + off, w, out.data().data() + o * w);
  }
  return emit("slice", std::move(out), {a}, [sp, w, off](const Tensor& g, GradSlots& grads) {
    for (std::size_t o = 0; o < sp.outer; ++o) {
      float* dst = grads[0]->data().data() + o * sp.n * sp.inner + off;
      const float* src = g.data().data() + o * w;
      for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
    }
  });
}

Var upsample2x(Var a) {
  const Shape& s = a.shape();
  if (s.size() != 3) throw ShapeError("upsample2x", shape_string(s), "(H,W,C)");
  const std::size_t h = s[0], w = s[1], c = s[2];
  const Tensor& va = a.value();
  Tensor out({2 * h, 2 * w, c});
  for (std::size_t y = 0; y < 2 * h; ++y) {
    for (std::size_t x = 0; x < 2 * w; ++x) {
      std::copy_n(va.data().data() + ((y / 2) * w + x / 2) * c, c, out.data().data() + (y * 2 * w + x) * c);
    }
  }
  return emit("upsample2x", std::move(out), {a}, [h, w, c](const Tensor& g, GradSlots& grads) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) {
        const float* src = g.data().data() + (y * 2 * w + x) * c;
        float* dst = grads[0]->data().data() + ((y / 2) * w + x / 2) * c;
        for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
      }
    }
  });
}

Var avgpool2x(Var a) {
  const Shape& s = a.shape();
  if (s.size() != 3 || s[0] % 2 || s[1] % 2) throw ShapeError("avgpool2x", shape_string(s), "(2h,2w,C)");
  const std::size_t h = s[0] / 2, w = s[1] / 2, c = s[2];
  const Tensor& va = a.value();
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) acc += va[((2 * y + dy) * 2 * w + 2 * x + dx) * c + k];
        }
        out[(y * w + x) * c + k] = static_cast<float>(0.25 * acc);
      }
    }
  }
  return emit("avgpool2x", std::move(out), {a}, [h, w, c](const Tensor& g, GradSlots& grads) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t k = 0; k < c; ++k) {
          const float gv = 0.25f * g[(y * w + x) * c + k];
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) (*grads[0])[((2 * y + dy) * 2 * w + 2 * x + dx) * c + k] += gv;
          }
        }
      }
    }
  });
}

Var stop_gradient(Var a) {
  // Recorded as a fresh constant: the value is copied, the edge is cut.
  return a.tape().constant(a.value());
}

}  // namespace danp::diffcore
