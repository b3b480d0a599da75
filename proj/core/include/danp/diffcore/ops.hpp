#pragma once

#include <cstddef>
#include <vector>

#include "danp/diffcore/tape.hpp"

// Differentiable primitives. Every primitive records onto the tape of its
// first operand; all operands must live on the same tape. Reductions and
// matmul accumulate in double and round once to float. Outputs are checked
// for NaN/Inf (NumericError). No primitive mutates its inputs.
namespace danp::diffcore {

// Elementwise binary ops. Shapes must be equal, or one operand's shape must
// be a suffix of the other's; the shorter operand is tiled over the leading
// axes of the longer one ("leading-axis broadcast").
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

/// (M,K) x (K,N) -> (M,N).
Var matmul(Var a, Var b);

Var scale(Var a, double s);
Var relu(Var a);
/// x * sigmoid(x)
Var silu(Var a);
Var square(Var a);
/// Input must be strictly positive.
Var sqrt(Var a);

/// Max-subtracted softmax along `axis`.
Var softmax(Var a, std::size_t axis);

/// Full reductions to a shape-{1} scalar.
Var sum(Var a);
Var mean(Var a);
/// Sum of squares.
Var frobenius_sq(Var a);
/// sum((a - b)^2); shapes must be equal.
Var l2_sq_distance(Var a, Var b);

Var reshape(Var a, Shape shape);
/// Rank-2 only.
Var transpose(Var a);
/// All parts agree on every axis except `axis`.
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);

/// (H,W,C) -> (2H,2W,C), nearest neighbour.
Var upsample2x(Var a);
/// (H,W,C) -> (H/2,W/2,C); H and W must be even.
Var avgpool2x(Var a);

/// Identity in the forward pass; blocks gradient flow.
Var stop_gradient(Var a);

}  // namespace danp::diffcore
