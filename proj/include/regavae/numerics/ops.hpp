#pragma once

#include <span>
#include <vector>

#include "regavae/numerics/rng.hpp"
#include "regavae/numerics/tensor.hpp"

// Differentiable primitives. Every op validates shapes (DimensionError),
// rejects non-finite results (NumericError) and records a backward rule on
// `tape` when any input requires grad.
namespace regavae::nn::ops {

enum class Pointwise { kAdd, kMul };

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);

Tensor elementwise(Tape& tape, const Tensor& a, const Tensor& b, Pointwise op);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

// a[m x n] combined with a length-n row broadcast over every row of a.
Tensor add_rowwise(Tape& tape, const Tensor& a, const Tensor& row);
Tensor mul_rowwise(Tape& tape, const Tensor& a, const Tensor& row);

Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor add_scalar(Tape& tape, const Tensor& a, double value);
Tensor exp(Tape& tape, const Tensor& a);
// Gradient passes only where lo <= a <= hi.
Tensor clamp(Tape& tape, const Tensor& a, double lo, double hi);
// tanh approximation of GELU.
Tensor gelu(Tape& tape, const Tensor& a);

// 1-D: softmax over all entries. 2-D: softmax over each row.
Tensor softmax(Tape& tape, const Tensor& v);
// Non-differentiable max-shifted softmax; DimensionError on empty input.
std::vector<double> softmax_values(std::span<const double> logits);

// Per-row normalization with affine gamma/beta of length cols.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);

// Rows of table[V x d] gathered by id -> [len x d].
Tensor embedding_lookup(Tape& tape, const Tensor& table,
                        std::span<const int> ids);

// Mean token cross-entropy (nats) of logits[m x V] against m target ids.
Tensor cross_entropy_with_logits(Tape& tape, const Tensor& logits,
                                 std::span<const int> targets);

// axis 0 stacks rows (all parts need equal cols); axis 1 joins columns
// (equal rows). 1-D parts concatenate into a 1-D result for either axis.
Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis);
// Columns [start, start + len) of a (entries for a 1-D tensor).
Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t start,
                  std::size_t len);

Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
// [m x n] -> [n], average over rows.
Tensor mean_rows(Tape& tape, const Tensor& a);

// Multi-head scaled dot-product attention over q, k, v of shape [T x d].
// Heads split d evenly; `causal` masks keys after each query position.
Tensor attention(Tape& tape, const Tensor& q, const Tensor& k,
                 const Tensor& v, std::size_t heads, bool causal);

Tensor random_normal(Shape shape, Rng& rng, double stddev = 1.0,
                     bool requires_grad = false);

}  // namespace regavae::nn::ops
