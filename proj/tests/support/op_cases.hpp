#pragma once

// One scalarized case per differentiable primitive, for finite-difference checks.

#include <functional>
#include <string>
#include <vector>

#include "regavae/numerics/ops.hpp"
#include "regavae/numerics/rng.hpp"

namespace regavae::test_support {

struct OpCase {
  std::string name;
  std::function<nn::Tensor(nn::Tape&)> fn;
  std::vector<nn::Tensor> params;
};

inline std::vector<OpCase> op_cases() {
  namespace ops = nn::ops;
  using nn::Tape;
  using nn::Tensor;
  auto random_tensor = [](nn::Shape shape, std::uint64_t seed) {
    nn::Rng rng(seed);
    return ops::random_normal(std::move(shape), rng);
  };
  Tensor a = random_tensor({3, 4}, 31);
  Tensor b = random_tensor({3, 4}, 32);
  Tensor row = random_tensor({4}, 33);
  Tensor sq = random_tensor({4, 4}, 34);
  Tensor weights = random_tensor({3, 4}, 35);

  // Fixed random projection to a scalar; shapes other than 3x4 get their own.
  auto project = [weights](Tape& t, const Tensor& out) {
    Tensor w = weights;
    if (out.shape() != weights.shape()) {
      nn::Rng rng(99);
      w = ops::random_normal(out.shape(), rng);
    }
    return ops::sum(t, ops::mul(t, out, w));
  };

  return {
      {"matmul", [=](Tape& t) { return project(t, ops::matmul(t, a, sq)); }, {a, sq}},
      {"transpose", [=](Tape& t) { return project(t, ops::transpose(t, a)); }, {a}},
      {"reshape", [=](Tape& t) { return project(t, ops::reshape(t, a, {4, 3})); }, {a}},
      {"add", [=](Tape& t) { return project(t, ops::add(t, a, b)); }, {a, b}},
      {"sub", [=](Tape& t) { return project(t, ops::sub(t, a, b)); }, {a, b}},
      {"mul", [=](Tape& t) { return project(t, ops::mul(t, a, b)); }, {a, b}},
      {"add_rowwise", [=](Tape& t) { return project(t, ops::add_rowwise(t, a, row)); }, {a, row}},
      {"mul_rowwise", [=](Tape& t) { return project(t, ops::mul_rowwise(t, a, row)); }, {a, row}},
      {"scale", [=](Tape& t) { return project(t, ops::scale(t, a, -1.7)); }, {a}},
      {"add_scalar", [=](Tape& t) { return project(t, ops::add_scalar(t, a, 0.3)); }, {a}},
      {"exp", [=](Tape& t) { return project(t, ops::exp(t, a)); }, {a}},
      {"clamp", [=](Tape& t) { return project(t, ops::clamp(t, a, -0.77, 0.81)); }, {a}},
      {"gelu", [=](Tape& t) { return project(t, ops::gelu(t, a)); }, {a}},
      {"softmax", [=](Tape& t) { return project(t, ops::softmax(t, a)); }, {a}},
      {"layer_norm",
       [=](Tape& t) { return project(t, ops::layer_norm(t, a, row, ops::scale(t, row, 0.5))); },
       {a, row}},
      {"concat_rows",
       [=](Tape& t) {
         std::vector<Tensor> parts{a, b};
         return project(t, ops::concat(t, parts, 0));
       },
       {a, b}},
      {"concat_cols",
       [=](Tape& t) {
         std::vector<Tensor> parts{a, b};
         return project(t, ops::concat(t, parts, 1));
       },
       {a, b}},
      {"slice_cols", [=](Tape& t) { return project(t, ops::slice_cols(t, a, 1, 2)); }, {a}},
      {"sum", [=](Tape& t) { return ops::sum(t, ops::mul(t, a, b)); }, {a, b}},
      {"mean", [=](Tape& t) { return ops::mean(t, ops::mul(t, a, a)); }, {a}},
      {"mean_rows", [=](Tape& t) { return project(t, ops::mean_rows(t, a)); }, {a}},
      {"embedding_lookup",
       [=](Tape& t) {
         std::vector<int> ids{2, 0, 2, 1};
         return project(t, ops::embedding_lookup(t, a, ids));
       },
       {a}},
      {"cross_entropy",
       [=](Tape& t) {
         std::vector<int> targets{3, 0, 1};
         return ops::cross_entropy_with_logits(t, a, targets);
       },
       {a}},
      {"attention_bidirectional",
       [=](Tape& t) { return project(t, ops::attention(t, a, b, ops::scale(t, b, -0.5), 2, false)); },
       {a, b}},
      {"attention_causal",
       [=](Tape& t) { return project(t, ops::attention(t, a, b, weights, 2, true)); },
       {a, b, weights}},
  };
}

}  // namespace regavae::test_support
