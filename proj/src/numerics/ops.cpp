#include "regavae/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "regavae/error.hpp"

namespace regavae::nn::ops {
namespace {

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": result contains NaN or Inf");
    }
  }
}

Tensor make_result(Shape shape, std::vector<double> values, bool grad,
                   const char* op) {
  check_finite(values, op);
  return Tensor::from(std::move(shape), std::move(values), grad);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_defined(const Tensor& a, const char* op) {
  if (!a.defined()) throw DimensionError(std::string(op) + ": empty input");
}

// Shared implementation for unary pointwise maps with derivative f'(x, y).
template <typename Fwd, typename Deriv>
Tensor unary(Tape& tape, const Tensor& a, const char* name, Fwd fwd,
             Deriv deriv) {
  require_defined(a, name);
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  Tensor result = make_result(a.shape(), std::move(out), a.requires_grad(), name);
  if (a.requires_grad()) {
    tape.record({a}, result, [a, result, deriv]() mutable {
      auto g = result.grad();
      auto x = a.data();
      auto y = result.data();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
    });
  }
  return result;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (b.ndim() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) +
                         " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> c(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  Shape shape = a.ndim() == 1 ? Shape{n} : Shape{m, n};
  const bool grad = a.requires_grad() || b.requires_grad();
  Tensor result = make_result(std::move(shape), std::move(c), grad, "matmul");
  if (grad) {
    tape.record({a, b}, result, [a, b, result, m, k, n]() mutable {
      auto G = result.grad();
      auto A = a.data();
      auto B = b.data();
      if (a.requires_grad()) {
        auto gA = a.mutable_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
            gA[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        auto gB = b.mutable_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += aip * G[i * n + j];
          }
        }
      }
    });
  }
  return result;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  require_defined(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  Tensor result = make_result({n, m}, std::move(out), a.requires_grad(), "transpose");
  if (a.requires_grad()) {
    tape.record({a}, result, [a, result, m, n]() mutable {
      auto G = result.grad();
      auto gA = a.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gA[i * n + j] += G[j * m + i];
    });
  }
  return result;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) +
                         " as " + shape_string(shape));
  }
  Tensor result = Tensor::from(std::move(shape),
                               std::vector<double>(a.data().begin(), a.data().end()),
                               a.requires_grad());
  if (a.requires_grad()) {
    tape.record({a}, result, [a, result]() mutable {
      auto G = result.grad();
      auto gA = a.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i];
    });
  }
  return result;
}

Tensor elementwise(Tape& tape, const Tensor& a, const Tensor& b, Pointwise op) {
  const char* name = op == Pointwise::kAdd ? "add" : "mul";
  require_defined(a, name);
  require_defined(b, name);
  require_same_shape(a, b, name);
  auto A = a.data();
  auto B = b.data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i)
    out[i] = op == Pointwise::kAdd ? A[i] + B[i] : A[i] * B[i];
  const bool grad = a.requires_grad() || b.requires_grad();
  Tensor result = make_result(a.shape(), std::move(out), grad, name);
  if (grad) {
    tape.record({a, b}, result, [a, b, result, op]() mutable {
      auto G = result.grad();
      if (a.requires_grad()) {
        auto gA = a.mutable_grad();
        auto B = b.data();
        for (std::size_t i = 0; i < G.size(); ++i)
          gA[i] += op == Pointwise::kAdd ? G[i] : G[i] * B[i];
      }
      if (b.requires_grad()) {
        auto gB = b.mutable_grad();
        auto A = a.data();
        for (std::size_t i = 0; i < G.size(); ++i)
          gB[i] += op == Pointwise::kAdd ? G[i] : G[i] * A[i];
      }
    });
  }
  return result;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, a, b, Pointwise::kAdd);
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, a, b, Pointwise::kMul);
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return add(tape, a, scale(tape, b, -1.0));
}

namespace {

Tensor rowwise(Tape& tape, const Tensor& a, const Tensor& row, Pointwise op) {
  const char* name = op == Pointwise::kAdd ? "add_rowwise" : "mul_rowwise";
  require_defined(a, name);
  require_defined(row, name);
  if (row.numel() != a.cols()) {
    throw DimensionError(std::string(name) + ": row " + shape_string(row.shape()) +
                         " does not match columns of " + shape_string(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  auto A = a.data();
  auto R = row.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = op == Pointwise::kAdd ? A[i * n + j] + R[j] : A[i * n + j] * R[j];
  const bool grad = a.requires_grad() || row.requires_grad();
  Tensor result = make_result(a.shape(), std::move(out), grad, name);
  if (grad) {
    tape.record({a, row}, result, [a, row, result, m, n, op]() mutable {
      auto G = result.grad();
      auto A = a.data();
      auto R = row.data();
      if (a.requires_grad()) {
        auto gA = a.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            gA[i * n + j] += op == Pointwise::kAdd ? G[i * n + j] : G[i * n + j] * R[j];
      }
      if (row.requires_grad()) {
        auto gR = row.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            gR[j] += op == Pointwise::kAdd ? G[i * n + j] : G[i * n + j] * A[i * n + j];
      }
    });
  }
  return result;
}

}  // namespace

Tensor add_rowwise(Tape& tape, const Tensor& a, const Tensor& row) {
  return rowwise(tape, a, row, Pointwise::kAdd);
}

Tensor mul_rowwise(Tape& tape, const Tensor& a, const Tensor& row) {
  return rowwise(tape, a, row, Pointwise::kMul);
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  return unary(tape, a, "scale", [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(Tape& tape, const Tensor& a, double value) {
  return unary(tape, a, "add_scalar", [value](double x) { return x + value; },
               [](double, double) { return 1.0; });
}

Tensor exp(Tape& tape, const Tensor& a) {
  return unary(tape, a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor clamp(Tape& tape, const Tensor& a, double lo, double hi) {
  return unary(
      tape, a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor gelu(Tape& tape, const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double k = 0.044715;
  return unary(
      tape, a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      });
}

std::vector<double> softmax_values(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - hi);
    total += out[i];
  }
  for (double& v : out) v /= total;
  check_finite(out, "softmax");
  return out;
}

Tensor softmax(Tape& tape, const Tensor& v) {
  require_defined(v, "softmax");
  const std::size_t m = v.rows(), n = v.cols();
  std::vector<double> out(m * n);
  auto V = v.data();
  for (std::size_t i = 0; i < m; ++i) {
    auto row = softmax_values(V.subspan(i * n, n));
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  Tensor result = make_result(v.shape(), std::move(out), v.requires_grad(), "softmax");
  if (v.requires_grad()) {
    tape.record({v}, result, [v, result, m, n]() mutable {
      auto G = result.grad();
      auto Y = result.data();
      auto gV = v.mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += G[i * n + j] * Y[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gV[i * n + j] += Y[i * n + j] * (G[i * n + j] - dot);
      }
    });
  }
  return result;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: gamma " + shape_string(gamma.shape()) +
                         " / beta " + shape_string(beta.shape()) +
                         " do not match " + shape_string(x.shape()));
  }
  auto X = x.data();
  auto Gm = gamma.data();
  auto Bt = beta.data();
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += X[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = X[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (X[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = Gm[j] * xhat[i * n + j] + Bt[j];
    }
  }
  const bool grad = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Tensor result = make_result(x.shape(), std::move(out), grad, "layer_norm");
  if (grad) {
    tape.record({x, gamma, beta}, result,
                [x, gamma, beta, result, m, n, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)]() mutable {
      auto G = result.grad();
      auto Gm = gamma.data();
      if (gamma.requires_grad()) {
        auto gG = gamma.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gG[j] += G[i * n + j] * xhat[i * n + j];
      }
      if (beta.requires_grad()) {
        auto gB = beta.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gB[j] += G[i * n + j];
      }
      if (x.requires_grad()) {
        auto gX = x.mutable_grad();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = G[i * n + j] * Gm[j];
            mean_d += d;
            mean_dx += d * xhat[i * n + j];
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = G[i * n + j] * Gm[j];
            gX[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      }
    });
  }
  return result;
}

Tensor embedding_lookup(Tape& tape, const Tensor& table, std::span<const int> ids) {
  require_defined(table, "embedding_lookup");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  if (table.ndim() != 2) {
    throw DimensionError("embedding_lookup: table must be 2-D, got " +
                         shape_string(table.shape()));
  }
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  auto T = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DimensionError("embedding_lookup: id " + std::to_string(ids[i]) +
                           " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(T.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Tensor result = make_result({ids.size(), d}, std::move(out), table.requires_grad(),
                              "embedding_lookup");
  if (table.requires_grad()) {
    std::vector<int> idv(ids.begin(), ids.end());
    tape.record({table}, result, [table, result, d, idv = std::move(idv)]() mutable {
      auto G = result.grad();
      auto gT = table.mutable_grad();
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          gT[static_cast<std::size_t>(idv[i]) * d + j] += G[i * d + j];
    });
  }
  return result;
}

Tensor cross_entropy_with_logits(Tape& tape, const Tensor& logits,
                                 std::span<const int> targets) {
  require_defined(logits, "cross_entropy_with_logits");
  const std::size_t m = logits.rows(), vocab = logits.cols();
  if (targets.size() != m) {
    throw DimensionError("cross_entropy_with_logits: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  auto L = logits.data();
  std::vector<double> probs(m * vocab);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw DimensionError("cross_entropy_with_logits: target " +
                           std::to_string(targets[i]) + " outside vocabulary");
    }
    auto row = L.subspan(i * vocab, vocab);
    const double hi = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[i * vocab + j] = std::exp(row[j] - hi);
      total += probs[i * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] /= total;
    loss += hi + std::log(total) - row[static_cast<std::size_t>(targets[i])];
  }
  loss /= static_cast<double>(m);
  Tensor result = make_result({1}, {loss}, logits.requires_grad(), "cross_entropy");
  if (logits.requires_grad()) {
    std::vector<int> tv(targets.begin(), targets.end());
    tape.record({logits}, result, [logits, result, m, vocab, probs = std::move(probs),
                                   tv = std::move(tv)]() mutable {
      const double g = result.grad()[0] / static_cast<double>(m);
      auto gL = logits.mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < vocab; ++j) gL[i * vocab + j] += g * probs[i * vocab + j];
        gL[i * vocab + static_cast<std::size_t>(tv[i])] -= g;
      }
    });
  }
  return result;
}

Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  const bool flat = std::all_of(parts.begin(), parts.end(),
                                [](const Tensor& t) { return t.ndim() == 1; });
  bool grad = false;
  for (const Tensor& t : parts) {
    require_defined(t, "concat");
    grad = grad || t.requires_grad();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  Shape shape;
  std::vector<double> out;
  if (flat) {
    for (const Tensor& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());
    shape = {out.size()};
  } else if (axis == 0) {
    const std::size_t n = parts[0].cols();
    std::size_t rows = 0;
    for (const Tensor& t : parts) {
      if (t.cols() != n) {
        throw DimensionError("concat: column mismatch " + shape_string(parts[0].shape()) +
                             " vs " + shape_string(t.shape()));
      }
      rows += t.rows();
      out.insert(out.end(), t.data().begin(), t.data().end());
    }
    shape = {rows, n};
  } else {
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const Tensor& t : parts) {
      if (t.rows() != m) {
        throw DimensionError("concat: row mismatch " + shape_string(parts[0].shape()) +
                             " vs " + shape_string(t.shape()));
      }
      n += t.cols();
    }
    out.resize(m * n);
    std::size_t offset = 0;
    for (const Tensor& t : parts) {
      const std::size_t w = t.cols();
      auto D = t.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * n + offset + j] = D[i * w + j];
      offset += w;
    }
    shape = {m, n};
  }
  const bool by_columns = !flat && axis == 1;
  Tensor result = make_result(std::move(shape), std::move(out), grad, "concat");
  if (grad) {
    tape.record(inputs, result, [inputs, result, by_columns]() mutable {
      auto G = result.grad();
      if (!by_columns) {
        std::size_t offset = 0;
        for (const Tensor& t : inputs) {
          if (t.requires_grad()) {
            auto gT = t.mutable_grad();
            for (std::size_t i = 0; i < gT.size(); ++i) gT[i] += G[offset + i];
          }
          offset += t.numel();
        }
        return;
      }
      const std::size_t m = result.rows(), n = result.cols();
      std::size_t offset = 0;
      for (const Tensor& t : inputs) {
        const std::size_t w = t.cols();
        if (t.requires_grad()) {
          auto gT = t.mutable_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gT[i * w + j] += G[i * n + offset + j];
        }
        offset += w;
      }
    });
  }
  return result;
}

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t start, std::size_t len) {
  require_defined(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (len == 0 || start + len > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside " +
                         shape_string(a.shape()));
  }
  auto A = a.data();
  std::vector<double> out(m * len);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < len; ++j) out[i * len + j] = A[i * n + start + j];
  Shape shape = a.ndim() == 1 ? Shape{len} : Shape{m, len};
  Tensor result = make_result(std::move(shape), std::move(out), a.requires_grad(), "slice_cols");
  if (a.requires_grad()) {
    tape.record({a}, result, [a, result, m, n, start, len]() mutable {
      auto G = result.grad();
      auto gA = a.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) gA[i * n + start + j] += G[i * len + j];
    });
  }
  return result;
}

Tensor sum(Tape& tape, const Tensor& a) {
  require_defined(a, "sum");
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor result = make_result({1}, {total}, a.requires_grad(), "sum");
  if (a.requires_grad()) {
    tape.record({a}, result, [a, result]() mutable {
      const double g = result.grad()[0];
      for (double& v : a.mutable_grad()) v += g;
    });
  }
  return result;
}

Tensor mean(Tape& tape, const Tensor& a) {
  require_defined(a, "mean");
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_rows(Tape& tape, const Tensor& a) {
  require_defined(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  auto A = a.data();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += A[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  Tensor result = make_result({n}, std::move(out), a.requires_grad(), "mean_rows");
  if (a.requires_grad()) {
    tape.record({a}, result, [a, result, m, n]() mutable {
      auto G = result.grad();
      auto gA = a.mutable_grad();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gA[i * n + j] += G[j] * inv;
    });
  }
  return result;
}

Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, bool causal) {
  require_defined(q, "attention");
  require_defined(k, "attention");
  require_defined(v, "attention");
  const std::size_t T = q.rows(), S = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != S) {
    throw DimensionError("attention: incompatible q " + shape_string(q.shape()) +
                         ", k " + shape_string(k.shape()) + ", v " +
                         shape_string(v.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) +
                         " not divisible into " + std::to_string(heads) + " heads");
  }
  if (causal && T != S) {
    throw DimensionError("attention: causal mask needs equal query/key lengths");
  }
  const std::size_t dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  auto Q = q.data();
  auto K = k.data();
  auto V = v.data();
  // probs[h][i][j]
  std::vector<double> probs(heads * T * S, 0.0);
  std::vector<double> out(T * d, 0.0);
  std::vector<double> scores(S);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < T; ++i) {
      const std::size_t visible = causal ? i + 1 : S;
      for (std::size_t j = 0; j < visible; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += Q[i * d + off + c] * K[j * d + off + c];
        scores[j] = dot * s;
      }
      auto p = softmax_values(std::span<const double>(scores.data(), visible));
      double* prow = probs.data() + (h * T + i) * S;
      std::copy(p.begin(), p.end(), prow);
      for (std::size_t j = 0; j < visible; ++j) {
        const double pij = prow[j];
        for (std::size_t c = 0; c < dh; ++c) out[i * d + off + c] += pij * V[j * d + off + c];
      }
    }
  }
  const bool grad = q.requires_grad() || k.requires_grad() || v.requires_grad();
  Tensor result = make_result({T, d}, std::move(out), grad, "attention");
  if (grad) {
    tape.record({q, k, v}, result, [q, k, v, result, heads, T, S, d, dh, s, causal,
                                    probs = std::move(probs)]() mutable {
      auto G = result.grad();
      auto Q = q.data();
      auto K = k.data();
      auto V = v.data();
      std::vector<double> gQ(T * d, 0.0), gK(S * d, 0.0), gV(S * d, 0.0);
      std::vector<double> dp(S);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < T; ++i) {
          const std::size_t visible = causal ? i + 1 : S;
          const double* prow = probs.data() + (h * T + i) * S;
          double dot = 0.0;
          for (std::size_t j = 0; j < visible; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < dh; ++c) {
              acc += G[i * d + off + c] * V[j * d + off + c];
              gV[j * d + off + c] += prow[j] * G[i * d + off + c];
            }
            dp[j] = acc;
            dot += acc * prow[j];
          }
          for (std::size_t j = 0; j < visible; ++j) {
            const double ds = prow[j] * (dp[j] - dot) * s;
            if (ds == 0.0) continue;
            for (std::size_t c = 0; c < dh; ++c) {
              gQ[i * d + off + c] += ds * K[j * d + off + c];
              gK[j * d + off + c] += ds * Q[i * d + off + c];
            }
          }
        }
      }
      auto accumulate = [](const Tensor& t, const std::vector<double>& g) {
        if (!t.requires_grad()) return;
        auto dst = t.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      };
      accumulate(q, gQ);
      accumulate(k, gK);
      accumulate(v, gV);
    });
  }
  return result;
}

Tensor random_normal(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> values(shape_numel(shape));
  for (double& x : values) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

}  // namespace regavae::nn::ops
