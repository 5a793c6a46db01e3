#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mvke/tensor.hpp"

namespace mvke {

/// Lower bound applied to vector norms inside cosine similarity.
inline constexpr double kNormFloor = 1e-12;
/// Probability clamp used by the binary cross-entropy loss.
inline constexpr double kBceEpsilon = 1e-7;

/// Number of cosine evaluations whose denominator had to be clamped.
inline std::atomic<std::uint64_t>& degenerate_norm_count() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

namespace kernels {

// c[n x m] += a[n x k] * b[k x m], all row-major. Inner loop is an axpy over
// the output row so it vectorizes without reassociating any sum; each output
// row is accumulated in the same order regardless of n.
template <typename T>
void gemm_acc_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t n, std::size_t k,
                 std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* __restrict crow = c + i * m;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
  return out;
}

// c[n x m] += a[n x k] * op(b), op(b) = b [k x m] or b^T with b stored [m x k].
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m, bool transpose_b) {
  if (!transpose_b) {
    gemm_acc_nn(a, b, c, n, k, m);
  } else {
    const auto bt = transposed(b, m, k);
    gemm_acc_nn(a, bt.data(), c, n, k, m);
  }
}

// Gradients of c = a * op(b) given dc; either output pointer may be null.
template <typename T>
void gemm_backward(const T* a, const T* b, const T* dc, T* da, T* db, std::size_t n, std::size_t k,
                   std::size_t m, bool transpose_b) {
  if (da) {
    // da[n x k] += dc[n x m] * op(b)^T
    if (!transpose_b) {
      const auto bt = transposed(b, k, m);  // [m x k]
      gemm_acc_nn(dc, bt.data(), da, n, m, k);
    } else {
      gemm_acc_nn(dc, b, da, n, m, k);
    }
  }
  if (db) {
    for (std::size_t i = 0; i < n; ++i) {
      const T* arow = a + i * k;
      const T* dcrow = dc + i * m;
      if (!transpose_b) {
        // db[k x m] += a^T dc
        for (std::size_t p = 0; p < k; ++p) {
          const T av = arow[p];
          T* __restrict dbrow = db + p * m;
          for (std::size_t j = 0; j < m; ++j) dbrow[j] += av * dcrow[j];
        }
      } else {
        // db[m x k] += dc^T a
        for (std::size_t j = 0; j < m; ++j) {
          const T g = dcrow[j];
          T* __restrict dbrow = db + j * k;
          for (std::size_t p = 0; p < k; ++p) dbrow[p] += g * arow[p];
        }
      }
    }
  }
}

}  // namespace kernels

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw ConfigError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return detail::make_result<T>("reshape", std::move(shape), x.values(), {x}, [](detail::Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ConfigError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (T* g = detail::parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ConfigError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (T* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

/// x * c for a compile-time-known constant c.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  return detail::make_result<T>("scale", x.shape(), std::move(out), {x}, [c](detail::Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
  });
}

/// x * s where s is a single-element tensor (e.g. a learnable temperature).
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1) throw ConfigError("scale_by expects a single-element scale");
  const T sv = s[0];
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * sv;
  return detail::make_result<T>("scale_by", x.shape(), std::move(out), {x, s}, [](detail::Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const T sv = self.parents[1]->value[0];
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * sv;
    if (T* g = detail::parent_grad(self, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xv[i];
      g[0] += acc;
    }
  });
}

/// Adds a bias vector along the last axis.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t d = x.shape().back();
  if (bias.size() != d)
    throw ConfigError("add_bias: bias of size " + std::to_string(bias.size()) + " for last dim " +
                      std::to_string(d));
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % d];
  return detail::make_result<T>("add_bias", x.shape(), std::move(out), {x, bias},
                                [d](detail::Node<T>& self) {
                                  if (T* g = detail::parent_grad(self, 0))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                                  if (T* g = detail::parent_grad(self, 1))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
                                });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return detail::make_result<T>("tanh", x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T y = self.value[i];
        g[i] += self.grad[i] * (T(1) - y * y);
      }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return detail::make_result<T>("relu", x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (xv[i] > T(0)) g[i] += self.grad[i];
  });
}

namespace detail {
template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace detail

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(x[i]);
  return detail::make_result<T>("sigmoid", x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T y = self.value[i];
        g[i] += self.grad[i] * y * (T(1) - y);
      }
  });
}

/// Softmax over the last axis, max-shifted for stability.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  detail::check_finite<T>("softmax input", x.data());
  const std::size_t n = x.shape().back();
  const std::size_t groups = n == 0 ? 0 : x.size() / n;
  std::vector<T> out(x.size());
  for (std::size_t g = 0; g < groups; ++g) {
    const T* in = x.data().data() + g * n;
    T* o = out.data() + g * n;
    T mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = std::exp(in[i] - mx);
      total += o[i];
    }
    for (std::size_t i = 0; i < n; ++i) o[i] /= total;
  }
  return detail::make_result<T>("softmax", x.shape(), std::move(out), {x}, [n, groups](detail::Node<T>& self) {
    T* g = detail::parent_grad(self, 0);
    if (!g) return;
    for (std::size_t grp = 0; grp < groups; ++grp) {
      const T* y = self.value.data() + grp * n;
      const T* dy = self.grad.data() + grp * n;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += y[i] * dy[i];
      for (std::size_t i = 0; i < n; ++i) g[grp * n + i] += y[i] * (dy[i] - dot);
    }
  });
}

/// [n x k] * [k x m] -> [n x m]; with transpose_b, b is stored [m x k].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  if (a.rank() != 2 || b.rank() != 2) throw ConfigError("matmul expects rank-2 operands");
  const std::size_t n = a.dim(0), k = a.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t m = transpose_b ? b.dim(0) : b.dim(1);
  if (k != kb)
    throw ConfigError("matmul: inner dimension mismatch " + shape_str(a.shape()) + " * " +
                      shape_str(b.shape()) + (transpose_b ? "^T" : ""));
  std::vector<T> out(n * m, T(0));
  kernels::gemm_acc(a.data().data(), b.data().data(), out.data(), n, k, m, transpose_b);
  return detail::make_result<T>("matmul", {n, m}, std::move(out), {a, b},
                                [n, k, m, transpose_b](detail::Node<T>& self) {
                                  kernels::gemm_backward(self.parents[0]->value.data(),
                                                         self.parents[1]->value.data(), self.grad.data(),
                                                         detail::parent_grad(self, 0),
                                                         detail::parent_grad(self, 1), n, k, m, transpose_b);
                                });
}

/// Batched matmul: [G x p x q] * [G x q x r] -> [G x p x r].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3) throw ConfigError("bmm expects rank-3 operands");
  const std::size_t groups = a.dim(0);
  const std::size_t p = a.dim(1), q = a.dim(2);
  const std::size_t qb = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t r = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != groups || q != qb)
    throw ConfigError("bmm: dimension mismatch " + shape_str(a.shape()) + " * " + shape_str(b.shape()) +
                      (transpose_b ? "^T" : ""));
  std::vector<T> out(groups * p * r, T(0));
  for (std::size_t g = 0; g < groups; ++g)
    kernels::gemm_acc(a.data().data() + g * p * q, b.data().data() + g * q * r, out.data() + g * p * r, p, q,
                      r, transpose_b);
  return detail::make_result<T>(
      "bmm", {groups, p, r}, std::move(out), {a, b}, [groups, p, q, r, transpose_b](detail::Node<T>& self) {
        T* da = detail::parent_grad(self, 0);
        T* db = detail::parent_grad(self, 1);
        for (std::size_t g = 0; g < groups; ++g)
          kernels::gemm_backward(self.parents[0]->value.data() + g * p * q,
                                 self.parents[1]->value.data() + g * q * r, self.grad.data() + g * p * r,
                                 da ? da + g * p * q : nullptr, db ? db + g * q * r : nullptr, p, q, r,
                                 transpose_b);
      });
}

/// Row lookup with scatter-add gradient.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::vector<std::size_t> rows) {
  if (table.rank() != 2) throw ConfigError("gather_rows expects a rank-2 table");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= vocab)
      throw DataError("row index " + std::to_string(rows[i]) + " out of range for table with " +
                      std::to_string(vocab) + " rows");
    std::copy_n(table.data().data() + rows[i] * d, d, out.data() + i * d);
  }
  const std::size_t n = rows.size();
  return detail::make_result<T>("gather_rows", {n, d}, std::move(out), {table},
                                [rows = std::move(rows), d](detail::Node<T>& self) {
                                  if (T* g = detail::parent_grad(self, 0))
                                    for (std::size_t i = 0; i < rows.size(); ++i)
                                      for (std::size_t j = 0; j < d; ++j) g[rows[i] * d + j] += self.grad[i * d + j];
                                });
}

/// Ragged lookup: output row i is the mean of table rows
/// indices[offsets[i] .. offsets[i+1]). Every bag must be nonempty.
template <typename T>
Tensor<T> embedding_bag_mean(const Tensor<T>& table, std::vector<std::size_t> offsets,
                             std::vector<std::size_t> indices) {
  if (table.rank() != 2) throw ConfigError("embedding_bag_mean expects a rank-2 table");
  if (offsets.empty() || offsets.back() != indices.size())
    throw ConfigError("embedding_bag_mean: offsets do not cover indices");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  const std::size_t n = offsets.size() - 1;
  std::vector<T> out(n * d, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t begin = offsets[i], end = offsets[i + 1];
    if (end <= begin) throw DataError("embedding_bag_mean: empty bag at row " + std::to_string(i));
    T* o = out.data() + i * d;
    for (std::size_t p = begin; p < end; ++p) {
      if (indices[p] >= vocab)
        throw DataError("index " + std::to_string(indices[p]) + " out of range for vocabulary of " +
                        std::to_string(vocab));
      const T* row = table.data().data() + indices[p] * d;
      for (std::size_t j = 0; j < d; ++j) o[j] += row[j];
    }
    const T inv = T(1) / static_cast<T>(end - begin);
    for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
  }
  return detail::make_result<T>(
      "embedding_bag_mean", {n, d}, std::move(out), {table},
      [offsets = std::move(offsets), indices = std::move(indices), d, n](detail::Node<T>& self) {
        T* g = detail::parent_grad(self, 0);
        if (!g) return;
        for (std::size_t i = 0; i < n; ++i) {
          const T inv = T(1) / static_cast<T>(offsets[i + 1] - offsets[i]);
          for (std::size_t p = offsets[i]; p < offsets[i + 1]; ++p)
            for (std::size_t j = 0; j < d; ++j) g[indices[p] * d + j] += self.grad[i * d + j] * inv;
        }
      });
}

/// Mean over one axis; the axis is removed from the shape.
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ConfigError("mean: axis out of range");
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<T> out(outer * inner, T(0));
  const T inv = T(1) / static_cast<T>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
  for (auto& v : out) v *= inv;
  return detail::make_result<T>("mean", std::move(out_shape), std::move(out), {x},
                                [outer, inner, len, inv](detail::Node<T>& self) {
                                  T* g = detail::parent_grad(self, 0);
                                  if (!g) return;
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t l = 0; l < len; ++l)
                                      for (std::size_t i = 0; i < inner; ++i)
                                        g[(o * len + l) * inner + i] += self.grad[o * inner + i] * inv;
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return detail::make_result<T>("sum", {1}, {total}, {x}, [](detail::Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
  });
}

/// Concatenates rank-2 tensors sharing their row count along axis 1.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) throw ConfigError("concat_cols: row count mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(rows * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[k].data().data() + r * widths[k], widths[k], out.data() + r * total + col);
    col += widths[k];
  }
  return detail::make_result<T>("concat_cols", {rows, total}, std::move(out), parts,
                                [rows, total, widths = std::move(widths)](detail::Node<T>& self) {
                                  std::size_t c = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    if (T* g = detail::parent_grad(self, k))
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          g[r * widths[k] + j] += self.grad[r * total + c + j];
                                    c += widths[k];
                                  }
                                });
}

/// Repeats x `groups` times along a new leading axis; gradient sums back.
template <typename T>
Tensor<T> broadcast_batch(const Tensor<T>& x, std::size_t groups) {
  const std::size_t n = x.size();
  std::vector<T> out(groups * n);
  for (std::size_t g = 0; g < groups; ++g) std::copy_n(x.data().data(), n, out.data() + g * n);
  Shape shape{groups};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  return detail::make_result<T>("broadcast_batch", std::move(shape), std::move(out), {x},
                                [groups, n](detail::Node<T>& self) {
                                  if (T* g = detail::parent_grad(self, 0))
                                    for (std::size_t grp = 0; grp < groups; ++grp)
                                      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[grp * n + i];
                                });
}

/// Row-wise cosine similarity. Rank-1 inputs give a [1] result, rank-2
/// [B x d] inputs give [B]. Norms below kNormFloor are clamped (and counted).
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ConfigError("cosine_similarity: shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  if (a.rank() != 1 && a.rank() != 2) throw ConfigError("cosine_similarity expects rank 1 or 2");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.rank() == 1 ? 1 : a.dim(0);
  const T floor = static_cast<T>(kNormFloor);
  // Per row: dot, |a| (clamped), |b| (clamped), clamp flags.
  struct RowStats {
    T dot, na, nb;
    bool a_clamped, b_clamped;
  };
  std::vector<RowStats> stats(rows);
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * d;
    const T* y = b.data().data() + r * d;
    T dot = 0, xx = 0, yy = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += x[j] * y[j];
      xx += x[j] * x[j];
      yy += y[j] * y[j];
    }
    RowStats s{dot, std::sqrt(xx), std::sqrt(yy), false, false};
    if (s.na < floor) s = {s.dot, floor, s.nb, true, s.b_clamped};
    if (s.nb < floor) s = {s.dot, s.na, floor, s.a_clamped, true};
    if (s.a_clamped || s.b_clamped) degenerate_norm_count().fetch_add(1, std::memory_order_relaxed);
    stats[r] = s;
    out[r] = dot / (s.na * s.nb);
  }
  return detail::make_result<T>(
      "cosine_similarity", {rows}, std::move(out), {a, b},
      [stats = std::move(stats), rows, d](detail::Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        T* ga = detail::parent_grad(self, 0);
        T* gb = detail::parent_grad(self, 1);
        for (std::size_t r = 0; r < rows; ++r) {
          const auto& s = stats[r];
          const T g = self.grad[r];
          const T cosv = self.value[r];
          const T denom = s.na * s.nb;
          for (std::size_t j = 0; j < d; ++j) {
            const T x = av[r * d + j], y = bv[r * d + j];
            if (ga) ga[r * d + j] += g * (y / denom - (s.a_clamped ? T(0) : cosv * x / (s.na * s.na)));
            if (gb) gb[r * d + j] += g * (x / denom - (s.b_clamped ? T(0) : cosv * y / (s.nb * s.nb)));
          }
        }
      });
}

/// Negated mean binary cross-entropy with p clamped to [eps, 1 - eps].
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, std::span<const T> labels) {
  if (p.size() != labels.size())
    throw ConfigError("bce_loss: " + std::to_string(p.size()) + " predictions vs " +
                      std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw ConfigError("bce_loss: empty batch");
  const T eps = static_cast<T>(kBceEpsilon);
  const T lo = eps, hi = T(1) - eps;
  std::vector<T> y(labels.begin(), labels.end());
  T total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != T(0) && y[i] != T(1)) throw DataError("bce_loss: label must be 0 or 1");
    const T pc = std::clamp(p[i], lo, hi);
    total -= y[i] == T(1) ? std::log(pc) : std::log(T(1) - pc);
  }
  const T n = static_cast<T>(y.size());
  return detail::make_result<T>("bce_loss", {1}, {total / n}, {p}, [y = std::move(y), lo, hi, n](detail::Node<T>& self) {
    T* g = detail::parent_grad(self, 0);
    if (!g) return;
    const auto& pv = self.parents[0]->value;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (pv[i] < lo || pv[i] > hi) continue;  // clamp has zero slope
      const T d = y[i] == T(1) ? -T(1) / pv[i] : T(1) / (T(1) - pv[i]);
      g[i] += self.grad[0] * d / n;
    }
  });
}

template <typename T>
struct Attention {
  Tensor<T> out;
  Tensor<T> weights;
};

/// softmax(Q K^T / sqrt(d)) V for batched operands:
/// Q [G x q x d], K [G x n x d], V [G x n x v] -> out [G x q x v], weights [G x q x n].
template <typename T>
Attention<T> batched_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    throw ConfigError("batched_attention expects rank-3 operands");
  if (q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0) || q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1))
    throw ConfigError("batched_attention: dimension mismatch Q" + shape_str(q.shape()) + " K" +
                      shape_str(k.shape()) + " V" + shape_str(v.shape()));
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(q.dim(2)));
  auto weights = softmax(scale(bmm(q, k, /*transpose_b=*/true), inv_sqrt_d));
  return {bmm(weights, v), weights};
}

/// Unbatched form: Q [q x d], K [n x d], V [n x v].
template <typename T>
Attention<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ConfigError("scaled_dot_attention expects rank-2 operands");
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0))
    throw ConfigError("scaled_dot_attention: dimension mismatch Q" + shape_str(q.shape()) + " K" +
                      shape_str(k.shape()) + " V" + shape_str(v.shape()));
  auto r = batched_attention(reshape(q, {1, q.dim(0), q.dim(1)}), reshape(k, {1, k.dim(0), k.dim(1)}),
                             reshape(v, {1, v.dim(0), v.dim(1)}));
  return {reshape(r.out, {q.dim(0), v.dim(1)}), reshape(r.weights, {q.dim(0), k.dim(0)})};
}

}  // namespace mvke
