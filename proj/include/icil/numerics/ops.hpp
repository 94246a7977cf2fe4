#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "icil/numerics/tensor.hpp"

// Differentiable primitives. Broadcasting is limited to leading-batch
// broadcast: in a binary elementwise op the second operand may have the
// shape of the trailing dimensions of the first, and is repeated over the
// leading ones.
namespace icil::num {

/// a: [..., m, k]; b: [k, n] (shared) or [..., k, n] (batched, same leading dims).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

Tensor silu(const Tensor& a);
Tensor abs(const Tensor& a);

/// Softmax over the last dimension.
Tensor softmax(const Tensor& a);

/// x / rms(x) * gain over the last dimension; gain has shape [last dim].
Tensor rmsnorm(const Tensor& x, const Tensor& gain, float eps = 1e-5f);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, int begin, int end);
Tensor reshape(const Tensor& a, Shape shape);

/// Gathers rows of a 2-D tensor; `embedding(table, ids)` is the same op.
Tensor index_rows(const Tensor& a, std::span<const int> rows);
inline Tensor embedding(const Tensor& table, std::span<const int> ids) { return index_rows(table, ids); }

/// Rotary position embedding on x: [n, heads * head_dim]; rotates adjacent
/// pairs within each head by angle position * base^(-2i/head_dim).
Tensor rope(const Tensor& x, std::span<const int> positions, int n_heads, float base = 10000.0f);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Mean of |pred - target| over elements whose mask entry is nonzero.
/// Both operands may carry gradients. Accumulates in double. Throws
/// std::invalid_argument when the mask selects nothing.
Tensor masked_l1(const Tensor& pred, const Tensor& target, std::span<const std::uint8_t> mask);

/// Multi-head causal attention. q: [nq, d]; k, v: [nk, d] with nk >= nq.
/// Query row i sits at absolute position (nk - nq + i) and attends to key
/// rows 0..that position.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads);

}  // namespace icil::num
