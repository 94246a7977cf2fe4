#include "icil/numerics/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace icil::num {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using StridedM = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedM = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

using Node = detail::Node;
using BackwardFn = std::function<void(Node&)>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b, const std::string& why = {}) {
  std::string msg = std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  if (!why.empty()) msg += " (" + why + ")";
  throw ShapeError(msg);
}

Node& node_of(const Tensor& t) {
  if (!t.defined()) throw std::logic_error("op applied to an undefined Tensor");
  return *t.node();
}

Tensor make_result(const char* op, Shape shape, std::vector<float> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward) {
  if (finite_checks() && !all_finite(data)) {
    throw NonFiniteError(std::string(op) + ": produced a non-finite value (output shape " + shape_str(shape) + ")");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) track = track || node_of(in).requires_grad;
  }
  if (track) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

int normalize_axis(const char* op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

// b broadcasts over a when b's shape is a suffix of a's shape.
bool is_trailing_suffix(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

enum class Binary { add, sub, mul };

Tensor binary(const char* op, Binary kind, const Tensor& a, const Tensor& b) {
  const Shape& sa = node_of(a).shape;
  const Shape& sb = node_of(b).shape;
  if (!is_trailing_suffix(sa, sb)) shape_fail(op, sa, sb, "second operand must match trailing dimensions");
  const auto& da = node_of(a).data;
  const auto& db = node_of(b).data;
  const std::size_t n = da.size();
  const std::size_t m = db.size();
  std::vector<float> out(n);
  if (m > 0) {
    for (std::size_t base = 0; base < n; base += m) {
      for (std::size_t j = 0; j < m; ++j) {
        const float x = da[base + j];
        const float y = db[j];
        out[base + j] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
      }
    }
  }
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_result(op, sa, std::move(out), {a, b}, [pa, pb, kind, n, m](Node& self) {
    const auto& g = self.grad;
    if (pa->requires_grad) {
      auto& ga = pa->grad_buffer();
      if (kind == Binary::mul) {
        for (std::size_t base = 0; base < n; base += m)
          for (std::size_t j = 0; j < m; ++j) ga[base + j] += g[base + j] * pb->data[j];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
    }
    if (pb->requires_grad) {
      auto& gb = pb->grad_buffer();
      for (std::size_t base = 0; base < n; base += m) {
        for (std::size_t j = 0; j < m; ++j) {
          const float gi = g[base + j];
          gb[j] += kind == Binary::add ? gi : kind == Binary::sub ? -gi : gi * pa->data[base + j];
        }
      }
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = node_of(a).shape;
  const Shape& sb = node_of(b).shape;
  if (sa.size() < 2 || sb.size() < 2) shape_fail("matmul", sa, sb, "both operands need rank >= 2");
  const int m = sa[sa.size() - 2];
  const int k = sa.back();
  const int kb = sb[sb.size() - 2];
  const int n = sb.back();
  if (k != kb) shape_fail("matmul", sa, sb, "inner dimensions differ");
  const bool batched = sb.size() > 2;
  if (batched && (sb.size() != sa.size() || !std::equal(sb.begin(), sb.end() - 2, sa.begin()))) {
    shape_fail("matmul", sa, sb, "batched operands need identical leading dimensions");
  }
  const std::size_t lead = shape_numel(Shape(sa.begin(), sa.end() - 2));
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  std::vector<float> out(lead * static_cast<std::size_t>(m) * n);

  const float* pa_data = node_of(a).data.data();
  const float* pb_data = node_of(b).data.data();
  if (!batched) {
    const auto rows = static_cast<Eigen::Index>(lead * static_cast<std::size_t>(m));
    MapM(out.data(), rows, n).noalias() = CMapM(pa_data, rows, k) * CMapM(pb_data, k, n);
  } else {
    for (std::size_t i = 0; i < lead; ++i) {
      MapM(out.data() + i * m * n, m, n).noalias() =
          CMapM(pa_data + i * m * k, m, k) * CMapM(pb_data + i * k * n, k, n);
    }
  }

  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                     [pa, pb, lead, m, k, n, batched](Node& self) {
                       const float* g = self.grad.data();
                       if (!batched) {
                         const auto rows = static_cast<Eigen::Index>(lead * static_cast<std::size_t>(m));
                         CMapM G(g, rows, n);
                         if (pa->requires_grad)
                           MapM(pa->grad_buffer().data(), rows, k).noalias() += G * CMapM(pb->data.data(), k, n).transpose();
                         if (pb->requires_grad)
                           MapM(pb->grad_buffer().data(), k, n).noalias() += CMapM(pa->data.data(), rows, k).transpose() * G;
                         return;
                       }
                       for (std::size_t i = 0; i < lead; ++i) {
                         CMapM G(g + i * m * n, m, n);
                         if (pa->requires_grad)
                           MapM(pa->grad_buffer().data() + i * m * k, m, k).noalias() +=
                               G * CMapM(pb->data.data() + i * k * n, k, n).transpose();
                         if (pb->requires_grad)
                           MapM(pb->grad_buffer().data() + i * k * n, k, n).noalias() +=
                               CMapM(pa->data.data() + i * m * k, m, k).transpose() * G;
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", Binary::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", Binary::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", Binary::mul, a, b); }

Tensor scale(const Tensor& a, float factor) {
  const auto& da = node_of(a).data;
  std::vector<float> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] * factor;
  Node* pa = a.node().get();
  return make_result("scale", node_of(a).shape, std::move(out), {a}, [pa, factor](Node& self) {
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * factor;
  });
}

Tensor silu(const Tensor& a) {
  const auto& da = node_of(a).data;
  std::vector<float> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] / (1.0f + std::exp(-da[i]));
  Node* pa = a.node().get();
  return make_result("silu", node_of(a).shape, std::move(out), {a}, [pa](Node& self) {
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const float x = pa->data[i];
      const float s = 1.0f / (1.0f + std::exp(-x));
      ga[i] += self.grad[i] * s * (1.0f + x * (1.0f - s));
    }
  });
}

Tensor abs(const Tensor& a) {
  const auto& da = node_of(a).data;
  std::vector<float> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = std::fabs(da[i]);
  Node* pa = a.node().get();
  return make_result("abs", node_of(a).shape, std::move(out), {a}, [pa](Node& self) {
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const float x = pa->data[i];
      ga[i] += x > 0.0f ? self.grad[i] : x < 0.0f ? -self.grad[i] : 0.0f;
    }
  });
}

Tensor softmax(const Tensor& a) {
  const Shape& s = node_of(a).shape;
  if (s.empty()) throw ShapeError("softmax: needs rank >= 1, got " + shape_str(s));
  const auto& da = node_of(a).data;
  const std::size_t cols = static_cast<std::size_t>(s.back());
  const std::size_t rows = cols ? da.size() / cols : 0;
  std::vector<float> out(da.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = da.data() + r * cols;
    float* y = out.data() + r * cols;
    const float mx = *std::max_element(x, x + cols);
    float total = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    const float inv = 1.0f / total;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
  Node* pa = a.node().get();
  return make_result("softmax", s, std::move(out), {a}, [pa, rows, cols](Node& self) {
    auto& ga = pa->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const float* y = self.data.data() + r * cols;
      const float* g = self.grad.data() + r * cols;
      float dot = 0.0f;
      for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, float eps) {
  const Shape& s = node_of(x).shape;
  const Shape& sg = node_of(gain).shape;
  if (s.empty() || sg.size() != 1 || sg[0] != s.back()) shape_fail("rmsnorm", s, sg, "gain must be [last dim]");
  const auto& dx = node_of(x).data;
  const auto& dg = node_of(gain).data;
  const std::size_t cols = static_cast<std::size_t>(s.back());
  const std::size_t rows = cols ? dx.size() / cols : 0;
  std::vector<float> out(dx.size());
  std::vector<float> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = dx.data() + r * cols;
    float ss = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) ss += xr[j] * xr[j];
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(cols) + eps);
    inv_rms[r] = inv;
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = xr[j] * inv * dg[j];
  }
  Node* px = x.node().get();
  Node* pg = gain.node().get();
  return make_result("rmsnorm", s, std::move(out), {x, gain},
                     [px, pg, rows, cols, inv_rms = std::move(inv_rms)](Node& self) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         const float* xr = px->data.data() + r * cols;
                         const float* g = self.grad.data() + r * cols;
                         const float inv = inv_rms[r];
                         if (pg->requires_grad) {
                           auto& gg = pg->grad_buffer();
                           for (std::size_t j = 0; j < cols; ++j) gg[j] += g[j] * xr[j] * inv;
                         }
                         if (px->requires_grad) {
                           auto& gx = px->grad_buffer();
                           float dot = 0.0f;  // mean(dxhat * xhat)
                           for (std::size_t j = 0; j < cols; ++j) dot += g[j] * pg->data[j] * xr[j] * inv;
                           dot /= static_cast<float>(cols);
                           for (std::size_t j = 0; j < cols; ++j) {
                             gx[r * cols + j] += inv * (g[j] * pg->data[j] - xr[j] * inv * dot);
                           }
                         }
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = node_of(parts[0]).shape;
  axis = normalize_axis("concat", axis, static_cast<int>(s0.size()));
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  const std::size_t outer = shape_numel(Shape(s0.begin(), s0.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s0.begin() + axis + 1, s0.end()));
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& sp = node_of(p).shape;
    for (std::size_t d = 0; d < s0.size(); ++d) {
      if (sp.size() != s0.size() || (static_cast<int>(d) != axis && sp[d] != s0[d])) {
        shape_fail("concat", s0, sp, "dimensions off the concat axis must agree");
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += sp[static_cast<std::size_t>(axis)];
    widths.push_back(static_cast<std::size_t>(sp[static_cast<std::size_t>(axis)]) * inner);
  }
  std::size_t row = 0;
  for (auto w : widths) row += w;
  std::vector<float> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& d = node_of(parts[i]).data;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(d.data() + o * widths[i], widths[i], out.data() + o * row + offset);
    }
    offset += widths[i];
  }
  std::vector<Node*> nodes;
  for (const auto& p : parts) nodes.push_back(p.node().get());
  auto result = make_result("concat", std::move(out_shape), std::move(out), {}, {});
  // make_result only knows fixed-arity inputs; wire the variadic graph here.
  bool track = false;
  if (grad_enabled()) {
    for (auto* n : nodes) track = track || n->requires_grad;
  }
  if (track) {
    auto& rn = *result.node();
    rn.requires_grad = true;
    rn.is_leaf = false;
    for (const auto& p : parts) rn.parents.push_back(p.node());
    rn.backward = [nodes, widths, outer, row](Node& self) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i]->requires_grad) {
          auto& g = nodes[i]->grad_buffer();
          for (std::size_t o = 0; o < outer; ++o) {
            const float* src = self.grad.data() + o * row + off;
            float* dst = g.data() + o * widths[i];
            for (std::size_t j = 0; j < widths[i]; ++j) dst[j] += src[j];
          }
        }
        off += widths[i];
      }
    };
  }
  return result;
}

Tensor slice(const Tensor& a, int axis, int begin, int end) {
  const Shape& s = node_of(a).shape;
  axis = normalize_axis("slice", axis, static_cast<int>(s.size()));
  const int extent = s[static_cast<std::size_t>(axis)];
  if (begin < 0 || end > extent || begin > end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of shape " + shape_str(s));
  }
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s.begin() + axis + 1, s.end()));
  const std::size_t src_row = static_cast<std::size_t>(extent) * inner;
  const std::size_t dst_row = static_cast<std::size_t>(end - begin) * inner;
  const std::size_t off = static_cast<std::size_t>(begin) * inner;
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = end - begin;
  const auto& d = node_of(a).data;
  std::vector<float> out(outer * dst_row);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(d.data() + o * src_row + off, dst_row, out.data() + o * dst_row);
  Node* pa = a.node().get();
  return make_result("slice", std::move(out_shape), std::move(out), {a},
                     [pa, outer, src_row, dst_row, off](Node& self) {
                       auto& g = pa->grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t j = 0; j < dst_row; ++j) g[o * src_row + off + j] += self.grad[o * dst_row + j];
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != node_of(a).data.size()) {
    shape_fail("reshape", node_of(a).shape, shape, "element counts differ");
  }
  Node* pa = a.node().get();
  return make_result("reshape", std::move(shape), node_of(a).data, {a}, [pa](Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor index_rows(const Tensor& a, std::span<const int> rows) {
  const Shape& s = node_of(a).shape;
  if (s.size() != 2) throw ShapeError("index_rows: needs a 2-D tensor, got " + shape_str(s));
  const int n_rows = s[0];
  const std::size_t cols = static_cast<std::size_t>(s[1]);
  const auto& d = node_of(a).data;
  std::vector<float> out(rows.size() * cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n_rows) {
      throw ShapeError("index_rows: row " + std::to_string(rows[i]) + " out of range for shape " + shape_str(s));
    }
    std::copy_n(d.data() + static_cast<std::size_t>(rows[i]) * cols, cols, out.data() + i * cols);
  }
  Node* pa = a.node().get();
  std::vector<int> idx(rows.begin(), rows.end());
  return make_result("index_rows", {static_cast<int>(rows.size()), s[1]}, std::move(out), {a},
                     [pa, cols, idx = std::move(idx)](Node& self) {
                       auto& g = pa->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         float* dst = g.data() + static_cast<std::size_t>(idx[i]) * cols;
                         const float* src = self.grad.data() + i * cols;
                         for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor rope(const Tensor& x, std::span<const int> positions, int n_heads, float base) {
  const Shape& s = node_of(x).shape;
  if (s.size() != 2 || n_heads <= 0 || s[1] % n_heads != 0 || (s[1] / n_heads) % 2 != 0) {
    throw ShapeError("rope: shape " + shape_str(s) + " incompatible with " + std::to_string(n_heads) +
                     " heads of even width");
  }
  if (static_cast<int>(positions.size()) != s[0]) {
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for shape " + shape_str(s));
  }
  const int rows = s[0];
  const int d = s[1];
  const int head_dim = d / n_heads;
  const int half = head_dim / 2;
  // cos/sin table per (row, pair)
  std::vector<float> cs(static_cast<std::size_t>(rows) * half * 2);
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::pow(static_cast<double>(base), -2.0 * j / head_dim);
      const double angle = positions[static_cast<std::size_t>(r)] * freq;
      cs[(static_cast<std::size_t>(r) * half + j) * 2] = static_cast<float>(std::cos(angle));
      cs[(static_cast<std::size_t>(r) * half + j) * 2 + 1] = static_cast<float>(std::sin(angle));
    }
  }
  const auto& dx = node_of(x).data;
  std::vector<float> out(dx.size());
  for (int r = 0; r < rows; ++r) {
    for (int h = 0; h < n_heads; ++h) {
      for (int j = 0; j < half; ++j) {
        const std::size_t i0 = static_cast<std::size_t>(r) * d + h * head_dim + 2 * j;
        const float c = cs[(static_cast<std::size_t>(r) * half + j) * 2];
        const float sn = cs[(static_cast<std::size_t>(r) * half + j) * 2 + 1];
        out[i0] = dx[i0] * c - dx[i0 + 1] * sn;
        out[i0 + 1] = dx[i0] * sn + dx[i0 + 1] * c;
      }
    }
  }
  Node* px = x.node().get();
  return make_result("rope", s, std::move(out), {x},
                     [px, rows, d, n_heads, head_dim, half, cs = std::move(cs)](Node& self) {
                       auto& g = px->grad_buffer();
                       for (int r = 0; r < rows; ++r) {
                         for (int h = 0; h < n_heads; ++h) {
                           for (int j = 0; j < half; ++j) {
                             const std::size_t i0 = static_cast<std::size_t>(r) * d + h * head_dim + 2 * j;
                             const float c = cs[(static_cast<std::size_t>(r) * half + j) * 2];
                             const float sn = cs[(static_cast<std::size_t>(r) * half + j) * 2 + 1];
                             const float g0 = self.grad[i0];
                             const float g1 = self.grad[i0 + 1];
                             g[i0] += g0 * c + g1 * sn;
                             g[i0 + 1] += -g0 * sn + g1 * c;
                           }
                         }
                       }
                     });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (float v : node_of(a).data) total += v;
  Node* pa = a.node().get();
  return make_result("sum", {}, {static_cast<float>(total)}, {a}, [pa](Node& self) {
    auto& g = pa->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const auto n = node_of(a).data.size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0f / static_cast<float>(n));
}

Tensor masked_l1(const Tensor& pred, const Tensor& target, std::span<const std::uint8_t> mask) {
  const Shape& sp = node_of(pred).shape;
  const Shape& st = node_of(target).shape;
  if (sp != st) shape_fail("masked_l1", sp, st, "prediction and target must match");
  const auto& dp = node_of(pred).data;
  const auto& dt = node_of(target).data;
  if (mask.size() != dp.size()) {
    throw ShapeError("masked_l1: mask has " + std::to_string(mask.size()) + " entries for " +
                     std::to_string(dp.size()) + " elements");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < dp.size(); ++i) {
    if (!mask[i]) continue;
    total += std::abs(static_cast<double>(dp[i]) - static_cast<double>(dt[i]));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("masked_l1: mask selects no elements");
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  Node* pp = pred.node().get();
  Node* pt = target.node().get();
  const float inv = static_cast<float>(1.0 / static_cast<double>(count));
  return make_result("masked_l1", {}, {static_cast<float>(total / static_cast<double>(count))}, {pred, target},
                     [pp, pt, keep = std::move(keep), inv](Node& self) {
                       const float g = self.grad[0] * inv;
                       for (std::size_t i = 0; i < keep.size(); ++i) {
                         if (!keep[i]) continue;
                         const float diff = pp->data[i] - pt->data[i];
                         const float s = diff > 0.0f ? g : diff < 0.0f ? -g : 0.0f;
                         if (pp->requires_grad) pp->grad_buffer()[i] += s;
                         if (pt->requires_grad) pt->grad_buffer()[i] -= s;
                       }
                     });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads) {
  const Shape& sq = node_of(q).shape;
  const Shape& sk = node_of(k).shape;
  const Shape& sv = node_of(v).shape;
  if (sq.size() != 2 || sk.size() != 2 || sv != sk || sq[1] != sk[1]) {
    shape_fail("causal_attention", sq, sk, "q is [nq, d], k and v are [nk, d]");
  }
  const int nq = sq[0];
  const int nk = sk[0];
  const int d = sq[1];
  if (nk < nq) shape_fail("causal_attention", sq, sk, "fewer keys than queries");
  if (n_heads <= 0 || d % n_heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const int hd = d / n_heads;
  const int offset = nk - nq;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
  const bool keep_probs = grad_enabled() && (node_of(q).requires_grad || node_of(k).requires_grad ||
                                             node_of(v).requires_grad);

  std::vector<float> out(static_cast<std::size_t>(nq) * d);
  std::vector<RowMat> probs;
  if (keep_probs) probs.reserve(static_cast<std::size_t>(n_heads));
  RowMat scores(nq, nk);
  const float* qd = node_of(q).data.data();
  const float* kd = node_of(k).data.data();
  const float* vd = node_of(v).data.data();
  for (int h = 0; h < n_heads; ++h) {
    CStridedM qh(qd + h * hd, nq, hd, Eigen::OuterStride<>(d));
    CStridedM kh(kd + h * hd, nk, hd, Eigen::OuterStride<>(d));
    CStridedM vh(vd + h * hd, nk, hd, Eigen::OuterStride<>(d));
    scores.noalias() = qh * kh.transpose();
    for (int i = 0; i < nq; ++i) {
      float* row = scores.data() + static_cast<std::size_t>(i) * nk;
      const int last = offset + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (int j = 0; j <= last; ++j) {
        row[j] *= inv_sqrt;
        mx = std::max(mx, row[j]);
      }
      float total = 0.0f;
      for (int j = 0; j <= last; ++j) {
        row[j] = std::exp(row[j] - mx);
        total += row[j];
      }
      const float inv = 1.0f / total;
      for (int j = 0; j <= last; ++j) row[j] *= inv;
      for (int j = last + 1; j < nk; ++j) row[j] = 0.0f;
    }
    StridedM(out.data() + h * hd, nq, hd, Eigen::OuterStride<>(d)).noalias() = scores * vh;
    if (keep_probs) probs.push_back(scores);
  }

  Node* pq = q.node().get();
  Node* pk = k.node().get();
  Node* pv = v.node().get();
  return make_result("causal_attention", sq, std::move(out), {q, k, v},
                     [pq, pk, pv, nq, nk, d, hd, n_heads, inv_sqrt, probs = std::move(probs)](Node& self) {
                       RowMat dp(nq, nk);
                       for (int h = 0; h < n_heads; ++h) {
                         const RowMat& p = probs[static_cast<std::size_t>(h)];
                         CStridedM go(self.grad.data() + h * hd, nq, hd, Eigen::OuterStride<>(d));
                         CStridedM qh(pq->data.data() + h * hd, nq, hd, Eigen::OuterStride<>(d));
                         CStridedM kh(pk->data.data() + h * hd, nk, hd, Eigen::OuterStride<>(d));
                         CStridedM vh(pv->data.data() + h * hd, nk, hd, Eigen::OuterStride<>(d));
                         if (pv->requires_grad) {
                           StridedM(pv->grad_buffer().data() + h * hd, nk, hd, Eigen::OuterStride<>(d)).noalias() +=
                               p.transpose() * go;
                         }
                         if (!pq->requires_grad && !pk->requires_grad) continue;
                         dp.noalias() = go * vh.transpose();
                         for (int i = 0; i < nq; ++i) {
                           float* dr = dp.data() + static_cast<std::size_t>(i) * nk;
                           const float* pr = p.data() + static_cast<std::size_t>(i) * nk;
                           float dot = 0.0f;
                           for (int j = 0; j < nk; ++j) dot += dr[j] * pr[j];
                           for (int j = 0; j < nk; ++j) dr[j] = pr[j] * (dr[j] - dot) * inv_sqrt;
                         }
                         if (pq->requires_grad) {
                           StridedM(pq->grad_buffer().data() + h * hd, nq, hd, Eigen::OuterStride<>(d)).noalias() +=
                               dp * kh;
                         }
                         if (pk->requires_grad) {
                           StridedM(pk->grad_buffer().data() + h * hd, nk, hd, Eigen::OuterStride<>(d)).noalias() +=
                               dp.transpose() * qh;
                         }
                       }
                     });
}

}  // namespace icil::num
