#include "l2p/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace l2p {
namespace {

template <typename S>
using NodePtr = std::shared_ptr<detail::Node<S>>;

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
}

template <typename S>
void require_rank(const Tensor<S>& x, Index rank, const char* op) {
  if (x.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(x.shape()));
}

Index normalize_axis(Index axis, Index rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw DimensionError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  return axis;
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  return Tensor<S>::make_result(a.shape(), a.values() + b.values(), {a.node(), b.node()},
                                [](auto& self) {
                                  self.parents[0]->accumulate(self.grad);
                                  self.parents[1]->accumulate(self.grad);
                                });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "sub");
  return Tensor<S>::make_result(a.shape(), a.values() - b.values(), {a.node(), b.node()},
                                [](auto& self) {
                                  self.parents[0]->accumulate(self.grad);
                                  self.parents[1]->accumulate(-self.grad);
                                });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "mul");
  return Tensor<S>::make_result(
      a.shape(), a.values().cwiseProduct(b.values()), {a.node(), b.node()}, [](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        pa.accumulate(self.grad.cwiseProduct(pb.value));
        pb.accumulate(self.grad.cwiseProduct(pa.value));
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  return Tensor<S>::make_result(x.shape(), x.values() * factor, {x.node()},
                                [factor](auto& self) {
                                  self.parents[0]->accumulate(self.grad * factor);
                                });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  return Tensor<S>::make_result(
      Shape{}, Vector<S>::Constant(1, x.values().sum()), {x.node()}, [](auto& self) {
        auto& p = *self.parents[0];
        p.accumulate(Vector<S>::Constant(p.value.size(), self.grad[0]));
      });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.size()));
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  return Tensor<S>::make_result(std::move(shape), x.values(), {x.node()},
                                [](auto& self) { self.parents[0]->accumulate(self.grad); });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " are incompatible");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Vector<S> out(m * n);
  MatrixMap<S>(out.data(), m, n).noalias() =
      ConstMatrixMap<S>(a.values().data(), m, k) * ConstMatrixMap<S>(b.values().data(), k, n);
  return Tensor<S>::make_result({m, n}, std::move(out), {a.node(), b.node()},
                                [m, k, n](auto& self) {
                                  auto& pa = *self.parents[0];
                                  auto& pb = *self.parents[1];
                                  ConstMatrixMap<S> g(self.grad.data(), m, n);
                                  if (pa.requires_grad)
                                    MatrixMap<S>(pa.grad_buffer().data(), m, k).noalias() +=
                                        g * ConstMatrixMap<S>(pb.value.data(), k, n).transpose();
                                  if (pb.requires_grad)
                                    MatrixMap<S>(pb.grad_buffer().data(), k, n).noalias() +=
                                        ConstMatrixMap<S>(pa.value.data(), m, k).transpose() * g;
                                });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || x.dim(-1) != weight.dim(0))
    throw DimensionError("linear: input " + shape_string(x.shape()) + " and weight " +
                         shape_string(weight.shape()) + " are incompatible");
  const Index k = weight.dim(0), n = weight.dim(1), rows = x.size() / k;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != n))
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " for weight " +
                         shape_string(weight.shape()));
  Vector<S> out(rows * n);
  MatrixMap<S> y(out.data(), rows, n);
  y.noalias() = ConstMatrixMap<S>(x.values().data(), rows, k) *
                ConstMatrixMap<S>(weight.values().data(), k, n);
  if (has_bias) y.rowwise() += bias.values().transpose();
  Shape shape = x.shape();
  shape.back() = n;
  std::vector<NodePtr<S>> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return Tensor<S>::make_result(
      std::move(shape), std::move(out), std::move(parents), [rows, k, n](auto& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        ConstMatrixMap<S> g(self.grad.data(), rows, n);
        if (px.requires_grad)
          MatrixMap<S>(px.grad_buffer().data(), rows, k).noalias() +=
              g * ConstMatrixMap<S>(pw.value.data(), k, n).transpose();
        if (pw.requires_grad)
          MatrixMap<S>(pw.grad_buffer().data(), k, n).noalias() +=
              ConstMatrixMap<S>(px.value.data(), rows, k).transpose() * g;
        if (self.parents.size() > 2 && self.parents[2]->requires_grad)
          self.parents[2]->grad_buffer() += g.colwise().sum().transpose();
      });
}

template <typename S>
Tensor<S> batched_matmul(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index bk = transpose_b ? b.dim(2) : b.dim(1);
  const Index n = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != batch || bk != k)
    throw DimensionError("batched_matmul: shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " are incompatible");
  const Index bsz = k * n;
  Vector<S> out(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    ConstMatrixMap<S> ai(a.values().data() + i * m * k, m, k);
    MatrixMap<S> yi(out.data() + i * m * n, m, n);
    if (transpose_b)
      yi.noalias() = ai * ConstMatrixMap<S>(b.values().data() + i * bsz, n, k).transpose();
    else
      yi.noalias() = ai * ConstMatrixMap<S>(b.values().data() + i * bsz, k, n);
  }
  return Tensor<S>::make_result(
      {batch, m, n}, std::move(out), {a.node(), b.node()},
      [batch, m, k, n, transpose_b](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (Index i = 0; i < batch; ++i) {
          ConstMatrixMap<S> g(self.grad.data() + i * m * n, m, n);
          ConstMatrixMap<S> ai(pa.value.data() + i * m * k, m, k);
          if (transpose_b) {
            ConstMatrixMap<S> bi(pb.value.data() + i * n * k, n, k);
            if (pa.requires_grad)
              MatrixMap<S>(pa.grad_buffer().data() + i * m * k, m, k).noalias() += g * bi;
            if (pb.requires_grad)
              MatrixMap<S>(pb.grad_buffer().data() + i * n * k, n, k).noalias() +=
                  g.transpose() * ai;
          } else {
            ConstMatrixMap<S> bi(pb.value.data() + i * k * n, k, n);
            if (pa.requires_grad)
              MatrixMap<S>(pa.grad_buffer().data() + i * m * k, m, k).noalias() +=
                  g * bi.transpose();
            if (pb.requires_grad)
              MatrixMap<S>(pb.grad_buffer().data() + i * k * n, k, n).noalias() +=
                  ai.transpose() * g;
          }
        }
      });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, Index axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  Index outer = 1, inner = 1;
  const Index extent = x.dim(axis);
  for (Index i = 0; i < axis; ++i) outer *= x.dim(i);
  for (Index i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Vector<S> out(x.size());
  const S* in = x.values().data();
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < inner; ++j) {
      const Index base = o * extent * inner + j;
      S hi = in[base];
      for (Index e = 1; e < extent; ++e) hi = std::max(hi, in[base + e * inner]);
      S total = 0;
      for (Index e = 0; e < extent; ++e) {
        const S v = std::exp(in[base + e * inner] - hi);
        out[base + e * inner] = v;
        total += v;
      }
      for (Index e = 0; e < extent; ++e) out[base + e * inner] /= total;
    }
  }
  return Tensor<S>::make_result(
      x.shape(), std::move(out), {x.node()}, [outer, inner, extent](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        const S* y = self.value.data();
        const S* dy = self.grad.data();
        for (Index o = 0; o < outer; ++o) {
          for (Index j = 0; j < inner; ++j) {
            const Index base = o * extent * inner + j;
            S dot = 0;
            for (Index e = 0; e < extent; ++e) dot += dy[base + e * inner] * y[base + e * inner];
            for (Index e = 0; e < extent; ++e) {
              const Index at = base + e * inner;
              g[at] += y[at] * (dy[at] - dot);
            }
          }
        }
      });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const Index n = x.dim(-1);
  if (gain.size() != n || bias.size() != n)
    throw DimensionError("layer_norm: gain/bias must match last extent of " +
                         shape_string(x.shape()));
  const Index rows = x.size() / n;
  ConstMatrixMap<S> in(x.values().data(), rows, n);
  Vector<S> normalized(x.size());
  Vector<S> inv_std(rows);
  MatrixMap<S> xhat(normalized.data(), rows, n);
  for (Index r = 0; r < rows; ++r) {
    const S mu = in.row(r).mean();
    const S var = (in.row(r).array() - mu).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + static_cast<S>(eps));
    xhat.row(r) = (in.row(r).array() - mu) * inv_std[r];
  }
  Vector<S> out(x.size());
  MatrixMap<S>(out.data(), rows, n) =
      (xhat.array().rowwise() * gain.values().transpose().array()).rowwise() +
      bias.values().transpose().array();
  return Tensor<S>::make_result(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [rows, n, normalized = std::move(normalized), inv_std = std::move(inv_std)](auto& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        ConstMatrixMap<S> dy(self.grad.data(), rows, n);
        ConstMatrixMap<S> xh(normalized.data(), rows, n);
        if (pg.requires_grad)
          pg.grad_buffer() += (dy.array() * xh.array()).colwise().sum().matrix().transpose();
        if (pb.requires_grad) pb.grad_buffer() += dy.colwise().sum().transpose();
        if (!px.requires_grad) return;
        MatrixMap<S> dx(px.grad_buffer().data(), rows, n);
        const auto gvec = pg.value.transpose().array();
        for (Index r = 0; r < rows; ++r) {
          const Eigen::Array<S, 1, Eigen::Dynamic> dxh = dy.row(r).array() * gvec;
          const S sum_dxh = dxh.sum();
          const S sum_dxh_xh = (dxh * xh.row(r).array()).sum();
          dx.row(r).array() += inv_std[r] / static_cast<S>(n) *
                               (static_cast<S>(n) * dxh - sum_dxh - xh.row(r).array() * sum_dxh_xh);
        }
      });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr S kAlpha = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  constexpr S kBeta = static_cast<S>(0.044715);
  const auto& v = x.values();
  Vector<S> out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const S t = std::tanh(kAlpha * (v[i] + kBeta * v[i] * v[i] * v[i]));
    out[i] = S(0.5) * v[i] * (S(1) + t);
  }
  return Tensor<S>::make_result(x.shape(), std::move(out), {x.node()}, [](auto& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (Index i = 0; i < p.value.size(); ++i) {
      const S a = p.value[i];
      const S t = std::tanh(kAlpha * (a + kBeta * a * a * a));
      const S d = S(0.5) * (S(1) + t) +
                  S(0.5) * a * (S(1) - t * t) * kAlpha * (S(1) + S(3) * kBeta * a * a);
      g[i] += self.grad[i] * d;
    }
  });
}

template <typename S>
Tensor<S> concat_tokens(std::span<const Tensor<S>> parts) {
  if (parts.empty()) throw InputError("concat_tokens: no parts");
  const Index rank = parts.front().rank();
  if (rank != 2 && rank != 3)
    throw DimensionError("concat_tokens: parts must be [L x D] or [B x L x D], got " +
                         shape_string(parts.front().shape()));
  const Index batch = rank == 3 ? parts.front().dim(0) : 1;
  const Index width = parts.front().dim(-1);
  Index total = 0;
  std::vector<Index> lengths;
  std::vector<NodePtr<S>> parents;
  for (const auto& p : parts) {
    if (p.rank() != rank || p.dim(-1) != width || (rank == 3 && p.dim(0) != batch))
      throw DimensionError("concat_tokens: part " + shape_string(p.shape()) +
                           " does not match " + shape_string(parts.front().shape()));
    lengths.push_back(p.dim(-2));
    total += p.dim(-2);
    parents.push_back(p.node());
  }
  Vector<S> out(batch * total * width);
  for (Index b = 0; b < batch; ++b) {
    Index offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Index len = lengths[i] * width;
      out.segment((b * total) * width + offset, len) =
          parts[i].values().segment(b * len, len);
      offset += len;
    }
  }
  Shape shape = rank == 3 ? Shape{batch, total, width} : Shape{total, width};
  return Tensor<S>::make_result(
      std::move(shape), std::move(out), std::move(parents),
      [batch, total, width, lengths = std::move(lengths)](auto& self) {
        for (Index b = 0; b < batch; ++b) {
          Index offset = 0;
          for (std::size_t i = 0; i < lengths.size(); ++i) {
            const Index len = lengths[i] * width;
            auto& p = *self.parents[i];
            if (p.requires_grad)
              p.grad_buffer().segment(b * len, len) +=
                  self.grad.segment(b * total * width + offset, len);
            offset += len;
          }
        }
      });
}

template <typename S>
Tensor<S> stack(std::span<const Tensor<S>> parts) {
  if (parts.empty()) throw InputError("stack: no parts");
  const Shape& inner = parts.front().shape();
  const Index n = parts.front().size();
  Vector<S> out(static_cast<Index>(parts.size()) * n);
  std::vector<NodePtr<S>> parents;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].shape() != inner)
      throw DimensionError("stack: part " + shape_string(parts[i].shape()) + " differs from " +
                           shape_string(inner));
    out.segment(static_cast<Index>(i) * n, n) = parts[i].values();
    parents.push_back(parts[i].node());
  }
  Shape shape{static_cast<Index>(parts.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return Tensor<S>::make_result(std::move(shape), std::move(out), std::move(parents),
                                [n](auto& self) {
                                  for (std::size_t i = 0; i < self.parents.size(); ++i)
                                    self.parents[i]->accumulate(
                                        self.grad.segment(static_cast<Index>(i) * n, n));
                                });
}

template <typename S>
Tensor<S> broadcast_batch(const Tensor<S>& x, Index batch) {
  if (batch <= 0) throw DimensionError("broadcast_batch: batch must be positive");
  const Index n = x.size();
  Vector<S> out(batch * n);
  for (Index b = 0; b < batch; ++b) out.segment(b * n, n) = x.values();
  Shape shape{batch};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  return Tensor<S>::make_result(std::move(shape), std::move(out), {x.node()},
                                [batch, n](auto& self) {
                                  self.parents[0]->accumulate(
                                      ConstMatrixMap<S>(self.grad.data(), batch, n)
                                          .colwise()
                                          .sum()
                                          .transpose());
                                });
}

namespace {

// out[(b*H+h), l, j] = x[b, l, h*d+j] when `split`, the inverse otherwise.
template <typename S>
void permute_heads(const S* src, S* dst, Index batch, Index len, Index heads, Index d,
                   bool split, bool add) {
  const Index width = heads * d;
  for (Index b = 0; b < batch; ++b)
    for (Index h = 0; h < heads; ++h)
      for (Index l = 0; l < len; ++l) {
        const S* merged = nullptr;
        S* merged_out = nullptr;
        const Index m_off = (b * len + l) * width + h * d;
        const Index s_off = ((b * heads + h) * len + l) * d;
        if (split) {
          merged = src + m_off;
          S* o = dst + s_off;
          for (Index j = 0; j < d; ++j) o[j] = add ? o[j] + merged[j] : merged[j];
        } else {
          merged_out = dst + m_off;
          const S* s = src + s_off;
          for (Index j = 0; j < d; ++j)
            merged_out[j] = add ? merged_out[j] + s[j] : s[j];
        }
      }
}

}  // namespace

template <typename S>
Tensor<S> split_heads(const Tensor<S>& x, Index heads) {
  require_rank(x, 3, "split_heads");
  const Index batch = x.dim(0), len = x.dim(1), width = x.dim(2);
  if (heads <= 0 || width % heads != 0)
    throw DimensionError("split_heads: width " + std::to_string(width) +
                         " not divisible by heads " + std::to_string(heads));
  const Index d = width / heads;
  Vector<S> out(x.size());
  permute_heads(x.values().data(), out.data(), batch, len, heads, d, true, false);
  return Tensor<S>::make_result({batch * heads, len, d}, std::move(out), {x.node()},
                                [batch, len, heads, d](auto& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  permute_heads(self.grad.data(), g.data(), batch, len, heads, d,
                                                false, true);
                                });
}

template <typename S>
Tensor<S> merge_heads(const Tensor<S>& x, Index heads) {
  require_rank(x, 3, "merge_heads");
  if (heads <= 0 || x.dim(0) % heads != 0)
    throw DimensionError("merge_heads: leading extent not divisible by heads");
  const Index batch = x.dim(0) / heads, len = x.dim(1), d = x.dim(2);
  Vector<S> out(x.size());
  permute_heads(x.values().data(), out.data(), batch, len, heads, d, false, false);
  return Tensor<S>::make_result({batch, len, heads * d}, std::move(out), {x.node()},
                                [batch, len, heads, d](auto& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  permute_heads(self.grad.data(), g.data(), batch, len, heads, d,
                                                true, true);
                                });
}

template <typename S>
Tensor<S> mean_tokens(const Tensor<S>& x, Index begin, Index end) {
  require_rank(x, 3, "mean_tokens");
  const Index batch = x.dim(0), len = x.dim(1), width = x.dim(2);
  if (begin < 0 || end > len || begin >= end)
    throw DimensionError("mean_tokens: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for length " + std::to_string(len));
  const Index count = end - begin;
  Vector<S> out = Vector<S>::Zero(batch * width);
  for (Index b = 0; b < batch; ++b) {
    for (Index l = begin; l < end; ++l)
      out.segment(b * width, width) += x.values().segment((b * len + l) * width, width);
    out.segment(b * width, width) /= static_cast<S>(count);
  }
  return Tensor<S>::make_result(
      {batch, width}, std::move(out), {x.node()}, [batch, len, width, begin, end](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        const S inv = S(1) / static_cast<S>(end - begin);
        for (Index b = 0; b < batch; ++b)
          for (Index l = begin; l < end; ++l)
            g.segment((b * len + l) * width, width) += self.grad.segment(b * width, width) * inv;
      });
}

template <typename S>
Tensor<S> select_token(const Tensor<S>& x, Index index) {
  return mean_tokens(x, index, index + 1);
}

template <typename S>
Tensor<S> row(const Tensor<S>& x, Index index) {
  require_rank(x, 2, "row");
  const Index width = x.dim(1);
  if (index < 0 || index >= x.dim(0))
    throw DimensionError("row: index " + std::to_string(index) + " out of range for " +
                         shape_string(x.shape()));
  return Tensor<S>::make_result({width}, x.values().segment(index * width, width), {x.node()},
                                [index, width](auto& self) {
                                  self.parents[0]->grad_buffer().segment(index * width, width) +=
                                      self.grad;
                                });
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const Index batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != batch)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
  ConstMatrixMap<S> z(logits.values().data(), batch, classes);
  Vector<S> probs(batch * classes);
  MatrixMap<S> p(probs.data(), batch, classes);
  S loss = 0;
  for (Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes)
      throw InputError("cross_entropy: label " + std::to_string(y) + " in row " +
                       std::to_string(b) + " outside [0, " + std::to_string(classes) + ")");
    const S hi = z.row(b).maxCoeff();
    p.row(b) = (z.row(b).array() - hi).exp().matrix();
    const S total = p.row(b).sum();
    p.row(b) /= total;
    loss += hi + std::log(total) - z(b, y);
  }
  loss /= static_cast<S>(batch);
  std::vector<int> ys(labels.begin(), labels.end());
  return Tensor<S>::make_result(
      Shape{}, Vector<S>::Constant(1, loss), {logits.node()},
      [batch, classes, probs = std::move(probs), ys = std::move(ys)](auto& self) {
        MatrixMap<S> g(self.parents[0]->grad_buffer().data(), batch, classes);
        const S w = self.grad[0] / static_cast<S>(batch);
        g += ConstMatrixMap<S>(probs.data(), batch, classes) * w;
        for (Index b = 0; b < batch; ++b) g(b, ys[static_cast<std::size_t>(b)]) -= w;
      });
}

template <typename S>
Tensor<S> cosine_distance(const Tensor<S>& u, const Tensor<S>& v) {
  if (u.rank() != 1 || u.shape() != v.shape())
    throw DimensionError("cosine_distance: shapes " + shape_string(u.shape()) + " and " +
                         shape_string(v.shape()) + " must be equal vectors");
  const S nu = u.values().norm(), nv = v.values().norm();
  if (!(nu > S(1e-12)) || !(nv > S(1e-12)))
    throw DegenerateInputError("cosine_distance: zero-norm input");
  const S c = u.values().dot(v.values()) / (nu * nv);
  return Tensor<S>::make_result(Shape{}, Vector<S>::Constant(1, S(1) - c), {u.node(), v.node()},
                                [nu, nv, c](auto& self) {
                                  auto& pu = *self.parents[0];
                                  auto& pv = *self.parents[1];
                                  const S g = self.grad[0];
                                  if (pu.requires_grad)
                                    pu.grad_buffer() -=
                                        g * (pv.value / (nu * nv) - pu.value * (c / (nu * nu)));
                                  if (pv.requires_grad)
                                    pv.grad_buffer() -=
                                        g * (pu.value / (nu * nv) - pv.value * (c / (nv * nv)));
                                });
}

template <typename S>
Tensor<S> add_n(std::span<const Tensor<S>> parts) {
  if (parts.empty()) throw InputError("add_n: no parts");
  Vector<S> out = parts.front().values();
  std::vector<NodePtr<S>> parents{parts.front().node()};
  for (std::size_t i = 1; i < parts.size(); ++i) {
    require_same_shape(parts.front(), parts[i], "add_n");
    out += parts[i].values();
    parents.push_back(parts[i].node());
  }
  return Tensor<S>::make_result(parts.front().shape(), std::move(out), std::move(parents),
                                [](auto& self) {
                                  for (auto& p : self.parents) p->accumulate(self.grad);
                                });
}

#define L2P_INSTANTIATE_OPS(S)                                                            \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> scale(const Tensor<S>&, S);                                         \
  template Tensor<S> sum(const Tensor<S>&);                                              \
  template Tensor<S> mean(const Tensor<S>&);                                             \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                   \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);       \
  template Tensor<S> batched_matmul(const Tensor<S>&, const Tensor<S>&, bool);           \
  template Tensor<S> softmax(const Tensor<S>&, Index);                                   \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,    \
                                double);                                                 \
  template Tensor<S> gelu(const Tensor<S>&);                                             \
  template Tensor<S> concat_tokens(std::span<const Tensor<S>>);                          \
  template Tensor<S> stack(std::span<const Tensor<S>>);                                  \
  template Tensor<S> broadcast_batch(const Tensor<S>&, Index);                           \
  template Tensor<S> split_heads(const Tensor<S>&, Index);                               \
  template Tensor<S> merge_heads(const Tensor<S>&, Index);                               \
  template Tensor<S> mean_tokens(const Tensor<S>&, Index, Index);                        \
  template Tensor<S> select_token(const Tensor<S>&, Index);                              \
  template Tensor<S> row(const Tensor<S>&, Index);                                       \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>);              \
  template Tensor<S> cosine_distance(const Tensor<S>&, const Tensor<S>&);                \
  template Tensor<S> add_n(std::span<const Tensor<S>>);

L2P_INSTANTIATE_OPS(float)
L2P_INSTANTIATE_OPS(double)

#undef L2P_INSTANTIATE_OPS

}  // namespace l2p
