#include "catdet/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "catdet/common/errors.hpp"

namespace catdet::num {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using detail::Node;

ConstMatMap cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MatMap mmap(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

// dst[c] += sum_r g[r, c], rows accumulated in order. Used instead of Eigen's
// colwise().sum(), whose result depends on buffer alignment.
void add_column_sums(std::vector<double>& dst, const std::vector<double>& g, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = g.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += row[c];
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  mmap(out, m, n).noalias() = cmap(a.node().value, m, k) * cmap(b.node().value, k, n);
  return Tensor::make_result(
      {m, n}, std::move(out), {a, b},
      [m, k, n](Node& self) {
        Node& A = parent(self, 0);
        Node& B = parent(self, 1);
        const auto dC = cmap(self.grad, m, n);
        if (A.requires_grad) mmap(A.grad, m, k).noalias() += dC * cmap(B.value, k, n).transpose();
        if (B.requires_grad) mmap(B.grad, k, n).noalias() += cmap(A.value, m, k).transpose() * dC;
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  mmap(out, c, r) = cmap(a.node().value, r, c).transpose();
  return Tensor::make_result(
      {c, r}, std::move(out), {a},
      [r, c](Node& self) { mmap(parent(self, 0).grad, r, c) += cmap(self.grad, c, r).transpose(); },
      "transpose");
}

namespace {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, BwdA da, BwdB db) {
  require_same_shape(a, b, op);
  const auto& av = a.node().value;
  const auto& bv = b.node().value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return Tensor::make_result(
      a.shape(), std::move(out), {a, b},
      [da, db](Node& self) {
        Node& A = parent(self, 0);
        Node& B = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double g = self.grad[i];
          if (A.requires_grad) A.grad[i] += da(g, A.value[i], B.value[i]);
          if (B.requires_grad) B.grad[i] += db(g, A.value[i], B.value[i]);
        }
      },
      op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [s](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
      },
      "scale");
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_rank(b, 1, "add_bias");
  const auto n = b.dim(0);
  if (last_dim(x) != n) {
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " vs bias " + shape_str(b.shape()));
  }
  const auto rows = x.numel() / n;
  std::vector<double> out(x.data().begin(), x.data().end());
  mmap(out, rows, n).rowwise() += cmap(b.node().value, 1, n).row(0);
  return Tensor::make_result(
      x.shape(), std::move(out), {x, b},
      [rows, n](Node& self) {
        Node& X = parent(self, 0);
        Node& B = parent(self, 1);
        const auto g = cmap(self.grad, rows, n);
        if (X.requires_grad) mmap(X.grad, rows, n) += g;
        if (B.requires_grad) add_column_sums(B.grad, self.grad, rows, n);
      },
      "add_bias");
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [](Node& self) {
        Node& X = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (X.value[i] > 0.0) X.grad[i] += self.grad[i];
        }
      },
      "relu");
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = in[i];
    out[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [](Node& self) {
        Node& X = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double s = self.value[i];
          X.grad[i] += self.grad[i] * s * (1.0 - s);
        }
      },
      "sigmoid");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const auto& in = x.node().value;
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * n * inner + q;
      double mx = in[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] *= inv;
    }
  }
  return Tensor::make_result(
      s, std::move(out), {x},
      [outer, inner, n](Node& self) {
        auto& gx = parent(self, 0).grad;
        const auto& y = self.value;
        const auto& gy = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t q = 0; q < inner; ++q) {
            const std::size_t base = o * n * inner + q;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += gy[base + j * inner] * y[base + j * inner];
            for (std::size_t j = 0; j < n; ++j) {
              const auto k = base + j * inner;
              gx[k] += y[k] * (gy[k] - dot);
            }
          }
        }
      },
      "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  const auto d = gamma.dim(0);
  if (last_dim(x) != d || beta.dim(0) != d) {
    throw DimensionError("layer_norm: " + shape_str(x.shape()) + " with gamma " +
                         shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const auto rows = x.numel() / d;
  const auto& in = x.node().value;
  const auto& g = gamma.node().value;
  const auto& b = beta.node().value;
  std::vector<double> out(in.size());
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = g[j] * h + b[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat, rstd](Node& self) {
        Node& X = parent(self, 0);
        Node& G = parent(self, 1);
        Node& B = parent(self, 2);
        const auto& gy = self.grad;
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* h = xhat->data() + r * d;
          const double* dy = gy.data() + r * d;
          if (G.requires_grad) {
            for (std::size_t j = 0; j < d; ++j) G.grad[j] += dy[j] * h[j];
          }
          if (B.requires_grad) {
            for (std::size_t j = 0; j < d; ++j) B.grad[j] += dy[j];
          }
          if (!X.requires_grad) continue;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = dy[j] * G.value[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * h[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double rs = (*rstd)[r];
          for (std::size_t j = 0; j < d; ++j) X.grad[r * d + j] += rs * (dxhat[j] - m1 - h[j] * m2);
        }
      },
      "layer_norm");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(w, 2, "linear");
  require_rank(b, 1, "linear");
  const auto in = w.dim(0), outd = w.dim(1);
  if (last_dim(x) != in || b.dim(0) != outd) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  const auto rows = x.numel() / in;
  std::vector<double> out(rows * outd);
  auto o = mmap(out, rows, outd);
  o.noalias() = cmap(x.node().value, rows, in) * cmap(w.node().value, in, outd);
  o.rowwise() += cmap(b.node().value, 1, outd).row(0);
  Shape shape = x.shape();
  shape.back() = outd;
  return Tensor::make_result(
      std::move(shape), std::move(out), {x, w, b},
      [rows, in, outd](Node& self) {
        Node& X = parent(self, 0);
        Node& W = parent(self, 1);
        Node& B = parent(self, 2);
        const auto g = cmap(self.grad, rows, outd);
        if (X.requires_grad) mmap(X.grad, rows, in).noalias() += g * cmap(W.value, in, outd).transpose();
        if (W.requires_grad) mmap(W.grad, in, outd).noalias() += cmap(X.value, rows, in).transpose() * g;
        if (B.requires_grad) add_column_sums(B.grad, self.grad, rows, outd);
      },
      "linear");
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result(
      {1}, {total}, {x},
      [](Node& self) {
        for (auto& g : parent(self, 0).grad) g += self.grad[0];
      },
      "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor row_mean(const Tensor& x, std::size_t cols) {
  if (cols == 0 || x.numel() % cols != 0) throw DimensionError("row_mean: bad column count");
  const auto rows = x.numel() / cols;
  std::vector<double> out(rows);
  // Plain loops: Eigen's vectorized row reductions peel by pointer alignment,
  // which would make the summation order depend on where the buffer landed.
  const double* src = x.node().value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += src[r * cols + c];
    out[r] = acc / static_cast<double>(cols);
  }
  return Tensor::make_result(
      {rows}, std::move(out), {x},
      [rows, cols](Node& self) {
        auto gx = mmap(parent(self, 0).grad, rows, cols);
        const double inv = 1.0 / static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) gx.row(static_cast<Eigen::Index>(r)).array() += self.grad[r] * inv;
      },
      "row_mean");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return Tensor::make_result(
      std::move(shape), x.node().value, {x},
      [](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "reshape");
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const auto r = x.dim(0), c = x.dim(1);
  if (count == 0 || start + count > c) throw DimensionError("slice_cols: range out of bounds");
  std::vector<double> out(r * count);
  mmap(out, r, count) = cmap(x.node().value, r, c).middleCols(static_cast<Eigen::Index>(start),
                                                              static_cast<Eigen::Index>(count));
  return Tensor::make_result(
      {r, count}, std::move(out), {x},
      [r, c, start, count](Node& self) {
        mmap(parent(self, 0).grad, r, c)
            .middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) +=
            cmap(self.grad, r, count);
      },
      "slice_cols");
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const auto r = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != r) throw DimensionError("concat_cols: row counts disagree");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(r * total);
  auto o = mmap(out, r, total);
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    o.middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(widths[i])) =
        cmap(parts[i].node().value, r, widths[i]);
    off += widths[i];
  }
  return Tensor::make_result(
      {r, total}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
      [r, total, widths](Node& self) {
        const auto g = cmap(self.grad, r, total);
        std::size_t off = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          Node& P = parent(self, i);
          if (P.requires_grad) {
            mmap(P.grad, r, widths[i]) +=
                g.middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(widths[i]));
          }
          off += widths[i];
        }
      },
      "concat_cols");
}

Tensor repeat_rows(const Tensor& v, std::size_t rows) {
  require_rank(v, 1, "repeat_rows");
  const auto n = v.dim(0);
  std::vector<double> out(rows * n);
  mmap(out, rows, n).rowwise() = cmap(v.node().value, 1, n).row(0);
  return Tensor::make_result(
      {rows, n}, std::move(out), {v},
      [rows, n](Node& self) { add_column_sums(parent(self, 0).grad, self.grad, rows, n); },
      "repeat_rows");
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() != 1 && x.rank() != 2) throw DimensionError("gather_rows: rank must be 1 or 2");
  const auto n = x.dim(0);
  const auto c = x.rank() == 2 ? x.dim(1) : 1;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  if (idx.empty()) throw ContractError("gather_rows: empty selection");
  std::vector<double> out(idx.size() * c);
  const auto& in = x.node().value;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw DimensionError("gather_rows: index out of range");
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  Shape shape = x.rank() == 2 ? Shape{idx.size(), c} : Shape{idx.size()};
  return Tensor::make_result(
      std::move(shape), std::move(out), {x},
      [idx, c](Node& self) {
        auto& g = parent(self, 0).grad;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
        }
      },
      "gather_rows");
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  require_rank(b, 1, "conv2d");
  const auto C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const auto O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C || b.dim(0) != O) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  if (stride == 0 || H + 2 * pad < kh || W + 2 * pad < kw) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  const auto Ho = (H + 2 * pad - kh) / stride + 1;
  const auto Wo = (W + 2 * pad - kw) / stride + 1;
  const auto K = C * kh * kw;
  const auto P = Ho * Wo;

  auto cols = std::make_shared<std::vector<double>>(K * P, 0.0);
  const auto& in = x.node().value;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* dst = cols->data() + ((c * kh + ki) * kw + kj) * P;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          const double* src = in.data() + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) dst[oy * Wo + ox] = src[ix];
          }
        }
      }
    }
  }
  std::vector<double> out(O * P);
  auto o = mmap(out, O, P);
  o.noalias() = cmap(w.node().value, O, K) * cmap(*cols, K, P);
  o.colwise() += cmap(b.node().value, O, 1).col(0);

  return Tensor::make_result(
      {O, Ho, Wo}, std::move(out), {x, w, b},
      [=](Node& self) {
        Node& X = parent(self, 0);
        Node& Wt = parent(self, 1);
        Node& B = parent(self, 2);
        const auto g = cmap(self.grad, O, P);
        if (Wt.requires_grad) mmap(Wt.grad, O, K).noalias() += g * cmap(*cols, K, P).transpose();
        if (B.requires_grad) {
          for (std::size_t o = 0; o < O; ++o) {
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) acc += self.grad[o * P + p];
            B.grad[o] += acc;
          }
        }
        if (!X.requires_grad) return;
        std::vector<double> dcols(K * P);
        mmap(dcols, K, P).noalias() = cmap(Wt.value, O, K).transpose() * g;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
              const double* src = dcols.data() + ((c * kh + ki) * kw + kj) * P;
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                double* dst = X.grad.data() + (c * H + static_cast<std::size_t>(iy)) * W;
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
                  if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) dst[ix] += src[oy * Wo + ox];
                }
              }
            }
          }
        }
      },
      "conv2d");
}

Tensor flatten_spatial(const Tensor& x) {
  require_rank(x, 3, "flatten_spatial");
  const auto C = x.dim(0), HW = x.dim(1) * x.dim(2);
  std::vector<double> out(HW * C);
  mmap(out, HW, C) = cmap(x.node().value, C, HW).transpose();
  return Tensor::make_result(
      {HW, C}, std::move(out), {x},
      [C, HW](Node& self) { mmap(parent(self, 0).grad, C, HW) += cmap(self.grad, HW, C).transpose(); },
      "flatten_spatial");
}

Tensor unflatten_spatial(const Tensor& seq, std::size_t height, std::size_t width) {
  require_rank(seq, 2, "unflatten_spatial");
  const auto HW = seq.dim(0), C = seq.dim(1);
  if (HW != height * width) {
    throw ContractError("unflatten_spatial: " + std::to_string(HW) + " records do not fill a " +
                        std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  std::vector<double> out(HW * C);
  mmap(out, C, HW) = cmap(seq.node().value, HW, C).transpose();
  return Tensor::make_result(
      {C, height, width}, std::move(out), {seq},
      [C, HW](Node& self) { mmap(parent(self, 0).grad, HW, C) += cmap(self.grad, C, HW).transpose(); },
      "unflatten_spatial");
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  return row_mean(x, x.dim(1) * x.dim(2));
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       std::span<const double> weights) {
  const auto n = logits.numel();
  if (targets.size() != n || weights.size() != n) {
    throw DimensionError("bce_with_logits: " + std::to_string(n) + " logits, " +
                         std::to_string(targets.size()) + " targets, " +
                         std::to_string(weights.size()) + " weights");
  }
  std::vector<double> y(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  const auto z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    total += w[i] * (std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i]))));
  }
  return Tensor::make_result(
      {1}, {total}, {logits},
      [y, w](Node& self) {
        Node& Z = parent(self, 0);
        const double g = self.grad[0];
        for (std::size_t i = 0; i < y.size(); ++i) {
          if (w[i] == 0.0) continue;
          const double zi = Z.value[i];
          const double s = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
          Z.grad[i] += g * w[i] * (s - y[i]);
        }
      },
      "bce_with_logits");
}

Tensor smooth_l1(const Tensor& pred, std::span<const double> target,
                 std::span<const double> weights, double beta) {
  const auto n = pred.numel();
  if (target.size() != n || weights.size() != n) throw DimensionError("smooth_l1: size mismatch");
  if (!(beta > 0.0)) throw ConfigError("smooth_l1: beta must be positive");
  std::vector<double> t(target.begin(), target.end());
  std::vector<double> w(weights.begin(), weights.end());
  const auto p = pred.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = p[i] - t[i];
    const double a = std::abs(d);
    total += w[i] * (a < beta ? 0.5 * d * d / beta : a - 0.5 * beta);
  }
  return Tensor::make_result(
      {1}, {total}, {pred},
      [t, w, beta](Node& self) {
        Node& P = parent(self, 0);
        const double g = self.grad[0];
        for (std::size_t i = 0; i < t.size(); ++i) {
          const double d = P.value[i] - t[i];
          const double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
          P.grad[i] += g * w[i] * dd;
        }
      },
      "smooth_l1");
}

}  // namespace catdet::num
