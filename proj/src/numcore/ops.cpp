#include "siaedit/numcore/ops.hpp"

#include "siaedit/errors.hpp"

#include <cmath>
#include <numbers>

namespace siaedit::num {

namespace {

void accumulate(const Tensor& t, const Values& g) {
  if (t.tracked()) t.node()->accumulate(g);
}

enum class Broadcast { kSame, kScalar, kRow };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1 && b.rank() <= 1) return Broadcast::kScalar;
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) return Broadcast::kRow;
  throw DimensionError(std::string(op) + ": cannot combine " + shape_string(a.shape()) + " with " +
                       shape_string(b.shape()));
}

// Expands b to a's layout.
Values expand(const Tensor& a, const Tensor& b, Broadcast kind) {
  switch (kind) {
    case Broadcast::kSame:
      return b.values();
    case Broadcast::kScalar:
      return Values::Constant(a.numel(), b.values()[0]);
    case Broadcast::kRow: {
      const Index cols = b.numel();
      const Index rows = a.numel() / cols;
      Values out(a.numel());
      MatrixMap(out.data(), rows, cols).rowwise() = b.values().transpose();
      return out;
    }
  }
  return {};
}

// Folds a gradient laid out like a back to b's shape.
Values reduce(const Values& g, const Tensor& b, Broadcast kind) {
  switch (kind) {
    case Broadcast::kSame:
      return g;
    case Broadcast::kScalar:
      return Values::Constant(1, g.sum());
    case Broadcast::kRow: {
      const Index cols = b.numel();
      const Index rows = g.size() / cols;
      return ConstMatrixMap(g.data(), rows, cols).colwise().sum().transpose();
    }
  }
  return {};
}

void require_finite(const Tensor& x, const char* op) {
  if (!x.values().allFinite()) throw NumericError(std::string(op) + ": non-finite input");
}

Index last_extent(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw DimensionError(std::string(op) + ": needs rank >= 1");
  return x.shape().back();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast kind = classify(a, b, "add");
  Tensor out = make_result(a.shape(), a.values() + expand(a, b, kind));
  record_if_tracked(out, {a, b}, [a, b, kind](const Values& g) {
    accumulate(a, g);
    if (b.tracked()) accumulate(b, reduce(g, b, kind));
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast kind = classify(a, b, "sub");
  Tensor out = make_result(a.shape(), a.values() - expand(a, b, kind));
  record_if_tracked(out, {a, b}, [a, b, kind](const Values& g) {
    accumulate(a, g);
    if (b.tracked()) accumulate(b, -reduce(g, b, kind));
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast kind = classify(a, b, "mul");
  Values bx = expand(a, b, kind);
  Tensor out = make_result(a.shape(), a.values().cwiseProduct(bx));
  record_if_tracked(out, {a, b}, [a, b, kind, bx = std::move(bx)](const Values& g) {
    if (a.tracked()) accumulate(a, g.cwiseProduct(bx));
    if (b.tracked()) accumulate(b, reduce(g.cwiseProduct(a.values()), b, kind));
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = make_result(x.shape(), x.values() * factor);
  record_if_tracked(out, {x}, [x, factor](const Values& g) { accumulate(x, g * factor); });
  return out;
}

Tensor add_scalar(const Tensor& x, double offset) {
  Tensor out = make_result(x.shape(), x.values().array() + offset);
  record_if_tracked(out, {x}, [x](const Values& g) { accumulate(x, g); });
  return out;
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  Values y = x.values().array().exp();
  Tensor out = make_result(x.shape(), y);
  record_if_tracked(out, {x}, [x, y = std::move(y)](const Values& g) { accumulate(x, g.cwiseProduct(y)); });
  return out;
}

Tensor log(const Tensor& x) {
  if ((x.values().array() <= 0.0).any() || x.values().hasNaN()) {
    throw DomainError("log: input must be strictly positive");
  }
  Tensor out = make_result(x.shape(), x.values().array().log());
  record_if_tracked(out, {x}, [x](const Values& g) { accumulate(x, g.cwiseQuotient(x.values())); });
  return out;
}

Tensor log1p(const Tensor& x) {
  if ((x.values().array() <= -1.0).any() || x.values().hasNaN()) {
    throw DomainError("log1p: input must exceed -1");
  }
  Tensor out = make_result(x.shape(), x.values().array().log1p());
  record_if_tracked(out, {x}, [x](const Values& g) {
    accumulate(x, (g.array() / (1.0 + x.values().array())).matrix());
  });
  return out;
}

Tensor pow(const Tensor& x, double exponent) {
  if (exponent == 0.0) {
    Tensor out = make_result(x.shape(), Values::Ones(x.numel()));
    record_if_tracked(out, {x}, [x](const Values&) { accumulate(x, Values::Zero(x.numel())); });
    return out;
  }
  Tensor out = make_result(x.shape(), x.values().array().pow(exponent));
  record_if_tracked(out, {x}, [x, exponent](const Values& g) {
    accumulate(x, (g.array() * exponent * x.values().array().pow(exponent - 1.0)).matrix());
  });
  return out;
}

Tensor minimum(const Tensor& x, double ceiling) {
  Tensor out = make_result(x.shape(), x.values().array().min(ceiling));
  record_if_tracked(out, {x}, [x, ceiling](const Values& g) {
    accumulate(x, (x.values().array() < ceiling).select(g.array(), 0.0).matrix());
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  // tanh approximation
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double k = 0.044715;
  const auto xa = x.values().array();
  Values inner = (c * (xa + k * xa.cube())).matrix();
  Values t = inner.array().tanh().matrix();
  Tensor out = make_result(x.shape(), (0.5 * xa * (1.0 + t.array())).matrix());
  record_if_tracked(out, {x}, [x, t = std::move(t)](const Values& g) {
    const auto xv = x.values().array();
    const auto tv = t.array();
    auto d = 0.5 * (1.0 + tv) + 0.5 * xv * (1.0 - tv.square()) * c * (1.0 + 3.0 * k * xv.square());
    accumulate(x, (g.array() * d).matrix());
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_result(Shape{}, Values::Constant(1, x.values().sum()));
  record_if_tracked(out, {x}, [x](const Values& g) { accumulate(x, Values::Constant(x.numel(), g[0])); });
  return out;
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  Tensor out = make_result(Shape{}, Values::Constant(1, x.values().sum() / n));
  record_if_tracked(out, {x}, [x, n](const Values& g) { accumulate(x, Values::Constant(x.numel(), g[0] / n)); });
  return out;
}

Tensor sum_last(const Tensor& x) {
  const Index cols = last_extent(x, "sum_last");
  const Index rows = x.numel() / cols;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  Values y = ConstMatrixMap(x.values().data(), rows, cols).rowwise().sum();
  Tensor out = make_result(std::move(shape), std::move(y));
  record_if_tracked(out, {x}, [x, rows, cols](const Values& g) {
    Values gx(x.numel());
    MatrixMap(gx.data(), rows, cols).colwise() = g;
    accumulate(x, gx);
  });
  return out;
}

Tensor mask_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  if (static_cast<Index>(mask.size()) != x.numel()) {
    throw DimensionError("mask_fill: mask has " + std::to_string(mask.size()) + " entries for " +
                         shape_string(x.shape()));
  }
  Values y = x.values();
  for (Index i = 0; i < y.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) y[i] = value;
  }
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  Tensor out = make_result(x.shape(), std::move(y));
  record_if_tracked(out, {x}, [x, keep = std::move(keep)](const Values& g) {
    Values gx = g;
    for (Index i = 0; i < gx.size(); ++i) {
      if (keep[static_cast<std::size_t>(i)]) gx[i] = 0.0;
    }
    accumulate(x, gx);
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const Index m = a.dim(0), n = b.dim(1);
  Values c(m * n);
  MatrixMap(c.data(), m, n).noalias() = a.matrix() * b.matrix();
  Tensor out = make_result(Shape{m, n}, std::move(c));
  record_if_tracked(out, {a, b}, [a, b, m, n](const Values& g) {
    ConstMatrixMap gc(g.data(), m, n);
    if (a.tracked()) {
      Values ga(a.numel());
      MatrixMap(ga.data(), a.dim(0), a.dim(1)).noalias() = gc * b.matrix().transpose();
      accumulate(a, ga);
    }
    if (b.tracked()) {
      Values gb(b.numel());
      MatrixMap(gb.data(), b.dim(0), b.dim(1)).noalias() = a.matrix().transpose() * gc;
      accumulate(b, gb);
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: needs rank 2, got " + shape_string(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  Values t(a.numel());
  MatrixMap(t.data(), n, m) = a.matrix().transpose();
  Tensor out = make_result(Shape{n, m}, std::move(t));
  record_if_tracked(out, {a}, [a, m, n](const Values& g) {
    Values ga(a.numel());
    MatrixMap(ga.data(), m, n) = ConstMatrixMap(g.data(), n, m).transpose();
    accumulate(a, ga);
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  Tensor out = make_result(std::move(shape), x.values());
  record_if_tracked(out, {x}, [x](const Values& g) { accumulate(x, g); });
  return out;
}

Tensor softmax(const Tensor& x) {
  require_finite(x, "softmax");
  const Index cols = last_extent(x, "softmax");
  const Index rows = x.numel() / cols;
  Values y(x.numel());
  ConstMatrixMap in(x.values().data(), rows, cols);
  MatrixMap p(y.data(), rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const double mx = in.row(r).maxCoeff();
    p.row(r) = (in.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  Tensor out = make_result(x.shape(), y);
  record_if_tracked(out, {x}, [x, y = std::move(y), rows, cols](const Values& g) {
    ConstMatrixMap pm(y.data(), rows, cols);
    ConstMatrixMap gm(g.data(), rows, cols);
    Values gx(x.numel());
    MatrixMap gxm(gx.data(), rows, cols);
    const Eigen::VectorXd dots = pm.cwiseProduct(gm).rowwise().sum();
    gxm = pm.cwiseProduct(gm - dots.replicate(1, cols));
    accumulate(x, gx);
  });
  return out;
}

Tensor log_softmax(const Tensor& x) {
  require_finite(x, "log_softmax");
  const Index cols = last_extent(x, "log_softmax");
  const Index rows = x.numel() / cols;
  Values y(x.numel());
  ConstMatrixMap in(x.values().data(), rows, cols);
  MatrixMap lp(y.data(), rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const double mx = in.row(r).maxCoeff();
    const double lse = mx + std::log((in.row(r).array() - mx).exp().sum());
    lp.row(r) = in.row(r).array() - lse;
  }
  Tensor out = make_result(x.shape(), y);
  record_if_tracked(out, {x}, [x, y = std::move(y), rows, cols](const Values& g) {
    ConstMatrixMap lpm(y.data(), rows, cols);
    ConstMatrixMap gm(g.data(), rows, cols);
    Values gx(x.numel());
    MatrixMap gxm(gx.data(), rows, cols);
    const Eigen::VectorXd gsum = gm.rowwise().sum();
    gxm = gm - (lpm.array().exp().colwise() * gsum.array()).matrix();
    accumulate(x, gx);
  });
  return out;
}

Tensor gather_last(const Tensor& x, std::span<const Index> ids) {
  const Index cols = last_extent(x, "gather_last");
  const Index rows = x.numel() / cols;
  if (static_cast<Index>(ids.size()) != rows) {
    throw DimensionError("gather_last: " + std::to_string(ids.size()) + " ids for " + shape_string(x.shape()));
  }
  Values y(rows);
  for (Index r = 0; r < rows; ++r) {
    const Index id = ids[static_cast<std::size_t>(r)];
    if (id < 0 || id >= cols) {
      throw RangeError("gather_last: id " + std::to_string(id) + " outside [0, " + std::to_string(cols) + ")");
    }
    y[r] = x.values()[r * cols + id];
  }
  std::vector<Index> idx(ids.begin(), ids.end());
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out = make_result(std::move(shape), std::move(y));
  record_if_tracked(out, {x}, [x, idx = std::move(idx), cols](const Values& g) {
    Values gx = Values::Zero(x.numel());
    for (std::size_t r = 0; r < idx.size(); ++r) gx[static_cast<Index>(r) * cols + idx[r]] = g[static_cast<Index>(r)];
    accumulate(x, gx);
  });
  return out;
}

Tensor embedding(const Tensor& table, std::span<const Index> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  const Index vocab = table.dim(0), width = table.dim(1);
  const Index n = static_cast<Index>(ids.size());
  if (n == 0) throw DimensionError("embedding: empty id list");
  Values y(n * width);
  MatrixMap ym(y.data(), n, width);
  for (Index r = 0; r < n; ++r) {
    const Index id = ids[static_cast<std::size_t>(r)];
    if (id < 0 || id >= vocab) {
      throw RangeError("embedding: id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    }
    ym.row(r) = table.matrix().row(id);
  }
  std::vector<Index> idx(ids.begin(), ids.end());
  Tensor out = make_result(Shape{n, width}, std::move(y));
  record_if_tracked(out, {table}, [table, idx = std::move(idx), vocab, width](const Values& g) {
    Values gt = Values::Zero(table.numel());
    MatrixMap gtm(gt.data(), vocab, width);
    ConstMatrixMap gm(g.data(), static_cast<Index>(idx.size()), width);
    for (std::size_t r = 0; r < idx.size(); ++r) gtm.row(idx[r]) += gm.row(static_cast<Index>(r));
    accumulate(table, gt);
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index cols = last_extent(x, "layer_norm");
  if (gain.numel() != cols || bias.numel() != cols) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(cols) + " entries");
  }
  const Index rows = x.numel() / cols;
  ConstMatrixMap in(x.values().data(), rows, cols);
  RowMatrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const double mu = in.row(r).mean();
    const double var = (in.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mu) * inv_std[r];
  }
  Values y(x.numel());
  MatrixMap ym(y.data(), rows, cols);
  ym = (xhat.array().rowwise() * gain.values().transpose().array()).rowwise() + bias.values().transpose().array();
  Tensor out = make_result(x.shape(), std::move(y));
  record_if_tracked(out, {x, gain, bias},
                    [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, cols](const Values& g) {
                      ConstMatrixMap gm(g.data(), rows, cols);
                      if (gain.tracked()) accumulate(gain, gm.cwiseProduct(xhat).colwise().sum().transpose());
                      if (bias.tracked()) accumulate(bias, gm.colwise().sum().transpose());
                      if (x.tracked()) {
                        const RowMatrix gh = gm.array().rowwise() * gain.values().transpose().array();
                        Values gx(x.numel());
                        MatrixMap gxm(gx.data(), rows, cols);
                        const double n = static_cast<double>(cols);
                        for (Index r = 0; r < rows; ++r) {
                          const double mean_gh = gh.row(r).mean();
                          const double mean_ghx = gh.row(r).dot(xhat.row(r)) / n;
                          gxm.row(r) = inv_std[r] * (gh.row(r).array() - mean_gh - xhat.row(r).array() * mean_ghx);
                        }
                        accumulate(x, gx);
                      }
                    });
  return out;
}

Tensor slice_rows(const Tensor& x, Index start, Index count) {
  if (x.rank() != 2) throw DimensionError("slice_rows: needs rank 2");
  if (start < 0 || count <= 0 || start + count > x.dim(0)) {
    throw RangeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_string(x.shape()));
  }
  const Index cols = x.dim(1);
  Values y = x.values().segment(start * cols, count * cols);
  Tensor out = make_result(Shape{count, cols}, std::move(y));
  record_if_tracked(out, {x}, [x, start, count, cols](const Values& g) {
    Values gx = Values::Zero(x.numel());
    gx.segment(start * cols, count * cols) = g;
    accumulate(x, gx);
  });
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const Index cols = parts.front().rank() == 2 ? parts.front().dim(1) : -1;
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols) {
      throw DimensionError("concat_rows: incompatible part " + shape_string(p.shape()));
    }
    rows += p.dim(0);
  }
  Values y(rows * cols);
  Index off = 0;
  for (const auto& p : parts) {
    y.segment(off, p.numel()) = p.values();
    off += p.numel();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  Tensor out = make_result(Shape{rows, cols}, std::move(y));
  record_if_tracked(out, inputs, [inputs](const Values& g) {
    Index at = 0;
    for (const auto& p : inputs) {
      if (p.tracked()) accumulate(p, g.segment(at, p.numel()));
      at += p.numel();
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Values m(x.numel());
  for (Index i = 0; i < m.size(); ++i) m[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return mul(x, make_result(x.shape(), std::move(m)));
}

}  // namespace siaedit::num
