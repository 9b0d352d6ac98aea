#include "siaedit/errors.hpp"
#include "siaedit/numcore/ops.hpp"

#include <cmath>
#include <limits>

namespace siaedit::num {

namespace {

void check_segments(std::span<const Segment> segs, Index rows, const char* which) {
  for (const auto& s : segs) {
    if (s.length <= 0 || s.offset < 0 || s.offset + s.length > rows) {
      throw RangeError(std::string("attention: ") + which + " segment [" + std::to_string(s.offset) + ", +" +
                       std::to_string(s.length) + ") outside " + std::to_string(rows) + " rows");
    }
  }
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const Segment> q_segments,
                 std::span<const Segment> k_segments, Index heads, bool causal) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.shape() != v.shape() || q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: incompatible q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) +
                         ", v " + shape_string(v.shape()));
  }
  const Index width = q.dim(1);
  if (heads <= 0 || width % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads));
  }
  if (q_segments.size() != k_segments.size()) throw DimensionError("attention: segment lists differ in length");
  check_segments(q_segments, q.dim(0), "query");
  check_segments(k_segments, k.dim(0), "key");
  if (causal) {
    for (std::size_t s = 0; s < q_segments.size(); ++s) {
      if (k_segments[s].length < q_segments[s].length) {
        throw DimensionError("attention: causal query segment longer than its key segment");
      }
    }
  }

  const Index head_dim = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  ConstMatrixMap qm = q.matrix(), km = k.matrix(), vm = v.matrix();

  Values y = Values::Zero(q.numel());
  MatrixMap ym(y.data(), q.dim(0), width);
  std::vector<RowMatrix> probs;
  probs.reserve(q_segments.size() * static_cast<std::size_t>(heads));

  for (std::size_t s = 0; s < q_segments.size(); ++s) {
    const Segment qs = q_segments[s], ks = k_segments[s];
    for (Index h = 0; h < heads; ++h) {
      const Index c0 = h * head_dim;
      RowMatrix scores = qm.block(qs.offset, c0, qs.length, head_dim) *
                         km.block(ks.offset, c0, ks.length, head_dim).transpose() * scale;
      for (Index i = 0; i < qs.length; ++i) {
        const Index visible = causal ? i + 1 : ks.length;
        const double mx = scores.row(i).head(visible).maxCoeff();
        scores.row(i).head(visible) = (scores.row(i).head(visible).array() - mx).exp();
        scores.row(i).head(visible) /= scores.row(i).head(visible).sum();
        if (visible < ks.length) scores.row(i).tail(ks.length - visible).setZero();
      }
      ym.block(qs.offset, c0, qs.length, head_dim).noalias() =
          scores * vm.block(ks.offset, c0, ks.length, head_dim);
      probs.push_back(std::move(scores));
    }
  }

  Tensor out = make_result(q.shape(), std::move(y));
  std::vector<Segment> qsegs(q_segments.begin(), q_segments.end());
  std::vector<Segment> ksegs(k_segments.begin(), k_segments.end());
  record_if_tracked(
      out, {q, k, v},
      [q, k, v, qsegs = std::move(qsegs), ksegs = std::move(ksegs), probs = std::move(probs), heads, head_dim,
       scale](const Values& g) {
        const Index width = q.dim(1);
        ConstMatrixMap gm(g.data(), q.dim(0), width);
        ConstMatrixMap qm = q.matrix(), km = k.matrix(), vm = v.matrix();
        Values gq = Values::Zero(q.numel()), gk = Values::Zero(k.numel()), gv = Values::Zero(v.numel());
        MatrixMap gqm(gq.data(), q.dim(0), width), gkm(gk.data(), k.dim(0), width), gvm(gv.data(), v.dim(0), width);
        std::size_t p = 0;
        for (std::size_t s = 0; s < qsegs.size(); ++s) {
          const Segment qs = qsegs[s], ks = ksegs[s];
          for (Index h = 0; h < heads; ++h, ++p) {
            const Index c0 = h * head_dim;
            const RowMatrix& pr = probs[p];
            const auto go = gm.block(qs.offset, c0, qs.length, head_dim);
            gvm.block(ks.offset, c0, ks.length, head_dim).noalias() += pr.transpose() * go;
            const RowMatrix gp = go * vm.block(ks.offset, c0, ks.length, head_dim).transpose();
            const Eigen::VectorXd dots = pr.cwiseProduct(gp).rowwise().sum();
            const RowMatrix gs = pr.cwiseProduct(gp - dots.replicate(1, ks.length)) * scale;
            gqm.block(qs.offset, c0, qs.length, head_dim).noalias() +=
                gs * km.block(ks.offset, c0, ks.length, head_dim);
            gkm.block(ks.offset, c0, ks.length, head_dim).noalias() +=
                gs.transpose() * qm.block(qs.offset, c0, qs.length, head_dim);
          }
        }
        if (q.tracked()) q.node()->accumulate(gq);
        if (k.tracked()) k.node()->accumulate(gk);
        if (v.tracked()) v.node()->accumulate(gv);
      });
  return out;
}

}  // namespace siaedit::num
