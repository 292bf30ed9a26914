#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lossforge/tensor.hpp"

namespace lossforge {

enum class MetricKind { MIoU, FWIoU, GAcc, MAcc, BIoU, BF1, BoxIoU, DetRate };

inline std::string_view metric_name(MetricKind m) {
  switch (m) {
    case MetricKind::MIoU: return "miou";
    case MetricKind::FWIoU: return "fwiou";
    case MetricKind::GAcc: return "gacc";
    case MetricKind::MAcc: return "macc";
    case MetricKind::BIoU: return "biou";
    case MetricKind::BF1: return "bf1";
    case MetricKind::BoxIoU: return "boxiou";
    case MetricKind::DetRate: return "detrate";
  }
  return "?";
}

inline std::optional<MetricKind> parse_metric(std::string_view name) {
  for (MetricKind m : {MetricKind::MIoU, MetricKind::FWIoU, MetricKind::GAcc, MetricKind::MAcc,
                       MetricKind::BIoU, MetricKind::BF1, MetricKind::BoxIoU,
                       MetricKind::DetRate}) {
    if (metric_name(m) == name) return m;
  }
  return std::nullopt;
}

inline bool is_boundary_metric(MetricKind m) {
  return m == MetricKind::BIoU || m == MetricKind::BF1;
}

// ---------------------------------------------------------------------------
// Label maps and confusion counting

// Per-pixel class indices for a batch of (h, w) planes.
struct LabelMap {
  int n = 0, h = 0, w = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_) : n(n_), h(h_), w(w_), labels(std::size_t(n_) * h_ * w_, 0) {}

  int& at(int ni, int hi, int wi) { return labels[(std::size_t(ni) * h + hi) * w + wi]; }
  int at(int ni, int hi, int wi) const { return labels[(std::size_t(ni) * h + hi) * w + wi]; }
};

// Per-pixel channel argmax; ties resolve to the lowest channel index.
inline LabelMap argmax_labels(const Tensor4& t) {
  const Dims d = t.dims();
  LabelMap out(d.n, d.h, d.w);
  for (int n = 0; n < d.n; ++n) {
    for (int h = 0; h < d.h; ++h) {
      for (int w = 0; w < d.w; ++w) {
        int best = 0;
        double best_v = t.at(n, 0, h, w);
        for (int c = 1; c < d.c; ++c) {
          const double v = t.at(n, c, h, w);
          if (v > best_v) {
            best_v = v;
            best = c;
          }
        }
        out.at(n, h, w) = best;
      }
    }
  }
  return out;
}

struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;  // row = ground truth, col = prediction

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int c) : classes(c), counts(std::size_t(c) * c, 0) {}

  std::int64_t& at(int gt, int pred) { return counts[std::size_t(gt) * classes + pred]; }
  std::int64_t at(int gt, int pred) const { return counts[std::size_t(gt) * classes + pred]; }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts) s += v;
    return s;
  }

  void add(const ConfusionMatrix& other) {
    if (classes != other.classes) throw std::invalid_argument("confusion: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  }

  std::int64_t gt_count(int c) const {
    std::int64_t s = 0;
    for (int p = 0; p < classes; ++p) s += at(c, p);
    return s;
  }
  std::int64_t pred_count(int c) const {
    std::int64_t s = 0;
    for (int g = 0; g < classes; ++g) s += at(g, c);
    return s;
  }
};

inline ConfusionMatrix confusion_from_labels(const LabelMap& pred, const LabelMap& target,
                                             int classes) {
  if (pred.n != target.n || pred.h != target.h || pred.w != target.w) {
    throw std::invalid_argument("confusion: label map shape mismatch");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    ++cm.counts[std::size_t(target.labels[i]) * classes + pred.labels[i]];
  }
  return cm;
}

inline ConfusionMatrix confusion(const Tensor4& pred, const Tensor4& target) {
  require_same_dims(pred, target, "confusion");
  return confusion_from_labels(argmax_labels(pred), argmax_labels(target), pred.dims().c);
}

enum class SegMetric { MIoU, FWIoU, GAcc, MAcc };

// Classes absent from both ground truth and prediction are excluded from the
// class-averaged metrics. mAcc additionally skips classes without ground
// truth pixels (the recall denominator would be 0/0).
inline double seg_metric(const ConfusionMatrix& cm, SegMetric kind) {
  const std::int64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("seg_metric: empty confusion matrix");

  switch (kind) {
    case SegMetric::GAcc: {
      std::int64_t diag = 0;
      for (int c = 0; c < cm.classes; ++c) diag += cm.at(c, c);
      return double(diag) / double(total);
    }
    case SegMetric::MIoU: {
      double sum = 0.0;
      int present = 0;
      for (int c = 0; c < cm.classes; ++c) {
        const std::int64_t tp = cm.at(c, c);
        const std::int64_t uni = cm.gt_count(c) + cm.pred_count(c) - tp;
        if (uni == 0) continue;
        sum += double(tp) / double(uni);
        ++present;
      }
      return present ? sum / present : 1.0;
    }
    case SegMetric::FWIoU: {
      double sum = 0.0;
      for (int c = 0; c < cm.classes; ++c) {
        const std::int64_t tp = cm.at(c, c);
        const std::int64_t gt = cm.gt_count(c);
        const std::int64_t uni = gt + cm.pred_count(c) - tp;
        if (uni == 0 || gt == 0) continue;
        sum += (double(gt) / double(total)) * (double(tp) / double(uni));
      }
      return sum;
    }
    case SegMetric::MAcc: {
      double sum = 0.0;
      int present = 0;
      for (int c = 0; c < cm.classes; ++c) {
        const std::int64_t gt = cm.gt_count(c);
        if (gt == 0) continue;
        sum += double(cm.at(c, c)) / double(gt);
        ++present;
      }
      return present ? sum / present : 1.0;
    }
  }
  return 0.0;
}

inline SegMetric to_seg_metric(MetricKind m) {
  switch (m) {
    case MetricKind::MIoU: return SegMetric::MIoU;
    case MetricKind::FWIoU: return SegMetric::FWIoU;
    case MetricKind::GAcc: return SegMetric::GAcc;
    case MetricKind::MAcc: return SegMetric::MAcc;
    default: throw std::invalid_argument("not a whole-image segmentation metric");
  }
}

// ---------------------------------------------------------------------------
// Boundary metrics

// A pixel is boundary iff some pixel within Chebyshev distance d has a
// different label. The image border itself is not automatically boundary.
struct BoundaryMask {
  int n = 0, h = 0, w = 0;
  int width = 1;
  std::vector<std::uint8_t> mask;

  BoundaryMask() = default;
  BoundaryMask(int n_, int h_, int w_, int d)
      : n(n_), h(h_), w(w_), width(d), mask(std::size_t(n_) * h_ * w_, 0) {}

  std::uint8_t& at(int ni, int hi, int wi) { return mask[(std::size_t(ni) * h + hi) * w + wi]; }
  std::uint8_t at(int ni, int hi, int wi) const {
    return mask[(std::size_t(ni) * h + hi) * w + wi];
  }

  std::int64_t count() const {
    std::int64_t s = 0;
    for (auto v : mask) s += v;
    return s;
  }

  Tensor4 to_tensor() const {
    Tensor4 t(Dims{n, 1, h, w});
    for (std::size_t i = 0; i < mask.size(); ++i) t[std::int64_t(i)] = mask[i];
    return t;
  }
};

inline BoundaryMask boundary_mask(const LabelMap& labels, int d) {
  if (d < 1) throw std::invalid_argument("boundary_mask: width must be >= 1");
  BoundaryMask out(labels.n, labels.h, labels.w, d);
  for (int n = 0; n < labels.n; ++n) {
    for (int h = 0; h < labels.h; ++h) {
      for (int w = 0; w < labels.w; ++w) {
        const int me = labels.at(n, h, w);
        bool boundary = false;
        for (int dh = -d; dh <= d && !boundary; ++dh) {
          for (int dw = -d; dw <= d; ++dw) {
            const int hh = h + dh, ww = w + dw;
            if (hh < 0 || hh >= labels.h || ww < 0 || ww >= labels.w) continue;
            if (labels.at(n, hh, ww) != me) {
              boundary = true;
              break;
            }
          }
        }
        out.at(n, h, w) = boundary ? 1 : 0;
      }
    }
  }
  return out;
}

enum class BoundaryMetric { BIoU, BF1 };

// BIoU: mIoU over the union of the two boundary bands. BF1: per-class F1 of
// boundary pixels matched within Euclidean distance theta, averaged over
// classes with boundary pixels on either side. Both boundary sets empty -> 1.
inline double boundary_metric(const LabelMap& pred, const LabelMap& target, BoundaryMetric kind,
                              int classes, int d = 1, double theta = 2.0) {
  if (pred.n != target.n || pred.h != target.h || pred.w != target.w) {
    throw std::invalid_argument("boundary_metric: shape mismatch");
  }
  const BoundaryMask pb = boundary_mask(pred, d);
  const BoundaryMask tb = boundary_mask(target, d);
  if (pb.count() == 0 && tb.count() == 0) return 1.0;

  if (kind == BoundaryMetric::BIoU) {
    ConfusionMatrix cm(classes);
    for (int n = 0; n < pred.n; ++n)
      for (int h = 0; h < pred.h; ++h)
        for (int w = 0; w < pred.w; ++w) {
          if (pb.at(n, h, w) || tb.at(n, h, w)) {
            ++cm.at(target.at(n, h, w), pred.at(n, h, w));
          }
        }
    return seg_metric(cm, SegMetric::MIoU);
  }

  // BF1. Collect per-class boundary pixel lists, then match within theta.
  struct Pixel {
    int n, h, w;
  };
  std::vector<std::vector<Pixel>> pred_px(classes), targ_px(classes);
  for (int n = 0; n < pred.n; ++n)
    for (int h = 0; h < pred.h; ++h)
      for (int w = 0; w < pred.w; ++w) {
        if (pb.at(n, h, w)) pred_px[pred.at(n, h, w)].push_back({n, h, w});
        if (tb.at(n, h, w)) targ_px[target.at(n, h, w)].push_back({n, h, w});
      }

  auto matched_fraction = [theta](const std::vector<Pixel>& from, const std::vector<Pixel>& to) {
    if (from.empty()) return 0.0;
    std::int64_t matched = 0;
    const double theta2 = theta * theta;
    for (const Pixel& p : from) {
      for (const Pixel& q : to) {
        if (p.n != q.n) continue;
        const double dh = p.h - q.h, dw = p.w - q.w;
        if (dh * dh + dw * dw <= theta2) {
          ++matched;
          break;
        }
      }
    }
    return double(matched) / double(from.size());
  };

  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    if (pred_px[c].empty() && targ_px[c].empty()) continue;
    ++present;
    const double precision = matched_fraction(pred_px[c], targ_px[c]);
    const double recall = matched_fraction(targ_px[c], pred_px[c]);
    if (precision + recall > 0) sum += 2.0 * precision * recall / (precision + recall);
  }
  return present ? sum / present : 1.0;
}

// ---------------------------------------------------------------------------
// Boxes

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double area() const { return (x2 - x1) * (y2 - y1); }
  bool valid() const { return x2 > x1 && y2 > y1; }
};

struct IueAreas {
  double i = 0, u = 0, e = 0;
};

inline IueAreas iue_areas(const Box& pred, const Box& target) {
  const double iw = std::min(pred.x2, target.x2) - std::max(pred.x1, target.x1);
  const double ih = std::min(pred.y2, target.y2) - std::max(pred.y1, target.y1);
  const double i = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double u = pred.area() + target.area() - i;
  const double ew = std::max(pred.x2, target.x2) - std::min(pred.x1, target.x1);
  const double eh = std::max(pred.y2, target.y2) - std::min(pred.y1, target.y1);
  return {i, u, ew * eh};
}

// d(i,u,e)/d(pred coords), one-sided at the min/max kinks (the prediction is
// treated as the active argument on exact ties). Rows: i, u, e. Columns:
// x1, y1, x2, y2.
struct IueJacobian {
  std::array<std::array<double, 4>, 3> d{};
};

inline IueJacobian iue_jacobian(const Box& p, const Box& t) {
  IueJacobian jac;
  const double iw = std::min(p.x2, t.x2) - std::max(p.x1, t.x1);
  const double ih = std::min(p.y2, t.y2) - std::max(p.y1, t.y1);
  const bool overlap = iw > 0 && ih > 0;

  // Intersection.
  const double diw_dx1 = (p.x1 >= t.x1) ? -1.0 : 0.0;
  const double diw_dx2 = (p.x2 <= t.x2) ? 1.0 : 0.0;
  const double dih_dy1 = (p.y1 >= t.y1) ? -1.0 : 0.0;
  const double dih_dy2 = (p.y2 <= t.y2) ? 1.0 : 0.0;
  if (overlap) {
    jac.d[0] = {diw_dx1 * ih, dih_dy1 * iw, diw_dx2 * ih, dih_dy2 * iw};
  }

  // Union: pred area minus intersection.
  const double pw = p.x2 - p.x1, ph = p.y2 - p.y1;
  jac.d[1] = {-ph - jac.d[0][0], -pw - jac.d[0][1], ph - jac.d[0][2], pw - jac.d[0][3]};

  // Enclosure.
  const double ew = std::max(p.x2, t.x2) - std::min(p.x1, t.x1);
  const double eh = std::max(p.y2, t.y2) - std::min(p.y1, t.y1);
  jac.d[2] = {(p.x1 <= t.x1) ? -eh : 0.0, (p.y1 <= t.y1) ? -ew : 0.0,
              (p.x2 >= t.x2) ? eh : 0.0, (p.y2 >= t.y2) ? ew : 0.0};
  return jac;
}

inline double box_iou(const Box& a, const Box& b) {
  const IueAreas areas = iue_areas(a, b);
  return areas.u > 0 ? areas.i / areas.u : 0.0;
}

// Maps a raw (x1,y1,x2,y2) quadruple to a valid box: midpoint kept, side
// lengths |dx|+min_size and |dy|+min_size. Differentiable a.e.; the sign
// factors are what the backward pass needs.
struct CanonicalBox {
  Box box;
  double sx = 1.0, sy = 1.0;
};

inline CanonicalBox canonicalize_box(double x1, double y1, double x2, double y2,
                                     double min_size = 1e-3) {
  CanonicalBox r;
  r.sx = (x2 - x1) >= 0 ? 1.0 : -1.0;
  r.sy = (y2 - y1) >= 0 ? 1.0 : -1.0;
  const double cx = 0.5 * (x1 + x2), cy = 0.5 * (y1 + y2);
  const double hw = 0.5 * (r.sx * (x2 - x1) + min_size);
  const double hh = 0.5 * (r.sy * (y2 - y1) + min_size);
  r.box = Box{cx - hw, cy - hh, cx + hw, cy + hh};
  return r;
}

// Chain rule through canonicalize_box: accumulates d(loss)/d(raw coords)
// given d(loss)/d(canonical coords) in the order x1, y1, x2, y2.
inline void canonical_box_backward(const CanonicalBox& c, const double dcanon[4], double draw[4]) {
  const double sx = c.sx, sy = c.sy;
  draw[0] += 0.5 * (1 + sx) * dcanon[0] + 0.5 * (1 - sx) * dcanon[2];
  draw[2] += 0.5 * (1 - sx) * dcanon[0] + 0.5 * (1 + sx) * dcanon[2];
  draw[1] += 0.5 * (1 + sy) * dcanon[1] + 0.5 * (1 - sy) * dcanon[3];
  draw[3] += 0.5 * (1 - sy) * dcanon[1] + 0.5 * (1 + sy) * dcanon[3];
}

inline double box_regression_score(const std::vector<Box>& pred, const std::vector<Box>& target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw std::invalid_argument("box_regression_score: box count mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!target[i].valid()) {
      throw std::invalid_argument("box_regression_score: degenerate target box");
    }
    sum += box_iou(pred[i], target[i]);
  }
  return sum / double(pred.size());
}

}  // namespace lossforge
