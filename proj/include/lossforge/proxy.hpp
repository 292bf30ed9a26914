#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "lossforge/expr.hpp"
#include "lossforge/metrics.hpp"

namespace lossforge {

enum class BranchKind { Classification, BoxRegression };

// One cached (prediction, target) pair of the rejection protocol, for one
// loss branch. Classification predictions are softmax probabilities; box
// predictions are raw coordinates that get canonicalized before the areas
// are derived.
struct RejectionBranchSample {
  BranchKind kind = BranchKind::Classification;
  Tensor4 prediction;
  Tensor4 loss_target;    // what the loss graph sees as y
  Tensor4 metric_target;  // what the metric scores against
};

struct TrainerConfig {
  int iterations = 300;
  int batch = 8;
  double lr = 0.05;
  double momentum = 0.9;
};

struct TrainOutcome {
  double fitness = 0.0;
  bool aborted = false;
  int iterations_run = 0;
};

// ---------------------------------------------------------------------------
// Shared predictor plumbing: a two-layer dense net applied independently per
// position, with manual forward/backward and momentum SGD.

struct TwoLayerMlp {
  int in = 0, hidden = 0, out = 0;
  std::vector<double> w1, b1, w2, b2;

  void init(int in_, int hidden_, int out_, std::mt19937_64& rng, double scale = 0.5,
            double out_scale = -1.0) {
    in = in_;
    hidden = hidden_;
    out = out_;
    if (out_scale < 0) out_scale = scale;
    auto fill = [&rng](std::vector<double>& v, std::size_t count, double s) {
      std::normal_distribution<double> dist(0.0, s);
      v.resize(count);
      for (double& x : v) x = dist(rng);
    };
    fill(w1, std::size_t(hidden) * in, scale);
    fill(b1, hidden, scale);
    fill(w2, std::size_t(out) * hidden, out_scale);
    fill(b2, out, out_scale);
  }

  std::size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

  // x[in] -> logits[out]; hidden_act[hidden] is stored for backward.
  void forward(const double* x, double* hidden_act, double* logits) const {
    for (int j = 0; j < hidden; ++j) {
      double z = b1[j];
      const double* row = &w1[std::size_t(j) * in];
      for (int i = 0; i < in; ++i) z += row[i] * x[i];
      hidden_act[j] = std::tanh(z);
    }
    for (int k = 0; k < out; ++k) {
      double z = b2[k];
      const double* row = &w2[std::size_t(k) * hidden];
      for (int j = 0; j < hidden; ++j) z += row[j] * hidden_act[j];
      logits[k] = z;
    }
  }

  struct Grads {
    std::vector<double> w1, b1, w2, b2;
    void reset(const TwoLayerMlp& m) {
      w1.assign(m.w1.size(), 0.0);
      b1.assign(m.b1.size(), 0.0);
      w2.assign(m.w2.size(), 0.0);
      b2.assign(m.b2.size(), 0.0);
    }
    bool all_finite() const {
      for (const auto* v : {&w1, &b1, &w2, &b2}) {
        for (double x : *v) {
          if (!std::isfinite(x)) return false;
        }
      }
      return true;
    }
  };

  // Accumulates parameter gradients for one position given d(loss)/d(logits).
  void backward(const double* x, const double* hidden_act, const double* dlogits,
                Grads& g) const {
    std::vector<double> dhidden(hidden, 0.0);
    for (int k = 0; k < out; ++k) {
      g.b2[k] += dlogits[k];
      double* wrow = &g.w2[std::size_t(k) * hidden];
      const double* row = &w2[std::size_t(k) * hidden];
      for (int j = 0; j < hidden; ++j) {
        wrow[j] += dlogits[k] * hidden_act[j];
        dhidden[j] += dlogits[k] * row[j];
      }
    }
    for (int j = 0; j < hidden; ++j) {
      const double dz = dhidden[j] * (1.0 - hidden_act[j] * hidden_act[j]);
      g.b1[j] += dz;
      double* wrow = &g.w1[std::size_t(j) * in];
      for (int i = 0; i < in; ++i) wrow[i] += dz * x[i];
    }
  }

  struct Momentum {
    std::vector<double> w1, b1, w2, b2;
    void reset(const TwoLayerMlp& m) {
      w1.assign(m.w1.size(), 0.0);
      b1.assign(m.b1.size(), 0.0);
      w2.assign(m.w2.size(), 0.0);
      b2.assign(m.b2.size(), 0.0);
    }
  };

  void sgd_step(const Grads& g, Momentum& v, double lr, double momentum) {
    auto upd = [lr, momentum](std::vector<double>& p, const std::vector<double>& grad,
                              std::vector<double>& vel) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        vel[i] = momentum * vel[i] + grad[i];
        p[i] -= lr * vel[i];
      }
    };
    upd(w1, g.w1, v.w1);
    upd(b1, g.b1, v.b1);
    upd(w2, g.w2, v.w2);
    upd(b2, g.b2, v.b2);
  }

  bool all_finite() const {
    for (const auto* v : {&w1, &b1, &w2, &b2}) {
      for (double x : *v) {
        if (!std::isfinite(x)) return false;
      }
    }
    return true;
  }
};

inline void softmax(const double* logits, double* probs, int count) {
  double mx = logits[0];
  for (int i = 1; i < count; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < count; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (int i = 0; i < count; ++i) probs[i] /= sum;
}

// d(loss)/d(logits) from d(loss)/d(probs) for a softmax output.
inline void softmax_backward(const double* probs, const double* dprobs, double* dlogits,
                             int count) {
  double dot = 0.0;
  for (int i = 0; i < count; ++i) dot += dprobs[i] * probs[i];
  for (int i = 0; i < count; ++i) dlogits[i] = probs[i] * (dprobs[i] - dot);
}

// ---------------------------------------------------------------------------
// Proxy task interface

class ProxyTask {
 public:
  virtual ~ProxyTask() = default;

  virtual std::string name() const = 0;
  virtual int branch_count() const = 0;
  virtual std::string branch_name(int branch) const = 0;
  virtual LeafVocab branch_vocab(int branch) const = 0;
  virtual std::vector<double> branch_weights() const {
    return std::vector<double>(branch_count(), 1.0);
  }
  virtual int train_size() const = 0;
  virtual int eval_size() const = 0;
  virtual bool supports_metric(MetricKind m) const = 0;

  // Trainer settings the task was calibrated with; callers may override.
  virtual TrainerConfig default_trainer() const { return TrainerConfig{}; }

  // Trains a fresh predictor under the candidate loss and scores the target
  // metric on the held-out split. Non-finite loss values or gradients abort
  // with fitness 0 when invalid_early_stop is set; otherwise training runs
  // the full schedule and the final parameters are scored as-is.
  virtual TrainOutcome train_and_score(const MultiBranchLoss& loss, MetricKind metric,
                                       std::uint64_t seed, const TrainerConfig& cfg,
                                       bool invalid_early_stop) const = 0;

  // Captures B (prediction, target) pairs per branch from a freshly
  // initialized predictor on random training samples.
  virtual std::vector<std::vector<RejectionBranchSample>> capture_rejection_samples(
      int b, MetricKind metric, std::uint64_t seed) const = 0;

  // Per-sample metric for one branch, counterpart branches held at their
  // ground truth.
  virtual double branch_metric(MetricKind metric, int branch, const Tensor4& prediction,
                               const RejectionBranchSample& sample) const = 0;
};

// ---------------------------------------------------------------------------
// Synthetic segmentation task: Voronoi label maps, smoothed class-indicator
// features plus noise, per-pixel two-layer softmax predictor.

struct SegTaskConfig {
  int classes = 4;
  int images = 64;
  int hw = 16;
  std::uint64_t seed = 1000;
  double noise = 0.25;
  int blur_passes = 2;
  int hidden = 8;
};

class SegmentationTask final : public ProxyTask {
 public:
  explicit SegmentationTask(const SegTaskConfig& cfg) : cfg_(cfg) {
    if (cfg.classes < 2 || cfg.images < 20 || cfg.hw < 8) {
      throw std::invalid_argument("segmentation task: need classes >= 2, images >= 20, hw >= 8");
    }
    generate();
  }

  std::string name() const override { return "seg"; }
  int branch_count() const override { return 1; }
  std::string branch_name(int) const override { return "seg"; }
  LeafVocab branch_vocab(int) const override { return LeafVocab::classification(); }
  int train_size() const override { return int(train_idx_.size()); }
  int eval_size() const override { return int(eval_idx_.size()); }
  bool supports_metric(MetricKind m) const override {
    return m == MetricKind::MIoU || m == MetricKind::FWIoU || m == MetricKind::GAcc ||
           m == MetricKind::MAcc || m == MetricKind::BIoU || m == MetricKind::BF1;
  }

  const Tensor4& features(int i) const { return features_[i]; }
  const Tensor4& one_hot(int i) const { return one_hot_[i]; }
  const LabelMap& labels(int i) const { return labels_[i]; }

  TrainOutcome train_and_score(const MultiBranchLoss& loss, MetricKind metric,
                               std::uint64_t seed, const TrainerConfig& cfg,
                               bool invalid_early_stop) const override {
    if (loss.branches.size() != 1) {
      throw std::invalid_argument("segmentation task: expected a single-branch loss");
    }
    std::mt19937_64 rng(seed);
    TwoLayerMlp net;
    net.init(cfg_.classes, cfg_.hidden, cfg_.classes, rng);
    TwoLayerMlp::Grads grads;
    TwoLayerMlp::Momentum vel;
    vel.reset(net);

    GraphEvaluator ev(loss.branches[0]);
    const bool needs_grad = depends_on_prediction(loss.branches[0]);
    std::uniform_int_distribution<int> pick(0, int(train_idx_.size()) - 1);

    TrainOutcome outcome;
    const int hw = cfg_.hw, c = cfg_.classes;
    const Dims batch_dims{cfg.batch, c, hw, hw};
    Tensor4 probs(batch_dims), target(batch_dims);
    std::vector<int> batch(cfg.batch);
    std::vector<double> hidden_buf(std::size_t(cfg.batch) * hw * hw * cfg_.hidden);
    std::vector<double> x(c), logit(c), dprob(c), dlogit(c);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
      for (int bi = 0; bi < cfg.batch; ++bi) batch[bi] = train_idx_[pick(rng)];

      // Forward.
      for (int bi = 0; bi < cfg.batch; ++bi) {
        const Tensor4& feat = features_[batch[bi]];
        const Tensor4& src = loss_target(metric, batch[bi]);
        for (int h = 0; h < hw; ++h) {
          for (int w = 0; w < hw; ++w) {
            for (int ci = 0; ci < c; ++ci) x[ci] = feat.at(0, ci, h, w);
            double* hid = &hidden_buf[((std::size_t(bi) * hw + h) * hw + w) * cfg_.hidden];
            net.forward(x.data(), hid, logit.data());
            softmax(logit.data(), dlogit.data(), c);
            for (int ci = 0; ci < c; ++ci) {
              probs.at(bi, ci, h, w) = dlogit[ci];
              target.at(bi, ci, h, w) = src.at(0, ci, h, w);
            }
          }
        }
      }

      LeafBindings bind;
      bind.bind(LeafKind::YHat, probs);
      bind.bind(LeafKind::Y, target);
      const Tensor4& out = ev.forward(bind);
      const double value = loss_value_from_output(out);
      if (invalid_early_stop && !std::isfinite(value)) {
        outcome.aborted = true;
        outcome.iterations_run = iter;
        return outcome;
      }

      if (needs_grad) {
        ev.backward(1.0 / (double(batch_dims.n) * batch_dims.h * batch_dims.w));
        const Tensor4* dprobs = ev.leaf_grad(LeafKind::YHat);
        if (invalid_early_stop && dprobs && !dprobs->all_finite()) {
          outcome.aborted = true;
          outcome.iterations_run = iter;
          return outcome;
        }
        grads.reset(net);
        for (int bi = 0; bi < cfg.batch; ++bi) {
          const Tensor4& feat = features_[batch[bi]];
          for (int h = 0; h < hw; ++h) {
            for (int w = 0; w < hw; ++w) {
              for (int ci = 0; ci < c; ++ci) {
                x[ci] = feat.at(0, ci, h, w);
                dprob[ci] = dprobs ? dprobs->at(bi, ci, h, w) : 0.0;
                logit[ci] = probs.at(bi, ci, h, w);
              }
              const double* hid =
                  &hidden_buf[((std::size_t(bi) * hw + h) * hw + w) * cfg_.hidden];
              softmax_backward(logit.data(), dprob.data(), dlogit.data(), c);
              net.backward(x.data(), hid, dlogit.data(), grads);
            }
          }
        }
        if (invalid_early_stop && !grads.all_finite()) {
          outcome.aborted = true;
          outcome.iterations_run = iter;
          return outcome;
        }
        net.sgd_step(grads, vel, cfg.lr, cfg.momentum);
      }
      outcome.iterations_run = iter + 1;
    }
    outcome.fitness = evaluate(net, metric);
    return outcome;
  }

  std::vector<std::vector<RejectionBranchSample>> capture_rejection_samples(
      int b, MetricKind metric, std::uint64_t seed) const override {
    if (b > train_size()) {
      throw std::invalid_argument("capture: task training set smaller than B");
    }
    std::mt19937_64 rng(seed);
    TwoLayerMlp net;
    net.init(cfg_.classes, cfg_.hidden, cfg_.classes, rng);

    std::vector<int> order = train_idx_;
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<RejectionBranchSample>> samples;
    for (int k = 0; k < b; ++k) {
      const int idx = order[k];
      RejectionBranchSample s;
      s.kind = BranchKind::Classification;
      s.prediction = predict(net, features_[idx]);
      s.loss_target = loss_target(metric, idx);
      s.metric_target = one_hot_[idx];
      samples.push_back({std::move(s)});
    }
    return samples;
  }

  double branch_metric(MetricKind metric, int, const Tensor4& prediction,
                       const RejectionBranchSample& sample) const override {
    const LabelMap pred = argmax_labels(prediction);
    const LabelMap target = argmax_labels(sample.metric_target);
    if (is_boundary_metric(metric)) {
      return boundary_metric(pred, target,
                             metric == MetricKind::BIoU ? BoundaryMetric::BIoU
                                                        : BoundaryMetric::BF1,
                             cfg_.classes);
    }
    return seg_metric(confusion_from_labels(pred, target, cfg_.classes), to_seg_metric(metric));
  }

 private:
  // For boundary metrics the loss target is the per-class inner boundary of
  // the label map rather than the full one-hot mask.
  const Tensor4& loss_target(MetricKind metric, int idx) const {
    return is_boundary_metric(metric) ? boundary_onehot_[idx] : one_hot_[idx];
  }

  Tensor4 predict(const TwoLayerMlp& net, const Tensor4& feat) const {
    const int hw = cfg_.hw, c = cfg_.classes;
    Tensor4 probs({1, c, hw, hw});
    std::vector<double> x(c), hid(cfg_.hidden), logit(c), p(c);
    for (int h = 0; h < hw; ++h) {
      for (int w = 0; w < hw; ++w) {
        for (int ci = 0; ci < c; ++ci) x[ci] = feat.at(0, ci, h, w);
        net.forward(x.data(), hid.data(), logit.data());
        softmax(logit.data(), p.data(), c);
        for (int ci = 0; ci < c; ++ci) probs.at(0, ci, h, w) = p[ci];
      }
    }
    return probs;
  }

  double evaluate(const TwoLayerMlp& net, MetricKind metric) const {
    if (is_boundary_metric(metric)) {
      double sum = 0.0;
      for (int idx : eval_idx_) {
        const LabelMap pred = argmax_labels(predict(net, features_[idx]));
        sum += boundary_metric(pred, labels_[idx],
                               metric == MetricKind::BIoU ? BoundaryMetric::BIoU
                                                          : BoundaryMetric::BF1,
                               cfg_.classes);
      }
      return sum / double(eval_idx_.size());
    }
    ConfusionMatrix cm(cfg_.classes);
    for (int idx : eval_idx_) {
      const LabelMap pred = argmax_labels(predict(net, features_[idx]));
      cm.add(confusion_from_labels(pred, labels_[idx], cfg_.classes));
    }
    return seg_metric(cm, to_seg_metric(metric));
  }

  void generate() {
    std::mt19937_64 rng(cfg_.seed);
    const int hw = cfg_.hw, c = cfg_.classes;
    const int sites = c + 3;
    std::uniform_real_distribution<double> coord(0.0, double(hw));
    std::normal_distribution<double> noise(0.0, cfg_.noise);

    for (int img = 0; img < cfg_.images; ++img) {
      std::vector<double> sx(sites), sy(sites);
      for (int s = 0; s < sites; ++s) {
        sx[s] = coord(rng);
        sy[s] = coord(rng);
      }
      LabelMap lm(1, hw, hw);
      for (int h = 0; h < hw; ++h) {
        for (int w = 0; w < hw; ++w) {
          int best = 0;
          double best_d = 1e30;
          for (int s = 0; s < sites; ++s) {
            const double dx = w + 0.5 - sx[s], dy = h + 0.5 - sy[s];
            const double d2 = dx * dx + dy * dy;
            if (d2 < best_d) {
              best_d = d2;
              best = s % c;
            }
          }
          lm.at(0, h, w) = best;
        }
      }

      Tensor4 onehot = Tensor4::zeros({1, c, hw, hw});
      for (int h = 0; h < hw; ++h)
        for (int w = 0; w < hw; ++w) onehot.at(0, lm.at(0, h, w), h, w) = 1.0;

      Tensor4 feat = onehot;
      for (int pass = 0; pass < cfg_.blur_passes; ++pass) feat = blur3x3(feat);
      for (std::int64_t i = 0; i < feat.size(); ++i) feat[i] += noise(rng);

      // Per-class inner boundary as a one-hot-like mask.
      const BoundaryMask bm = boundary_mask(lm, 1);
      Tensor4 bnd = Tensor4::zeros({1, c, hw, hw});
      for (int h = 0; h < hw; ++h)
        for (int w = 0; w < hw; ++w) {
          if (bm.at(0, h, w)) bnd.at(0, lm.at(0, h, w), h, w) = 1.0;
        }

      labels_.push_back(std::move(lm));
      one_hot_.push_back(std::move(onehot));
      features_.push_back(std::move(feat));
      boundary_onehot_.push_back(std::move(bnd));
    }

    const int eval_count = cfg_.images / 5;
    for (int i = 0; i < cfg_.images; ++i) {
      (i < cfg_.images - eval_count ? train_idx_ : eval_idx_).push_back(i);
    }
  }

  static Tensor4 blur3x3(const Tensor4& t) {
    const Dims d = t.dims();
    Tensor4 out(d);
    for (int n = 0; n < d.n; ++n)
      for (int c = 0; c < d.c; ++c)
        for (int h = 0; h < d.h; ++h)
          for (int w = 0; w < d.w; ++w) {
            double s = 0;
            int count = 0;
            for (int dh = -1; dh <= 1; ++dh)
              for (int dw = -1; dw <= 1; ++dw) {
                const int hh = h + dh, ww = w + dw;
                if (hh < 0 || hh >= d.h || ww < 0 || ww >= d.w) continue;
                s += t.at(n, c, hh, ww);
                ++count;
              }
            out.at(n, c, h, w) = s / count;
          }
    return out;
  }

  SegTaskConfig cfg_;
  std::vector<Tensor4> features_, one_hot_, boundary_onehot_;
  std::vector<LabelMap> labels_;
  std::vector<int> train_idx_, eval_idx_;
};

// ---------------------------------------------------------------------------
// Box regression task: recover a target box from a noisy feature view. Loss
// graphs consume the derived (i, u, e) areas; descent and training both act
// on raw box coordinates.

struct BoxTaskConfig {
  int samples = 64;
  std::uint64_t seed = 2000;
  double scene = 16.0;
  double feature_noise = 0.03;
  int hidden = 16;
};

namespace detail {

// Forward pass from raw coordinate tensor (N,4,G,1) to area tensors
// (N,1,G,1), with the canonicalization factors kept for backward.
struct BoxAreaTrace {
  std::vector<CanonicalBox> canon;  // N*G entries
  Tensor4 i, u, e;
};

inline BoxAreaTrace box_areas_forward(const Tensor4& coords, const Tensor4& target) {
  const Dims d = coords.dims();
  BoxAreaTrace tr{{}, Tensor4({d.n, 1, d.h, 1}), Tensor4({d.n, 1, d.h, 1}),
                  Tensor4({d.n, 1, d.h, 1})};
  tr.canon.reserve(std::size_t(d.n) * d.h);
  for (int n = 0; n < d.n; ++n) {
    for (int g = 0; g < d.h; ++g) {
      const CanonicalBox cb = canonicalize_box(coords.at(n, 0, g, 0), coords.at(n, 1, g, 0),
                                               coords.at(n, 2, g, 0), coords.at(n, 3, g, 0));
      const Box tgt{target.at(n, 0, g, 0), target.at(n, 1, g, 0), target.at(n, 2, g, 0),
                    target.at(n, 3, g, 0)};
      const IueAreas areas = iue_areas(cb.box, tgt);
      tr.i.at(n, 0, g, 0) = areas.i;
      tr.u.at(n, 0, g, 0) = areas.u;
      tr.e.at(n, 0, g, 0) = areas.e;
      tr.canon.push_back(cb);
    }
  }
  return tr;
}

// d(loss)/d(raw coords) from the area adjoints.
inline Tensor4 box_areas_backward(const Tensor4& coords, const Tensor4& target,
                                  const BoxAreaTrace& tr, const Tensor4* di, const Tensor4* du,
                                  const Tensor4* de) {
  const Dims d = coords.dims();
  Tensor4 grad = Tensor4::zeros(d);
  for (int n = 0; n < d.n; ++n) {
    for (int g = 0; g < d.h; ++g) {
      const CanonicalBox& cb = tr.canon[std::size_t(n) * d.h + g];
      const Box tgt{target.at(n, 0, g, 0), target.at(n, 1, g, 0), target.at(n, 2, g, 0),
                    target.at(n, 3, g, 0)};
      const IueJacobian jac = iue_jacobian(cb.box, tgt);
      double dcanon[4] = {0, 0, 0, 0};
      const double adj[3] = {di ? di->at(n, 0, g, 0) : 0.0, du ? du->at(n, 0, g, 0) : 0.0,
                             de ? de->at(n, 0, g, 0) : 0.0};
      for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 4; ++col) dcanon[col] += adj[row] * jac.d[row][col];
      }
      double draw[4] = {0, 0, 0, 0};
      canonical_box_backward(cb, dcanon, draw);
      for (int col = 0; col < 4; ++col) grad.at(n, col, g, 0) += draw[col];
    }
  }
  return grad;
}

}  // namespace detail

class BoxRegressionTask final : public ProxyTask {
 public:
  explicit BoxRegressionTask(const BoxTaskConfig& cfg) : cfg_(cfg) {
    if (cfg.samples < 20) throw std::invalid_argument("box task: need samples >= 20");
    generate();
  }

  std::string name() const override { return "box"; }
  int branch_count() const override { return 1; }
  std::string branch_name(int) const override { return "reg"; }
  LeafVocab branch_vocab(int) const override { return LeafVocab::box_regression(); }
  int train_size() const override { return int(train_idx_.size()); }
  int eval_size() const override { return int(eval_idx_.size()); }
  bool supports_metric(MetricKind m) const override { return m == MetricKind::BoxIoU; }
  TrainerConfig default_trainer() const override {
    TrainerConfig cfg;
    cfg.lr = 0.01;
    return cfg;
  }

  TrainOutcome train_and_score(const MultiBranchLoss& loss, MetricKind metric,
                               std::uint64_t seed, const TrainerConfig& cfg,
                               bool invalid_early_stop) const override {
    if (loss.branches.size() != 1) {
      throw std::invalid_argument("box task: expected a single-branch loss");
    }
    if (metric != MetricKind::BoxIoU) throw std::invalid_argument("box task: metric must be boxiou");
    std::mt19937_64 rng(seed);
    TwoLayerMlp net;
    net.init(kFeatures, cfg_.hidden, 4, rng, 0.5, 0.1);
    TwoLayerMlp::Grads grads;
    TwoLayerMlp::Momentum vel;
    vel.reset(net);

    GraphEvaluator ev(loss.branches[0]);
    const bool needs_grad = depends_on_prediction(loss.branches[0]);
    std::uniform_int_distribution<int> pick(0, int(train_idx_.size()) - 1);

    TrainOutcome outcome;
    std::vector<int> batch(cfg.batch);
    Tensor4 coords({cfg.batch, 4, 1, 1}), targets({cfg.batch, 4, 1, 1});
    std::vector<double> hidden_buf(std::size_t(cfg.batch) * cfg_.hidden);
    std::vector<double> out4(4), dout(4);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
      for (int bi = 0; bi < cfg.batch; ++bi) batch[bi] = train_idx_[pick(rng)];

      for (int bi = 0; bi < cfg.batch; ++bi) {
        const Sample& s = samples_[batch[bi]];
        net.forward(s.features.data(), &hidden_buf[std::size_t(bi) * cfg_.hidden], out4.data());
        for (int k = 0; k < 4; ++k) {
          coords.at(bi, k, 0, 0) = anchor_[k] + kOutScale * out4[k];
          targets.at(bi, k, 0, 0) = s.target_coords[k];
        }
      }

      detail::BoxAreaTrace tr = detail::box_areas_forward(coords, targets);
      LeafBindings bind;
      bind.bind(LeafKind::BoxI, tr.i);
      bind.bind(LeafKind::BoxU, tr.u);
      bind.bind(LeafKind::BoxE, tr.e);
      const Tensor4& out = ev.forward(bind);
      const double value = loss_value_from_output(out);
      if (invalid_early_stop && !std::isfinite(value)) {
        outcome.aborted = true;
        outcome.iterations_run = iter;
        return outcome;
      }

      if (needs_grad) {
        ev.backward(1.0 / double(cfg.batch));
        Tensor4 dcoords = detail::box_areas_backward(coords, targets, tr,
                                                     ev.leaf_grad(LeafKind::BoxI),
                                                     ev.leaf_grad(LeafKind::BoxU),
                                                     ev.leaf_grad(LeafKind::BoxE));
        if (invalid_early_stop && !dcoords.all_finite()) {
          outcome.aborted = true;
          outcome.iterations_run = iter;
          return outcome;
        }
        grads.reset(net);
        for (int bi = 0; bi < cfg.batch; ++bi) {
          const Sample& s = samples_[batch[bi]];
          for (int k = 0; k < 4; ++k) dout[k] = kOutScale * dcoords.at(bi, k, 0, 0);
          net.backward(s.features.data(), &hidden_buf[std::size_t(bi) * cfg_.hidden],
                       dout.data(), grads);
        }
        if (invalid_early_stop && !grads.all_finite()) {
          outcome.aborted = true;
          outcome.iterations_run = iter;
          return outcome;
        }
        net.sgd_step(grads, vel, cfg.lr, cfg.momentum);
      }
      outcome.iterations_run = iter + 1;
    }
    outcome.fitness = evaluate(net);
    return outcome;
  }

  std::vector<std::vector<RejectionBranchSample>> capture_rejection_samples(
      int b, MetricKind, std::uint64_t seed) const override {
    if (b > train_size()) {
      throw std::invalid_argument("capture: task training set smaller than B");
    }
    std::mt19937_64 rng(seed);
    TwoLayerMlp net;
    net.init(kFeatures, cfg_.hidden, 4, rng, 0.5, 0.1);

    std::vector<int> order = train_idx_;
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<RejectionBranchSample>> out;
    std::vector<double> hid(cfg_.hidden), out4(4);
    for (int k = 0; k < b; ++k) {
      const Sample& s = samples_[order[k]];
      net.forward(s.features.data(), hid.data(), out4.data());
      RejectionBranchSample r;
      r.kind = BranchKind::BoxRegression;
      r.prediction = Tensor4({1, 4, 1, 1});
      r.loss_target = Tensor4({1, 4, 1, 1});
      for (int c = 0; c < 4; ++c) {
        r.prediction.at(0, c, 0, 0) = anchor_[c] + kOutScale * out4[c];
        r.loss_target.at(0, c, 0, 0) = s.target_coords[c];
      }
      r.metric_target = r.loss_target;
      out.push_back({std::move(r)});
    }
    return out;
  }

  double branch_metric(MetricKind, int, const Tensor4& prediction,
                       const RejectionBranchSample& sample) const override {
    double iou_sum = 0.0;
    const Dims d = prediction.dims();
    for (int n = 0; n < d.n; ++n) {
      for (int g = 0; g < d.h; ++g) {
        const CanonicalBox cb =
            canonicalize_box(prediction.at(n, 0, g, 0), prediction.at(n, 1, g, 0),
                             prediction.at(n, 2, g, 0), prediction.at(n, 3, g, 0));
        const Box tgt{sample.metric_target.at(n, 0, g, 0), sample.metric_target.at(n, 1, g, 0),
                      sample.metric_target.at(n, 2, g, 0), sample.metric_target.at(n, 3, g, 0)};
        iou_sum += box_iou(cb.box, tgt);
      }
    }
    return iou_sum / (double(d.n) * d.h);
  }

 private:
  static constexpr int kFeatures = 6;
  static constexpr double kOutScale = 4.0;  // box head output in scene units

  struct Sample {
    std::vector<double> features;
    double target_coords[4];
  };

  void generate() {
    std::mt19937_64 rng(cfg_.seed);
    std::uniform_real_distribution<double> pos(1.0, cfg_.scene / 2.0);
    std::uniform_real_distribution<double> side(3.0, 6.0);
    std::normal_distribution<double> fnoise(0.0, cfg_.feature_noise);

    for (int i = 0; i < cfg_.samples; ++i) {
      Sample s;
      const double x1 = pos(rng), y1 = pos(rng);
      const double x2 = x1 + side(rng), y2 = y1 + side(rng);
      s.target_coords[0] = x1;
      s.target_coords[1] = y1;
      s.target_coords[2] = x2;
      s.target_coords[3] = y2;
      s.features.resize(kFeatures);
      for (int k = 0; k < 4; ++k) s.features[k] = s.target_coords[k] / cfg_.scene + fnoise(rng);
      s.features[4] = fnoise(rng);
      s.features[5] = fnoise(rng);
      samples_.push_back(std::move(s));
    }
    anchor_ = {2.0, 2.0, cfg_.scene - 2.0, cfg_.scene - 2.0};

    const int eval_count = cfg_.samples / 5;
    for (int i = 0; i < cfg_.samples; ++i) {
      (i < cfg_.samples - eval_count ? train_idx_ : eval_idx_).push_back(i);
    }
  }

  double evaluate(const TwoLayerMlp& net) const {
    std::vector<double> hid(cfg_.hidden), out4(4);
    double sum = 0.0;
    for (int idx : eval_idx_) {
      const Sample& s = samples_[idx];
      net.forward(s.features.data(), hid.data(), out4.data());
      const CanonicalBox cb = canonicalize_box(
          anchor_[0] + kOutScale * out4[0], anchor_[1] + kOutScale * out4[1],
          anchor_[2] + kOutScale * out4[2], anchor_[3] + kOutScale * out4[3]);
      sum += box_iou(cb.box, Box{s.target_coords[0], s.target_coords[1], s.target_coords[2],
                                 s.target_coords[3]});
    }
    return sum / double(eval_idx_.size());
  }

  BoxTaskConfig cfg_;
  std::vector<Sample> samples_;
  std::array<double, 4> anchor_{};
  std::vector<int> train_idx_, eval_idx_;
};

// ---------------------------------------------------------------------------
// Two-branch detection-style task: per-instance classification plus box
// regression. A sample holds G instances; the metric is the fraction of
// instances detected (correct class and IoU >= 0.5), which is 0 for an
// untrained predictor.

struct Det2TaskConfig {
  int samples = 64;
  std::uint64_t seed = 3000;
  int classes = 4;
  int group = 8;
  double scene = 16.0;
  int hidden = 12;
};

class DetectionTask final : public ProxyTask {
 public:
  explicit DetectionTask(const Det2TaskConfig& cfg) : cfg_(cfg) {
    if (cfg.samples < 20) throw std::invalid_argument("det2 task: need samples >= 20");
    generate();
  }

  std::string name() const override { return "det2"; }
  int branch_count() const override { return 2; }
  std::string branch_name(int branch) const override { return branch == 0 ? "cls" : "reg"; }
  LeafVocab branch_vocab(int branch) const override {
    return branch == 0 ? LeafVocab::classification() : LeafVocab::box_regression();
  }
  std::vector<double> branch_weights() const override { return {1.0, 10.0}; }
  int train_size() const override { return int(train_idx_.size()); }
  int eval_size() const override { return int(eval_idx_.size()); }
  bool supports_metric(MetricKind m) const override { return m == MetricKind::DetRate; }
  TrainerConfig default_trainer() const override {
    TrainerConfig cfg;
    cfg.lr = 0.01;
    return cfg;
  }

  TrainOutcome train_and_score(const MultiBranchLoss& loss, MetricKind metric,
                               std::uint64_t seed, const TrainerConfig& cfg,
                               bool invalid_early_stop) const override {
    if (loss.branches.size() != 2) {
      throw std::invalid_argument("det2 task: expected a two-branch loss");
    }
    if (metric != MetricKind::DetRate) throw std::invalid_argument("det2 task: metric must be detrate");
    std::mt19937_64 rng(seed);
    TwoLayerMlp cls_net, box_net;
    cls_net.init(cfg_.classes, cfg_.hidden, cfg_.classes, rng);
    box_net.init(kBoxFeatures, cfg_.hidden, 4, rng, 0.5, 0.1);
    TwoLayerMlp::Grads cls_grads, box_grads;
    TwoLayerMlp::Momentum cls_vel, box_vel;
    cls_vel.reset(cls_net);
    box_vel.reset(box_net);

    GraphEvaluator cls_ev(loss.branches[0]), box_ev(loss.branches[1]);
    const bool cls_needs = depends_on_prediction(loss.branches[0]);
    const bool box_needs = depends_on_prediction(loss.branches[1]);
    const std::vector<double> weights = branch_weights();
    std::uniform_int_distribution<int> pick(0, int(train_idx_.size()) - 1);

    TrainOutcome outcome;
    const int g = cfg_.group, c = cfg_.classes;
    Tensor4 probs({cfg.batch, c, g, 1}), cls_target({cfg.batch, c, g, 1});
    Tensor4 coords({cfg.batch, 4, g, 1}), box_target({cfg.batch, 4, g, 1});
    std::vector<int> batch(cfg.batch);
    std::vector<double> cls_hidden(std::size_t(cfg.batch) * g * cfg_.hidden);
    std::vector<double> box_hidden(std::size_t(cfg.batch) * g * cfg_.hidden);
    std::vector<double> xbuf(std::max(c, kBoxFeatures)), logit(std::max(c, 4)),
        dprob(c), dlogit(std::max(c, 4));

    for (int iter = 0; iter < cfg.iterations; ++iter) {
      for (int bi = 0; bi < cfg.batch; ++bi) batch[bi] = train_idx_[pick(rng)];

      for (int bi = 0; bi < cfg.batch; ++bi) {
        const Sample& s = samples_[batch[bi]];
        for (int gi = 0; gi < g; ++gi) {
          const Instance& inst = s.instances[gi];
          double* hid = &cls_hidden[(std::size_t(bi) * g + gi) * cfg_.hidden];
          cls_net.forward(inst.cls_features.data(), hid, logit.data());
          softmax(logit.data(), dlogit.data(), c);
          for (int ci = 0; ci < c; ++ci) {
            probs.at(bi, ci, gi, 0) = dlogit[ci];
            cls_target.at(bi, ci, gi, 0) = ci == inst.cls ? 1.0 : 0.0;
          }
          double* bhid = &box_hidden[(std::size_t(bi) * g + gi) * cfg_.hidden];
          box_net.forward(inst.box_features.data(), bhid, logit.data());
          for (int k = 0; k < 4; ++k) {
            coords.at(bi, k, gi, 0) = anchor_[k] + kOutScale * logit[k];
            box_target.at(bi, k, gi, 0) = inst.target_coords[k];
          }
        }
      }

      LeafBindings cls_bind;
      cls_bind.bind(LeafKind::YHat, probs);
      cls_bind.bind(LeafKind::Y, cls_target);
      const double cls_value = loss_value_from_output(cls_ev.forward(cls_bind));

      detail::BoxAreaTrace tr = detail::box_areas_forward(coords, box_target);
      LeafBindings box_bind;
      box_bind.bind(LeafKind::BoxI, tr.i);
      box_bind.bind(LeafKind::BoxU, tr.u);
      box_bind.bind(LeafKind::BoxE, tr.e);
      const double box_value = loss_value_from_output(box_ev.forward(box_bind));

      const double total = weights[0] * cls_value + weights[1] * box_value;
      if (invalid_early_stop && !std::isfinite(total)) {
        outcome.aborted = true;
        outcome.iterations_run = iter;
        return outcome;
      }

      bool bad_grads = false;
      if (cls_needs) {
        cls_ev.backward(weights[0] / (double(cfg.batch) * g));
        const Tensor4* dprobs = cls_ev.leaf_grad(LeafKind::YHat);
        cls_grads.reset(cls_net);
        for (int bi = 0; bi < cfg.batch && dprobs; ++bi) {
          const Sample& s = samples_[batch[bi]];
          for (int gi = 0; gi < g; ++gi) {
            for (int ci = 0; ci < c; ++ci) {
              dprob[ci] = dprobs->at(bi, ci, gi, 0);
              logit[ci] = probs.at(bi, ci, gi, 0);
            }
            softmax_backward(logit.data(), dprob.data(), dlogit.data(), c);
            cls_net.backward(s.instances[gi].cls_features.data(),
                             &cls_hidden[(std::size_t(bi) * g + gi) * cfg_.hidden],
                             dlogit.data(), cls_grads);
          }
        }
        bad_grads |= !cls_grads.all_finite();
      }
      if (box_needs) {
        box_ev.backward(weights[1] / (double(cfg.batch) * g));
        Tensor4 dcoords = detail::box_areas_backward(coords, box_target, tr,
                                                     box_ev.leaf_grad(LeafKind::BoxI),
                                                     box_ev.leaf_grad(LeafKind::BoxU),
                                                     box_ev.leaf_grad(LeafKind::BoxE));
        bad_grads |= !dcoords.all_finite();
        box_grads.reset(box_net);
        for (int bi = 0; bi < cfg.batch; ++bi) {
          const Sample& s = samples_[batch[bi]];
          for (int gi = 0; gi < g; ++gi) {
            for (int k = 0; k < 4; ++k) dlogit[k] = kOutScale * dcoords.at(bi, k, gi, 0);
            box_net.backward(s.instances[gi].box_features.data(),
                             &box_hidden[(std::size_t(bi) * g + gi) * cfg_.hidden],
                             dlogit.data(), box_grads);
          }
        }
        bad_grads |= !box_grads.all_finite();
      }
      if (invalid_early_stop && bad_grads) {
        outcome.aborted = true;
        outcome.iterations_run = iter;
        return outcome;
      }
      if (cls_needs) cls_net.sgd_step(cls_grads, cls_vel, cfg.lr, cfg.momentum);
      if (box_needs) box_net.sgd_step(box_grads, box_vel, cfg.lr, cfg.momentum);
      outcome.iterations_run = iter + 1;
    }
    outcome.fitness = evaluate(cls_net, box_net);
    return outcome;
  }

  std::vector<std::vector<RejectionBranchSample>> capture_rejection_samples(
      int b, MetricKind, std::uint64_t seed) const override {
    if (b > train_size()) {
      throw std::invalid_argument("capture: task training set smaller than B");
    }
    std::mt19937_64 rng(seed);
    TwoLayerMlp cls_net, box_net;
    cls_net.init(cfg_.classes, cfg_.hidden, cfg_.classes, rng);
    box_net.init(kBoxFeatures, cfg_.hidden, 4, rng, 0.5, 0.1);

    std::vector<int> order = train_idx_;
    std::shuffle(order.begin(), order.end(), rng);

    const int g = cfg_.group, c = cfg_.classes;
    std::vector<std::vector<RejectionBranchSample>> out;
    std::vector<double> hid(cfg_.hidden), logit(std::max(c, 4)), p(c);
    for (int k = 0; k < b; ++k) {
      const Sample& s = samples_[order[k]];
      RejectionBranchSample cls;
      cls.kind = BranchKind::Classification;
      cls.prediction = Tensor4({1, c, g, 1});
      cls.loss_target = Tensor4::zeros({1, c, g, 1});
      RejectionBranchSample box;
      box.kind = BranchKind::BoxRegression;
      box.prediction = Tensor4({1, 4, g, 1});
      box.loss_target = Tensor4({1, 4, g, 1});
      for (int gi = 0; gi < g; ++gi) {
        const Instance& inst = s.instances[gi];
        cls_net.forward(inst.cls_features.data(), hid.data(), logit.data());
        softmax(logit.data(), p.data(), c);
        for (int ci = 0; ci < c; ++ci) cls.prediction.at(0, ci, gi, 0) = p[ci];
        cls.loss_target.at(0, inst.cls, gi, 0) = 1.0;
        box_net.forward(inst.box_features.data(), hid.data(), logit.data());
        for (int kk = 0; kk < 4; ++kk) {
          box.prediction.at(0, kk, gi, 0) = anchor_[kk] + kOutScale * logit[kk];
          box.loss_target.at(0, kk, gi, 0) = inst.target_coords[kk];
        }
      }
      cls.metric_target = cls.loss_target;
      box.metric_target = box.loss_target;
      std::vector<RejectionBranchSample> pair;
      pair.push_back(std::move(cls));
      pair.push_back(std::move(box));
      out.push_back(std::move(pair));
    }
    return out;
  }

  // Counterpart branch held at ground truth, so the cls branch scores the
  // correct-class rate and the reg branch the IoU >= 0.5 rate.
  double branch_metric(MetricKind, int branch, const Tensor4& prediction,
                       const RejectionBranchSample& sample) const override {
    const Dims d = prediction.dims();
    double hits = 0.0;
    for (int n = 0; n < d.n; ++n) {
      for (int gi = 0; gi < d.h; ++gi) {
        if (branch == 0) {
          int best = 0, truth = 0;
          double best_v = prediction.at(n, 0, gi, 0), truth_v = sample.metric_target.at(n, 0, gi, 0);
          for (int ci = 1; ci < d.c; ++ci) {
            if (prediction.at(n, ci, gi, 0) > best_v) {
              best_v = prediction.at(n, ci, gi, 0);
              best = ci;
            }
            if (sample.metric_target.at(n, ci, gi, 0) > truth_v) {
              truth_v = sample.metric_target.at(n, ci, gi, 0);
              truth = ci;
            }
          }
          hits += best == truth ? 1.0 : 0.0;
        } else {
          const CanonicalBox cb =
              canonicalize_box(prediction.at(n, 0, gi, 0), prediction.at(n, 1, gi, 0),
                               prediction.at(n, 2, gi, 0), prediction.at(n, 3, gi, 0));
          const Box tgt{sample.metric_target.at(n, 0, gi, 0),
                        sample.metric_target.at(n, 1, gi, 0),
                        sample.metric_target.at(n, 2, gi, 0),
                        sample.metric_target.at(n, 3, gi, 0)};
          hits += box_iou(cb.box, tgt) >= 0.5 ? 1.0 : 0.0;
        }
      }
    }
    return hits / (double(d.n) * d.h);
  }

 private:
  static constexpr int kBoxFeatures = 6;
  static constexpr double kOutScale = 4.0;

  struct Instance {
    int cls = 0;
    std::vector<double> cls_features;
    std::vector<double> box_features;
    double target_coords[4];
  };
  struct Sample {
    std::vector<Instance> instances;
  };

  void generate() {
    std::mt19937_64 rng(cfg_.seed);
    std::uniform_int_distribution<int> cls(0, cfg_.classes - 1);
    std::uniform_real_distribution<double> pos(1.0, cfg_.scene / 2.0);
    std::uniform_real_distribution<double> side(3.0, 6.0);
    std::normal_distribution<double> cnoise(0.0, 0.25), bnoise(0.0, 0.03);

    for (int i = 0; i < cfg_.samples; ++i) {
      Sample s;
      for (int gi = 0; gi < cfg_.group; ++gi) {
        Instance inst;
        inst.cls = cls(rng);
        inst.cls_features.resize(cfg_.classes);
        for (int ci = 0; ci < cfg_.classes; ++ci) {
          inst.cls_features[ci] = (ci == inst.cls ? 0.9 : 0.0) + cnoise(rng);
        }
        const double x1 = pos(rng), y1 = pos(rng);
        inst.target_coords[0] = x1;
        inst.target_coords[1] = y1;
        inst.target_coords[2] = x1 + side(rng);
        inst.target_coords[3] = y1 + side(rng);
        inst.box_features.resize(kBoxFeatures);
        for (int k = 0; k < 4; ++k) {
          inst.box_features[k] = inst.target_coords[k] / cfg_.scene + bnoise(rng);
        }
        inst.box_features[4] = bnoise(rng);
        inst.box_features[5] = bnoise(rng);
        s.instances.push_back(std::move(inst));
      }
      samples_.push_back(std::move(s));
    }
    anchor_ = {2.0, 2.0, cfg_.scene - 2.0, cfg_.scene - 2.0};

    const int eval_count = cfg_.samples / 5;
    for (int i = 0; i < cfg_.samples; ++i) {
      (i < cfg_.samples - eval_count ? train_idx_ : eval_idx_).push_back(i);
    }
  }

  double evaluate(const TwoLayerMlp& cls_net, const TwoLayerMlp& box_net) const {
    std::vector<double> hid(cfg_.hidden), logit(std::max(cfg_.classes, 4)), p(cfg_.classes);
    double hits = 0.0;
    std::int64_t total = 0;
    for (int idx : eval_idx_) {
      for (const Instance& inst : samples_[idx].instances) {
        cls_net.forward(inst.cls_features.data(), hid.data(), logit.data());
        softmax(logit.data(), p.data(), cfg_.classes);
        int best = 0;
        for (int ci = 1; ci < cfg_.classes; ++ci) {
          if (p[ci] > p[best]) best = ci;
        }
        box_net.forward(inst.box_features.data(), hid.data(), logit.data());
        const CanonicalBox cb = canonicalize_box(
            anchor_[0] + kOutScale * logit[0], anchor_[1] + kOutScale * logit[1],
            anchor_[2] + kOutScale * logit[2], anchor_[3] + kOutScale * logit[3]);
        const Box tgt{inst.target_coords[0], inst.target_coords[1], inst.target_coords[2],
                      inst.target_coords[3]};
        if (best == inst.cls && box_iou(cb.box, tgt) >= 0.5) hits += 1.0;
        ++total;
      }
    }
    return hits / double(total);
  }

  Det2TaskConfig cfg_;
  std::vector<Sample> samples_;
  std::array<double, 4> anchor_{};
  std::vector<int> train_idx_, eval_idx_;
};

// ---------------------------------------------------------------------------
// Task factory

struct TaskSpec {
  enum class Kind { Seg, Box, Det2 } kind = Kind::Seg;
  SegTaskConfig seg;
  BoxTaskConfig box;
  Det2TaskConfig det2;

  static std::optional<Kind> parse_kind(std::string_view name) {
    if (name == "seg") return Kind::Seg;
    if (name == "box") return Kind::Box;
    if (name == "det2") return Kind::Det2;
    return std::nullopt;
  }
  static std::string_view kind_name(Kind k) {
    switch (k) {
      case Kind::Seg: return "seg";
      case Kind::Box: return "box";
      case Kind::Det2: return "det2";
    }
    return "?";
  }

  MetricKind default_metric() const {
    switch (kind) {
      case Kind::Seg: return MetricKind::MIoU;
      case Kind::Box: return MetricKind::BoxIoU;
      case Kind::Det2: return MetricKind::DetRate;
    }
    return MetricKind::MIoU;
  }
};

inline std::unique_ptr<ProxyTask> make_task(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskSpec::Kind::Seg: return std::make_unique<SegmentationTask>(spec.seg);
    case TaskSpec::Kind::Box: return std::make_unique<BoxRegressionTask>(spec.box);
    case TaskSpec::Kind::Det2: return std::make_unique<DetectionTask>(spec.det2);
  }
  throw std::invalid_argument("make_task: unknown task kind");
}

}  // namespace lossforge
