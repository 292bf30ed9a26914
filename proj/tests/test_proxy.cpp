#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lossforge/proxy.hpp"

using namespace lossforge;

namespace {

MultiBranchLoss single(const std::string& formula) {
  return MultiBranchLoss{{parse_formula(formula, "seg")}};
}

SegTaskConfig small_seg() {
  SegTaskConfig cfg;
  cfg.images = 24;
  cfg.hw = 8;
  cfg.seed = 500;
  return cfg;
}

}  // namespace

TEST(Proxy, SegDatasetSeedDeterminism) {
  SegTaskConfig cfg;
  SegmentationTask a(cfg), b(cfg);
  for (int i = 0; i < cfg.images; ++i) {
    ASSERT_EQ(a.features(i), b.features(i));
    ASSERT_EQ(a.one_hot(i), b.one_hot(i));
  }
  cfg.seed += 1;
  SegmentationTask c(cfg);
  EXPECT_NE(a.features(0), c.features(0));
}

TEST(Proxy, SegTargetsAreOneHot) {
  SegTaskConfig cfg;
  cfg.classes = 4;
  SegmentationTask task(cfg);
  for (int i = 0; i < cfg.images; i += 7) {
    const Tensor4& t = task.one_hot(i);
    for (int h = 0; h < cfg.hw; ++h) {
      for (int w = 0; w < cfg.hw; ++w) {
        double sum = 0;
        for (int c = 0; c < cfg.classes; ++c) sum += t.at(0, c, h, w);
        ASSERT_DOUBLE_EQ(sum, 1.0);
      }
    }
  }
}

TEST(Proxy, SegConfigValidation) {
  SegTaskConfig cfg;
  cfg.classes = 1;
  EXPECT_THROW(SegmentationTask{cfg}, std::invalid_argument);
  cfg = SegTaskConfig{};
  cfg.images = 10;
  EXPECT_THROW(SegmentationTask{cfg}, std::invalid_argument);
  cfg = SegTaskConfig{};
  cfg.hw = 4;
  EXPECT_THROW(SegmentationTask{cfg}, std::invalid_argument);
}

TEST(Proxy, CrossEntropyReachesCalibrationBar) {
  SegmentationTask task{SegTaskConfig{}};
  TrainOutcome out = task.train_and_score(single("mul(neg(y), log(yhat))"), MetricKind::MIoU,
                                          42, task.default_trainer(), true);
  EXPECT_FALSE(out.aborted);
  EXPECT_GE(out.fitness, 0.7);
}

TEST(Proxy, OverflowLossAbortsWithZeroFitness) {
  SegmentationTask task{small_seg()};
  TrainOutcome out = task.train_and_score(single("exp(exp(exp(inv(yhat))))"), MetricKind::MIoU,
                                          42, task.default_trainer(), true);
  EXPECT_TRUE(out.aborted);
  EXPECT_EQ(out.fitness, 0.0);
  EXPECT_LT(out.iterations_run, 20);
}

TEST(Proxy, ExpChainBlowupAborts) {
  SegmentationTask task{small_seg()};
  TrainOutcome out = task.train_and_score(single("exp(exp(exp(yhat)))"), MetricKind::MIoU, 42,
                                          task.default_trainer(), true);
  EXPECT_EQ(out.fitness, 0.0);
  EXPECT_TRUE(out.aborted);
}

TEST(Proxy, ConstantLossLeavesPredictorAtInit) {
  SegmentationTask task{small_seg()};
  TrainerConfig cfg = task.default_trainer();
  TrainOutcome trained = task.train_and_score(single("one"), MetricKind::MIoU, 7, cfg, true);
  TrainerConfig zero = cfg;
  zero.iterations = 0;
  TrainOutcome init = task.train_and_score(single("one"), MetricKind::MIoU, 7, zero, true);
  EXPECT_FALSE(trained.aborted);
  EXPECT_DOUBLE_EQ(trained.fitness, init.fitness);
  EXPECT_LT(trained.fitness, 0.5);
}

TEST(Proxy, TrainAndScoreDeterministic) {
  SegmentationTask task{small_seg()};
  TrainerConfig cfg = task.default_trainer();
  cfg.iterations = 60;
  const MultiBranchLoss ce = single("mul(neg(y), log(yhat))");
  TrainOutcome a = task.train_and_score(ce, MetricKind::MIoU, 13, cfg, true);
  TrainOutcome b = task.train_and_score(ce, MetricKind::MIoU, 13, cfg, true);
  EXPECT_DOUBLE_EQ(a.fitness, b.fitness);
  TrainOutcome c = task.train_and_score(ce, MetricKind::MIoU, 14, cfg, true);
  EXPECT_NE(a.fitness, c.fitness);
}

TEST(Proxy, FitnessAlwaysInUnitInterval) {
  SegmentationTask task{small_seg()};
  TrainerConfig cfg = task.default_trainer();
  cfg.iterations = 40;
  std::mt19937_64 rng(91);
  for (int i = 0; i < 10; ++i) {
    MultiBranchLoss loss{{random_graph(3, LeafVocab::classification(), rng, "seg")}};
    TrainOutcome out = task.train_and_score(loss, MetricKind::MIoU, 5, cfg, true);
    ASSERT_GE(out.fitness, 0.0);
    ASSERT_LE(out.fitness, 1.0);
    if (out.aborted) ASSERT_EQ(out.fitness, 0.0);
  }
}

TEST(Proxy, MonotoneSanityCEBeatsNegatedCE) {
  SegTaskConfig cfg = small_seg();
  TrainerConfig tc;
  tc.iterations = 150;
  double ce_mean = 0, neg_mean = 0;
  const MultiBranchLoss ce = single("mul(neg(y), log(yhat))");
  const MultiBranchLoss neg_ce = single("mul(y, log(yhat))");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SegmentationTask task(cfg);
    ce_mean += task.train_and_score(ce, MetricKind::MIoU, seed, tc, true).fitness;
    neg_mean += task.train_and_score(neg_ce, MetricKind::MIoU, seed, tc, true).fitness;
  }
  EXPECT_GT(ce_mean / 20, neg_mean / 20);
}

TEST(Proxy, BoxTaskReferenceRun) {
  BoxRegressionTask task{BoxTaskConfig{}};
  TrainOutcome out = task.train_and_score(
      MultiBranchLoss{{parse_formula("neg(log(mul(i, inv(e))))", "reg")}}, MetricKind::BoxIoU,
      42, task.default_trainer(), true);
  EXPECT_FALSE(out.aborted);
  EXPECT_GE(out.fitness, 0.6);
}

TEST(Proxy, BoxTaskConstantLossStaysAtInit) {
  BoxRegressionTask task{BoxTaskConfig{}};
  TrainerConfig cfg = task.default_trainer();
  TrainOutcome trained = task.train_and_score(MultiBranchLoss{{parse_formula("one", "reg")}},
                                              MetricKind::BoxIoU, 3, cfg, true);
  TrainerConfig zero = cfg;
  zero.iterations = 0;
  TrainOutcome init = task.train_and_score(MultiBranchLoss{{parse_formula("one", "reg")}},
                                           MetricKind::BoxIoU, 3, zero, true);
  EXPECT_DOUBLE_EQ(trained.fitness, init.fitness);
}

TEST(Proxy, BoxDatasetDeterminism) {
  BoxTaskConfig cfg;
  BoxRegressionTask a(cfg), b(cfg);
  auto sa = a.capture_rejection_samples(3, MetricKind::BoxIoU, 9);
  auto sb = b.capture_rejection_samples(3, MetricKind::BoxIoU, 9);
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i][0].prediction, sb[i][0].prediction);
    EXPECT_EQ(sa[i][0].loss_target, sb[i][0].loss_target);
  }
}

TEST(Proxy, Det2GoodLossLearnsConstantDoesNot) {
  DetectionTask task{Det2TaskConfig{}};
  const MultiBranchLoss good{{parse_formula("mul(neg(y), log(yhat))", "cls"),
                              parse_formula("neg(log(mul(i, inv(e))))", "reg")}};
  TrainOutcome out = task.train_and_score(good, MetricKind::DetRate, 42, task.default_trainer(),
                                          true);
  EXPECT_GT(out.fitness, 0.5);

  const MultiBranchLoss flat{{parse_formula("one", "cls"), parse_formula("one", "reg")}};
  TrainOutcome bad = task.train_and_score(flat, MetricKind::DetRate, 42, task.default_trainer(),
                                          true);
  EXPECT_EQ(bad.fitness, 0.0);
}

TEST(Proxy, CaptureSamplesSoftmaxAndDeterminism) {
  SegTaskConfig cfg;
  SegmentationTask task(cfg);
  auto samples = task.capture_rejection_samples(5, MetricKind::MIoU, 21);
  ASSERT_EQ(samples.size(), 5u);
  for (const auto& pair : samples) {
    ASSERT_EQ(pair.size(), 1u);
    const Tensor4& p = pair[0].prediction;
    ASSERT_EQ(p.dims(), (Dims{1, cfg.classes, cfg.hw, cfg.hw}));
    for (int h = 0; h < cfg.hw; ++h) {
      for (int w = 0; w < cfg.hw; ++w) {
        double sum = 0;
        for (int c = 0; c < cfg.classes; ++c) sum += p.at(0, c, h, w);
        ASSERT_NEAR(sum, 1.0, 1e-6);
      }
    }
    // Random init should not be perfect.
    const double score = task.branch_metric(MetricKind::MIoU, 0, p, pair[0]);
    ASSERT_LT(score, 1.0);
  }

  auto again = task.capture_rejection_samples(5, MetricKind::MIoU, 21);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(samples[i][0].prediction, again[i][0].prediction);
  }

  EXPECT_THROW(task.capture_rejection_samples(10000, MetricKind::MIoU, 1),
               std::invalid_argument);
}

TEST(Proxy, BoundaryMetricUsesBoundaryLossTargets) {
  SegTaskConfig cfg;
  SegmentationTask task(cfg);
  auto plain = task.capture_rejection_samples(2, MetricKind::MIoU, 3);
  auto boundary = task.capture_rejection_samples(2, MetricKind::BF1, 3);
  // Same predictions, different loss-space targets.
  EXPECT_EQ(plain[0][0].prediction, boundary[0][0].prediction);
  EXPECT_NE(plain[0][0].loss_target, boundary[0][0].loss_target);
  EXPECT_EQ(plain[0][0].metric_target, boundary[0][0].metric_target);
  // Boundary targets only mark label-transition pixels.
  EXPECT_LT(boundary[0][0].loss_target.sum(), plain[0][0].loss_target.sum());
}

// End-to-end gradient of the predictor-parameter chain (graph backward ->
// softmax backward -> dense backward) against central finite differences.
TEST(Proxy, ParameterGradientMatchesFiniteDifferences) {
  const int in = 2, hidden = 2, classes = 2, hw = 3;
  std::mt19937_64 rng(64);
  TwoLayerMlp net;
  net.init(in, hidden, classes, rng);

  std::uniform_real_distribution<double> u(0.1, 0.9);
  Tensor4 feat({1, in, hw, hw});
  Tensor4 target = Tensor4::zeros({1, classes, hw, hw});
  for (std::int64_t i = 0; i < feat.size(); ++i) feat[i] = u(rng);
  for (int h = 0; h < hw; ++h)
    for (int w = 0; w < hw; ++w)
      target.at(0, std::uniform_int_distribution<int>(0, 1)(rng), h, w) = 1.0;

  const LossGraph graph = parse_formula("mul(neg(y), log(yhat))");

  auto loss_of = [&](const TwoLayerMlp& m) {
    Tensor4 probs({1, classes, hw, hw});
    std::vector<double> x(in), hid(hidden), logit(classes), p(classes);
    for (int h = 0; h < hw; ++h)
      for (int w = 0; w < hw; ++w) {
        for (int c = 0; c < in; ++c) x[c] = feat.at(0, c, h, w);
        m.forward(x.data(), hid.data(), logit.data());
        softmax(logit.data(), p.data(), classes);
        for (int c = 0; c < classes; ++c) probs.at(0, c, h, w) = p[c];
      }
    return loss_value(graph, probs, target);
  };

  // Analytic gradient through the same chain the trainer uses.
  TwoLayerMlp::Grads grads;
  grads.reset(net);
  {
    Tensor4 probs({1, classes, hw, hw});
    std::vector<double> x(in), logit(classes), p(classes), dprob(classes), dlogit(classes);
    std::vector<double> hid_store(std::size_t(hw) * hw * hidden);
    for (int h = 0; h < hw; ++h)
      for (int w = 0; w < hw; ++w) {
        for (int c = 0; c < in; ++c) x[c] = feat.at(0, c, h, w);
        double* hid = &hid_store[(std::size_t(h) * hw + w) * hidden];
        net.forward(x.data(), hid, logit.data());
        softmax(logit.data(), p.data(), classes);
        for (int c = 0; c < classes; ++c) probs.at(0, c, h, w) = p[c];
      }
    GraphEvaluator ev(graph);
    LeafBindings bind;
    bind.bind(LeafKind::YHat, probs);
    bind.bind(LeafKind::Y, target);
    ev.forward(bind);
    ev.backward(1.0 / (double(hw) * hw));
    const Tensor4* dprobs = ev.leaf_grad(LeafKind::YHat);
    ASSERT_NE(dprobs, nullptr);
    for (int h = 0; h < hw; ++h)
      for (int w = 0; w < hw; ++w) {
        for (int c = 0; c < in; ++c) x[c] = feat.at(0, c, h, w);
        for (int c = 0; c < classes; ++c) {
          p[c] = probs.at(0, c, h, w);
          dprob[c] = dprobs->at(0, c, h, w);
        }
        softmax_backward(p.data(), dprob.data(), dlogit.data(), classes);
        net.backward(x.data(), &hid_store[(std::size_t(h) * hw + w) * hidden], dlogit.data(),
                     grads);
      }
  }

  const double step = 1e-6;
  auto check = [&](std::vector<double>& params, const std::vector<double>& analytic) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + step;
      const double fp = loss_of(net);
      params[i] = saved - step;
      const double fm = loss_of(net);
      params[i] = saved;
      const double fd = (fp - fm) / (2 * step);
      if (std::fabs(analytic[i]) < 1e-8 && std::fabs(fd) < 1e-8) continue;
      const double rel =
          std::fabs(fd - analytic[i]) / std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-8});
      ASSERT_LT(rel, 1e-3);
    }
  };
  check(net.w1, grads.w1);
  check(net.b1, grads.b1);
  check(net.w2, grads.w2);
  check(net.b2, grads.b2);
}

TEST(Proxy, TaskFactory) {
  TaskSpec spec;
  spec.kind = TaskSpec::Kind::Box;
  auto task = make_task(spec);
  EXPECT_EQ(task->name(), "box");
  EXPECT_EQ(task->branch_count(), 1);
  EXPECT_TRUE(task->supports_metric(MetricKind::BoxIoU));
  EXPECT_FALSE(task->supports_metric(MetricKind::MIoU));

  spec.kind = TaskSpec::Kind::Det2;
  auto det = make_task(spec);
  EXPECT_EQ(det->branch_count(), 2);
  EXPECT_EQ(det->branch_vocab(1).kinds.size(), 4u);
  EXPECT_EQ(det->branch_weights(), (std::vector<double>{1.0, 10.0}));
}
