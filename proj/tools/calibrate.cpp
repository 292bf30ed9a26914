// Scratch calibration driver (not installed): prints reference fitness for
// the canonical losses on each toy task.
#include <cstdio>

#include "lossforge/proxy.hpp"

using namespace lossforge;

int main() {

  {
    SegTaskConfig cfg;
    SegmentationTask task(cfg);
    TrainerConfig tc = task.default_trainer();
    MultiBranchLoss ce{{parse_formula("mul(neg(y), log(yhat))", "seg")}};
    for (MetricKind m : {MetricKind::MIoU, MetricKind::GAcc, MetricKind::MAcc, MetricKind::FWIoU,
                         MetricKind::BIoU, MetricKind::BF1}) {
      TrainOutcome out = task.train_and_score(ce, m, 42, tc, true);
      std::printf("seg CE %-6s fitness=%.4f aborted=%d iters=%d\n",
                  std::string(metric_name(m)).c_str(), out.fitness, out.aborted,
                  out.iterations_run);
    }
    MultiBranchLoss neg_ce{{parse_formula("mul(y, log(yhat))", "seg")}};
    TrainOutcome bad = task.train_and_score(neg_ce, MetricKind::MIoU, 42, tc, true);
    std::printf("seg -CE miou fitness=%.4f\n", bad.fitness);
    MultiBranchLoss constant{{parse_formula("one", "seg")}};
    TrainOutcome flat = task.train_and_score(constant, MetricKind::MIoU, 42, tc, true);
    std::printf("seg const miou fitness=%.4f\n", flat.fitness);
  }

  {
    BoxTaskConfig cfg;
    BoxRegressionTask task(cfg);
    TrainerConfig tc = task.default_trainer();
    MultiBranchLoss giou{{parse_formula("neg(log(mul(i, inv(e))))", "reg")}};
    TrainOutcome out = task.train_and_score(giou, MetricKind::BoxIoU, 42, tc, true);
    std::printf("box -log(i/e) fitness=%.4f aborted=%d\n", out.fitness, out.aborted);
    MultiBranchLoss constant{{parse_formula("one", "reg")}};
    TrainOutcome flat = task.train_and_score(constant, MetricKind::BoxIoU, 42, tc, true);
    std::printf("box const fitness=%.4f\n", flat.fitness);
  }

  {
    Det2TaskConfig cfg;
    DetectionTask task(cfg);
    TrainerConfig tc = task.default_trainer();
    MultiBranchLoss good{{parse_formula("mul(neg(y), log(yhat))", "cls"),
                          parse_formula("neg(log(mul(i, inv(e))))", "reg")}};
    TrainOutcome out = task.train_and_score(good, MetricKind::DetRate, 42, tc, true);
    std::printf("det2 CE+giou fitness=%.4f aborted=%d\n", out.fitness, out.aborted);
    MultiBranchLoss flat{{parse_formula("one", "cls"), parse_formula("one", "reg")}};
    TrainOutcome bad = task.train_and_score(flat, MetricKind::DetRate, 42, tc, true);
    std::printf("det2 const fitness=%.4f\n", bad.fitness);
  }
  return 0;
}
