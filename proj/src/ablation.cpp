#include "uiim/ablation.hpp"

#include <cstdio>
#include <fstream>

namespace uiim {

namespace {

AblationArm run_arm(const TrainingJob& base, Variant variant) {
  TrainingJob job = base;
  job.model.variant = variant;
  if (variant == Variant::concat) {
    job.train.weights.beta = 0.0;
    job.train.weights.gamma = 0.0;
  }
  if (base.out_dir) job.out_dir = *base.out_dir / to_string(variant);
  TrainingOutcome outcome = run_training(job);
  AblationArm arm;
  arm.variant = variant;
  arm.train = outcome.train;
  arm.validation = outcome.validation;
  arm.test = outcome.test;
  arm.best_epoch = outcome.fit.best_epoch;
  return arm;
}

void write_summary(const std::filesystem::path& path, const AblationReport& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,split,accuracy\n";
  for (const AblationArm* arm : {&r.full, &r.baseline}) {
    const std::pair<const char*, const EvalResult*> rows[] = {
        {"train", &arm->train}, {"validation", &arm->validation}, {"test", &arm->test}};
    for (const auto& [split, result] : rows) {
      if (result->total == 0) continue;
      char buf[128];
      std::snprintf(buf, sizeof buf, "%s,%s,%.6f\n", to_string(arm->variant).c_str(), split, result->accuracy);
      out << buf;
    }
  }
}

}  // namespace

AblationReport run_ablation(const TrainingJob& job) {
  AblationReport r;
  r.full = run_arm(job, Variant::uiim);
  r.baseline = run_arm(job, Variant::concat);
  if (job.out_dir) write_summary(*job.out_dir / "ablation.csv", r);
  return r;
}

}  // namespace uiim
