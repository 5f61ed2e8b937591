#pragma once

#include <memory>
#include <string>
#include <vector>

#include "poex/config.hpp"
#include "poex/model.hpp"

namespace poex {

struct StepMetrics {
  int step;
  double elbo, recon, kl, wallclock;  // wallclock in seconds since start
};

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& rows);

// Full model checkpoint: config, trained flag, step counter, parameters and
// Adam state, all inside a single reproducible archive.
void save_model(const std::string& path, const PoexModel& model, int step);

struct LoadedModel {
  std::unique_ptr<PoexModel> model;
  int step = 0;
};
LoadedModel load_model(const std::string& path);

struct TrainResult {
  std::vector<StepMetrics> metrics;
  std::string checkpoint_path;
};

// Trains in place. Masks are resampled every step from cfg.mask, the KL
// weight ramps linearly over the first kl_warmup_frac of total steps, and a
// non-finite loss raises NumericError. `resume_step` > 0 continues the step
// counter without a gap (the caller loads the parameters beforehand).
TrainResult train_model(PoexModel& model, const std::vector<AnySet>& dataset,
                        const TrainConfig& tcfg, const MaskStrategy& mask,
                        const std::string& out_dir, int resume_step = 0);

}  // namespace poex
