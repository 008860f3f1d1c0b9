#pragma once

#include <string>
#include <vector>

#include "qaf/config.hpp"
#include "qaf/detector.hpp"
#include "qaf/metrics.hpp"
#include "qaf/synthdata.hpp"
#include "qaf/training.hpp"

namespace qaf {

// Codec-encodes each trial's latent against the stack; SSL layers pass through.
std::vector<PreparedTrial> prepare_trials(const std::vector<Trial>& trials,
                                          const QuantizerStack& stack);

// Scores every trial with the detector, in trial order.
std::vector<ScoredTrial> score_trials(const DetectorModel& model,
                                      const std::vector<PreparedTrial>& trials);

// The one EER code path shared by training-time dev scoring and `eval`.
EerResult evaluate(const DetectorModel& model, const std::vector<PreparedTrial>& trials,
                   std::vector<RocPoint>* roc_out = nullptr);

// Shape for build_detector derived from data dimensions plus config.
DetectorShape shape_from_config(const RunConfig& cfg, std::size_t num_ssl_layers,
                                std::size_t d_ssl, std::size_t d_codec);

// Full train pipeline on in-memory splits: build, train, return best model.
TrainResult run_training(const RunConfig& cfg, const QuantizerStack& stack,
                         const std::vector<Trial>& train_trials,
                         const std::vector<Trial>& dev_trials, bool ablate_codec = false);

}  // namespace qaf
