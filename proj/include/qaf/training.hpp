#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qaf/detector.hpp"
#include "qaf/matrix.hpp"

namespace qaf {

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 100;
    std::size_t patience = 5;  // epochs without strict dev-EER improvement
    double tau = 1.0;
    std::uint64_t seed = 1;
    bool codec_trainable = false;
    AggMethod method = AggMethod::MeanPool;

    void validate() const;
};

struct BceResult {
    double loss = 0.0;
    double dlogit = 0.0;
};

// Numerically stable binary cross-entropy on a raw logit.
// loss = softplus(logit) - label * logit, dlogit = sigmoid(logit) - label.
BceResult bce_loss(double logit, int label);

// Bias-corrected Adam over a fixed tensor list. One global step counter;
// tensors flagged non-trainable are skipped entirely.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::uint64_t step = 0;
};

void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
               AdamState& state, const TrainConfig& cfg);

// One trial after codec encoding: SSL layers plus per-frame code indices.
struct PreparedTrial {
    std::vector<FeatureSequence> ssl_layers;
    CodeIndices codec_indices;
    int label = 0;
};

struct EpochStats {
    double train_loss = 0.0;
    double dev_eer = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;  // 1-based
    double best_dev_eer = 1.0;
    std::string stop_reason;
    AlphaMatrix final_alpha;  // of the returned model; empty for mean pooling
};

struct TrainResult {
    DetectorModel model;  // best dev-EER snapshot, not the last epoch
    TrainReport report;
};

// Seeded mini-batch epochs with early stopping on dev EER. Strict improvement
// resets patience; among equal-best epochs the latest snapshot is kept.
TrainResult train(DetectorModel model, const std::vector<PreparedTrial>& train_set,
                  const std::vector<PreparedTrial>& dev_set, const TrainConfig& cfg);

// CSV (`epoch,train_loss,dev_eer`) and a short text summary.
void write_train_report_csv(const TrainReport& report, const std::string& path);
void write_train_report_summary(const TrainReport& report, const TrainConfig& cfg,
                                const std::string& path);

}  // namespace qaf
