#include "qaf/experiment.hpp"

namespace qaf {

std::vector<PreparedTrial> prepare_trials(const std::vector<Trial>& trials,
                                          const QuantizerStack& stack) {
    std::vector<PreparedTrial> prepared;
    prepared.reserve(trials.size());
    for (const auto& trial : trials) {
        PreparedTrial p;
        p.ssl_layers = trial.ssl_layers;
        p.codec_indices = rvq_encode(trial.codec_latent, stack).indices;
        p.label = trial.label;
        prepared.push_back(std::move(p));
    }
    return prepared;
}

std::vector<ScoredTrial> score_trials(const DetectorModel& model,
                                      const std::vector<PreparedTrial>& trials) {
    std::vector<ScoredTrial> scored;
    scored.reserve(trials.size());
    for (const auto& trial : trials) {
        ForwardResult fwd = detector_forward(trial.ssl_layers, trial.codec_indices, model);
        scored.push_back({fwd.logit, trial.label});
    }
    return scored;
}

EerResult evaluate(const DetectorModel& model, const std::vector<PreparedTrial>& trials,
                   std::vector<RocPoint>* roc_out) {
    std::vector<ScoredTrial> scored = score_trials(model, trials);
    if (roc_out) *roc_out = roc_curve(scored);
    return compute_eer(scored);
}

DetectorShape shape_from_config(const RunConfig& cfg, std::size_t num_ssl_layers,
                                std::size_t d_ssl, std::size_t d_codec) {
    DetectorShape shape;
    shape.num_ssl_layers = num_ssl_layers;
    shape.d_ssl = d_ssl;
    shape.d_codec = d_codec;
    shape.d_model = cfg.d_model;
    shape.hidden = cfg.hidden;
    shape.method = cfg.train.method;
    shape.codec_trainable = cfg.train.codec_trainable;
    shape.tau = cfg.train.tau;
    return shape;
}

TrainResult run_training(const RunConfig& cfg, const QuantizerStack& stack,
                         const std::vector<Trial>& train_trials,
                         const std::vector<Trial>& dev_trials, bool ablate_codec) {
    if (train_trials.empty()) throw ValueError("run_training: empty training split");
    std::size_t L = train_trials[0].ssl_layers.size();
    std::size_t d_ssl = L > 0 ? train_trials[0].ssl_layers[0].cols() : 0;
    std::size_t d_codec = train_trials[0].codec_latent.cols();

    DetectorShape shape = shape_from_config(cfg, L, d_ssl, d_codec);
    shape.ablate_codec = ablate_codec;
    DetectorModel model = build_detector(shape, stack, cfg.train.seed);

    std::vector<PreparedTrial> train_prepared = prepare_trials(train_trials, stack);
    std::vector<PreparedTrial> dev_prepared = prepare_trials(dev_trials, stack);
    return train(std::move(model), train_prepared, dev_prepared, cfg.train);
}

}  // namespace qaf
