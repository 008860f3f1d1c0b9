#include "qaf/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "qaf/metrics.hpp"
#include "qaf/rng.hpp"

namespace qaf {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("beta1 must be in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
}

BceResult bce_loss(double logit, int label) {
    if (!std::isfinite(logit)) throw NumericError("bce_loss: non-finite logit");
    if (label != 0 && label != 1) throw ValueError("bce_loss: label must be 0 or 1");
    double softplus = logit > 0.0 ? logit + std::log1p(std::exp(-logit))
                                  : std::log1p(std::exp(logit));
    double sig = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                              : std::exp(logit) / (1.0 + std::exp(logit));
    return {softplus - static_cast<double>(label) * logit, sig - static_cast<double>(label)};
}

void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
               AdamState& state, const TrainConfig& cfg) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: tensor list size mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size, 0.0);
            state.v[i].assign(params[i].size, 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match tensors");

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double corr1 = 1.0 - std::pow(cfg.beta1, t);
    const double corr2 = 1.0 - std::pow(cfg.beta2, t);

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size != grads[i].size || state.m[i].size() != params[i].size)
            throw ShapeError("adam_step: shape mismatch in tensor '" + params[i].name + "'");
        if (!params[i].trainable) continue;  // frozen tensors stay untouched
        double* p = params[i].data;
        const double* g = grads[i].data;
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (std::size_t j = 0; j < params[i].size; ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            double m_hat = m[j] / corr1;
            double v_hat = v[j] / corr2;
            p[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

namespace {

std::vector<ScoredTrial> score_set(const DetectorModel& model,
                                   const std::vector<PreparedTrial>& set) {
    std::vector<ScoredTrial> scored;
    scored.reserve(set.size());
    for (const auto& trial : set) {
        ForwardResult fwd = detector_forward(trial.ssl_layers, trial.codec_indices, model);
        scored.push_back({fwd.logit, trial.label});
    }
    return scored;
}

}  // namespace

TrainResult train(DetectorModel model, const std::vector<PreparedTrial>& train_set,
                  const std::vector<PreparedTrial>& dev_set, const TrainConfig& cfg) {
    cfg.validate();
    model.validate();
    if (train_set.empty() || dev_set.empty()) throw ValueError("train: empty dataset");
    bool has_bona = false, has_spoof = false;
    for (const auto& t : dev_set) (t.label == 1 ? has_bona : has_spoof) = true;
    if (!has_bona || !has_spoof)
        throw ValueError("train: dev set missing a class, dev EER undefined");

    Rng shuffle_rng(derive_seed(cfg.seed, 0x5AFF1E));

    TrainResult result;
    result.model = model;
    TrainReport& report = result.report;

    AdamState adam;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    std::size_t epochs_without_improvement = 0;
    report.best_dev_eer = 2.0;  // above any reachable EER
    report.stop_reason = "max_epochs";

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        try {
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                std::size_t end = std::min(order.size(), start + cfg.batch_size);
                DetectorGrads batch_grads = DetectorGrads::zeros_like(model);
                for (std::size_t i = start; i < end; ++i) {
                    const PreparedTrial& trial = train_set[order[i]];
                    ForwardResult fwd = detector_forward(trial.ssl_layers, trial.codec_indices, model);
                    BceResult bce = bce_loss(fwd.logit, trial.label);
                    loss_sum += bce.loss;
                    batch_grads.accumulate(detector_backward(model, fwd.cache, bce.dlogit));
                }
                batch_grads.scale(1.0 / static_cast<double>(end - start));
                adam_step(model.tensors(), batch_grads.tensors(model), adam, cfg);
            }
        } catch (const NumericError& e) {
            throw NumericError("train: diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }

        double train_loss = loss_sum / static_cast<double>(train_set.size());
        if (!std::isfinite(train_loss))
            throw NumericError("train: diverged at epoch " + std::to_string(epoch) +
                               ": non-finite training loss");

        double dev_eer = compute_eer(score_set(model, dev_set)).eer;
        report.epochs.push_back({train_loss, dev_eer});

        if (dev_eer < report.best_dev_eer) {
            report.best_dev_eer = dev_eer;
            report.best_epoch = epoch;
            result.model = model;
            epochs_without_improvement = 0;
        } else {
            if (dev_eer == report.best_dev_eer) {
                // Tie: keep the most-trained snapshot, but do not reset patience.
                report.best_epoch = epoch;
                result.model = model;
            }
            epochs_without_improvement += 1;
            if (epochs_without_improvement >= cfg.patience) {
                report.stop_reason = "patience";
                break;
            }
        }
    }

    if (result.model.method == AggMethod::QafStatic)
        report.final_alpha = qaf_alpha(result.model.qaf);
    return result;
}

void write_train_report_csv(const TrainReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f << "epoch,train_loss,dev_eer\n";
    char buf[96];
    for (std::size_t i = 0; i < report.epochs.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", i + 1, report.epochs[i].train_loss,
                      report.epochs[i].dev_eer);
        f << buf;
    }
    if (!f) throw FormatError(path + ": write failed");
}

void write_train_report_summary(const TrainReport& report, const TrainConfig& cfg,
                                const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError(path + ": cannot open for writing");
    char buf[160];
    f << "epochs_run=" << report.epochs.size() << "\n";
    f << "best_epoch=" << report.best_epoch << "\n";
    std::snprintf(buf, sizeof(buf), "best_dev_eer=%.9g\n", report.best_dev_eer);
    f << buf;
    f << "stop_reason=" << report.stop_reason << "\n";
    f << "method=" << to_string(cfg.method) << "\n";
    f << "codec=" << (cfg.codec_trainable ? "trainable" : "frozen") << "\n";
    std::snprintf(buf, sizeof(buf),
                  "learning_rate=%.9g\nbeta1=%.9g\nbeta2=%.9g\nepsilon=%.9g\n", cfg.learning_rate,
                  cfg.beta1, cfg.beta2, cfg.epsilon);
    f << buf;
    f << "batch_size=" << cfg.batch_size << "\n";
    f << "max_epochs=" << cfg.max_epochs << "\n";
    f << "patience=" << cfg.patience << "\n";
    std::snprintf(buf, sizeof(buf), "tau=%.9g\n", cfg.tau);
    f << buf;
    f << "seed=" << cfg.seed << "\n";
    if (!f) throw FormatError(path + ": write failed");
}

}  // namespace qaf
