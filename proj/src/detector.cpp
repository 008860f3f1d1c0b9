#include "qaf/detector.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "qaf/qaf1.hpp"
#include "qaf/rng.hpp"

namespace qaf {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

std::vector<double> softmax(const std::vector<double>& logits) {
    double max_logit = logits[0];
    for (double v : logits) max_logit = std::max(max_logit, v);
    std::vector<double> probs(logits.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - max_logit);
        denom += probs[i];
    }
    for (double& p : probs) p /= denom;
    return probs;
}

void check_stage(const Matrix& m, const char* stage) {
    if (!m.all_finite())
        throw NumericError(std::string("detector_forward: non-finite value after ") + stage);
}

std::string embed_name(std::size_t q) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "embed.%zu", q);
    return buf;
}

}  // namespace

void DetectorModel::validate() const {
    stack.validate();
    const std::size_t Q = stack.num_levels(), K = stack.codebook_size();
    if (embed.size() != Q) throw ShapeError("DetectorModel: embedding table level count != stack levels");
    for (const auto& e : embed) {
        if (e.rows() != K || e.cols() != d_codec)
            throw ShapeError("DetectorModel: embedding table must be K x d_codec per level");
    }
    if (method == AggMethod::QafStatic) {
        if (qaf.W.rows() != Q || qaf.W.cols() != d_codec)
            throw ShapeError("DetectorModel: qaf.W must be Q x d_codec");
        qaf.validate();
    }
    if (has_layer_merge && merge.logits.size() != num_ssl_layers)
        throw ShapeError("DetectorModel: merge logits must match the SSL layer count");
    require_shape(fusion.weight, d_ssl + d_codec, d_model, "DetectorModel fusion weight");
    if (fusion.bias.size() != d_model) throw ShapeError("DetectorModel: fusion bias size");
    const std::size_t H = recurrent.hidden;
    if (H == 0) throw ValueError("DetectorModel: hidden size must be >= 1");
    require_shape(recurrent.w_input, d_model, 4 * H, "DetectorModel lstm input weights");
    require_shape(recurrent.w_recur, H, 4 * H, "DetectorModel lstm recurrent weights");
    if (recurrent.bias.size() != 4 * H) throw ShapeError("DetectorModel: lstm bias size");
    if (classifier_w.size() != H) throw ShapeError("DetectorModel: classifier size");
}

std::vector<TensorRef> DetectorModel::tensors() {
    std::vector<TensorRef> refs;
    if (has_layer_merge)
        refs.push_back({"merge.logits", merge.logits.data(), merge.logits.size(), true});
    if (method == AggMethod::QafStatic)
        refs.push_back({"qaf.W", qaf.W.data(), qaf.W.size(), true});
    for (std::size_t q = 0; q < embed.size(); ++q)
        refs.push_back({embed_name(q), embed[q].data(), embed[q].size(), codec_trainable});
    refs.push_back({"proj.w", fusion.weight.data(), fusion.weight.size(), true});
    refs.push_back({"proj.b", fusion.bias.data(), fusion.bias.size(), true});
    refs.push_back({"lstm.w_in", recurrent.w_input.data(), recurrent.w_input.size(), true});
    refs.push_back({"lstm.w_rec", recurrent.w_recur.data(), recurrent.w_recur.size(), true});
    refs.push_back({"lstm.b", recurrent.bias.data(), recurrent.bias.size(), true});
    refs.push_back({"cls.w", classifier_w.data(), classifier_w.size(), true});
    refs.push_back({"cls.b", &classifier_b, 1, true});
    return refs;
}

DetectorGrads DetectorGrads::zeros_like(const DetectorModel& model) {
    DetectorGrads g;
    g.qaf_W = Matrix(model.stack.num_levels(), model.d_codec);
    g.embed.assign(model.num_levels(), Matrix(model.codebook_size(), model.d_codec));
    g.merge_logits.assign(model.merge.logits.size(), 0.0);
    g.fusion_weight = Matrix(model.fusion.weight.rows(), model.fusion.weight.cols());
    g.fusion_bias.assign(model.fusion.bias.size(), 0.0);
    g.w_input = Matrix(model.recurrent.w_input.rows(), model.recurrent.w_input.cols());
    g.w_recur = Matrix(model.recurrent.w_recur.rows(), model.recurrent.w_recur.cols());
    g.lstm_bias.assign(model.recurrent.bias.size(), 0.0);
    g.classifier_w.assign(model.classifier_w.size(), 0.0);
    g.classifier_b = 0.0;
    return g;
}

std::vector<TensorRef> DetectorGrads::tensors(const DetectorModel& model) {
    std::vector<TensorRef> refs;
    if (model.has_layer_merge)
        refs.push_back({"merge.logits", merge_logits.data(), merge_logits.size(), true});
    if (model.method == AggMethod::QafStatic)
        refs.push_back({"qaf.W", qaf_W.data(), qaf_W.size(), true});
    for (std::size_t q = 0; q < embed.size(); ++q)
        refs.push_back({embed_name(q), embed[q].data(), embed[q].size(), model.codec_trainable});
    refs.push_back({"proj.w", fusion_weight.data(), fusion_weight.size(), true});
    refs.push_back({"proj.b", fusion_bias.data(), fusion_bias.size(), true});
    refs.push_back({"lstm.w_in", w_input.data(), w_input.size(), true});
    refs.push_back({"lstm.w_rec", w_recur.data(), w_recur.size(), true});
    refs.push_back({"lstm.b", lstm_bias.data(), lstm_bias.size(), true});
    refs.push_back({"cls.w", classifier_w.data(), classifier_w.size(), true});
    refs.push_back({"cls.b", &classifier_b, 1, true});
    return refs;
}

void DetectorGrads::accumulate(const DetectorGrads& other) {
    auto add = [](auto& dst, const auto& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
    };
    add(qaf_W, other.qaf_W);
    for (std::size_t q = 0; q < embed.size(); ++q) add(embed[q], other.embed[q]);
    for (std::size_t i = 0; i < merge_logits.size(); ++i) merge_logits[i] += other.merge_logits[i];
    add(fusion_weight, other.fusion_weight);
    for (std::size_t i = 0; i < fusion_bias.size(); ++i) fusion_bias[i] += other.fusion_bias[i];
    add(w_input, other.w_input);
    add(w_recur, other.w_recur);
    for (std::size_t i = 0; i < lstm_bias.size(); ++i) lstm_bias[i] += other.lstm_bias[i];
    for (std::size_t i = 0; i < classifier_w.size(); ++i) classifier_w[i] += other.classifier_w[i];
    classifier_b += other.classifier_b;
}

void DetectorGrads::scale(double s) {
    auto mul = [s](auto& m) {
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= s;
    };
    mul(qaf_W);
    for (auto& e : embed) mul(e);
    for (double& v : merge_logits) v *= s;
    mul(fusion_weight);
    for (double& v : fusion_bias) v *= s;
    mul(w_input);
    mul(w_recur);
    for (double& v : lstm_bias) v *= s;
    for (double& v : classifier_w) v *= s;
    classifier_b *= s;
}

FeatureSequence layer_merge(const std::vector<FeatureSequence>& layers,
                            const LayerMergeParams& params) {
    if (layers.empty()) throw ValueError("layer_merge: no layers");
    if (params.logits.size() != layers.size())
        throw ShapeError("layer_merge: logit count != layer count");
    for (std::size_t l = 1; l < layers.size(); ++l) {
        if (!layers[l].same_shape(layers[0]))
            throw ShapeError("layer_merge: layer " + std::to_string(l) + " shape mismatch");
    }
    std::vector<double> probs = softmax(params.logits);
    const std::size_t T = layers[0].rows(), D = layers[0].cols();
    Matrix out(T, D);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t d = 0; d < D; ++d) out(t, d) += probs[l] * layers[l](t, d);
    }
    return out;
}

FeatureSequence fuse(const FeatureSequence& ssl, const FeatureSequence& codec,
                     const FusionParams& params) {
    if (ssl.rows() != codec.rows())
        throw ShapeError("fuse: frame counts differ (" + std::to_string(ssl.rows()) + " vs " +
                         std::to_string(codec.rows()) + ")");
    const std::size_t T = ssl.rows(), Ds = ssl.cols(), Dc = codec.cols();
    if (params.weight.rows() != Ds + Dc)
        throw ShapeError("fuse: projection expects input dim " + std::to_string(params.weight.rows()) +
                         ", got " + std::to_string(Ds + Dc));
    const std::size_t M = params.weight.cols();
    if (params.bias.size() != M) throw ShapeError("fuse: bias size mismatch");
    Matrix out(T, M);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < M; ++j) {
            double acc = params.bias[j];
            for (std::size_t i = 0; i < Ds; ++i) acc += ssl(t, i) * params.weight(i, j);
            for (std::size_t i = 0; i < Dc; ++i) acc += codec(t, i) * params.weight(Ds + i, j);
            out(t, j) = acc;
        }
    }
    return out;
}

ForwardResult detector_forward(const std::vector<FeatureSequence>& ssl_layers,
                               const CodeIndices& codes, const DetectorModel& model) {
    model.validate();
    if (ssl_layers.size() != model.num_ssl_layers)
        throw ShapeError("detector_forward: expected " + std::to_string(model.num_ssl_layers) +
                         " SSL layers, got " + std::to_string(ssl_layers.size()));
    for (const auto& layer : ssl_layers) {
        if (layer.cols() != model.d_ssl) throw ShapeError("detector_forward: SSL layer dim mismatch");
        if (layer.rows() != ssl_layers[0].rows())
            throw ShapeError("detector_forward: SSL layers disagree on frame count");
        require_finite(layer, "detector_forward SSL input");
    }
    const std::size_t T = ssl_layers[0].rows();
    if (T == 0) throw ValueError("detector_forward: empty sequence");
    if (codes.frames != T)
        throw ShapeError("detector_forward: code frames != SSL frames");
    if (codes.levels != model.num_levels())
        throw ShapeError("detector_forward: code levels != model levels");

    ForwardCache cache;
    cache.ssl_layers = ssl_layers;
    cache.codes = codes;
    cache.sig_levels = model.num_levels();
    cache.sig_dssl = model.d_ssl;
    cache.sig_dcodec = model.d_codec;
    cache.sig_dmodel = model.d_model;
    cache.sig_hidden = model.recurrent.hidden;

    // SSL stream: learned softmax merge, or the last layer when merging is off.
    if (model.has_layer_merge) {
        cache.merge_probs = softmax(model.merge.logits);
        cache.merged = layer_merge(ssl_layers, model.merge);
    } else {
        cache.merged = ssl_layers.back();
    }
    check_stage(cache.merged, "layer_merge");

    // Codec stream: per-level embedding lookup.
    const std::size_t Q = model.num_levels(), K = model.codebook_size(), Dc = model.d_codec;
    cache.bundle.levels.assign(Q, Matrix(T, Dc));
    for (std::size_t q = 0; q < Q; ++q) {
        const Matrix& table = model.embed[q];
        Matrix& lv = cache.bundle.levels[q];
        for (std::size_t t = 0; t < T; ++t) {
            std::uint32_t k = codes.at(t, q);
            if (k >= K)
                throw ValueError("detector_forward: code " + std::to_string(k) +
                                 " out of range at frame " + std::to_string(t));
            for (std::size_t d = 0; d < Dc; ++d) lv(t, d) = table(k, d);
        }
    }

    // Aggregation across levels.
    if (model.method == AggMethod::QafStatic) {
        cache.alpha = qaf_alpha(model.qaf);
        cache.codec_agg = qaf_aggregate(cache.bundle, model.qaf);
    } else {
        cache.alpha = Matrix(Q, Dc, 1.0 / static_cast<double>(Q));
        cache.codec_agg = mean_pool_levels(cache.bundle);
    }
    check_stage(cache.codec_agg, "aggregation");

    cache.fused = fuse(cache.merged, cache.codec_agg, model.fusion);
    check_stage(cache.fused, "fuse");

    // LSTM over frames, zero initial state.
    const std::size_t H = model.recurrent.hidden;
    cache.gate_i = Matrix(T, H);
    cache.gate_f = Matrix(T, H);
    cache.gate_g = Matrix(T, H);
    cache.gate_o = Matrix(T, H);
    cache.cell = Matrix(T, H);
    cache.cell_tanh = Matrix(T, H);
    cache.hidden = Matrix(T, H);
    std::vector<double> preact(4 * H);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < 4 * H; ++j) preact[j] = model.recurrent.bias[j];
        for (std::size_t i = 0; i < model.d_model; ++i) {
            double x = cache.fused(t, i);
            const double* w = model.recurrent.w_input.row(i);
            for (std::size_t j = 0; j < 4 * H; ++j) preact[j] += x * w[j];
        }
        if (t > 0) {
            for (std::size_t i = 0; i < H; ++i) {
                double h = cache.hidden(t - 1, i);
                const double* w = model.recurrent.w_recur.row(i);
                for (std::size_t j = 0; j < 4 * H; ++j) preact[j] += h * w[j];
            }
        }
        for (std::size_t h = 0; h < H; ++h) {
            double gi = sigmoid(preact[h]);
            double gf = sigmoid(preact[H + h]);
            double gg = std::tanh(preact[2 * H + h]);
            double go = sigmoid(preact[3 * H + h]);
            double c_prev = t > 0 ? cache.cell(t - 1, h) : 0.0;
            double c = gf * c_prev + gi * gg;
            double tc = std::tanh(c);
            cache.gate_i(t, h) = gi;
            cache.gate_f(t, h) = gf;
            cache.gate_g(t, h) = gg;
            cache.gate_o(t, h) = go;
            cache.cell(t, h) = c;
            cache.cell_tanh(t, h) = tc;
            cache.hidden(t, h) = go * tc;
        }
    }
    check_stage(cache.hidden, "lstm");

    // Temporal mean of hidden states, then the linear classifier.
    cache.pooled.assign(H, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h) cache.pooled[h] += cache.hidden(t, h);
    for (std::size_t h = 0; h < H; ++h) cache.pooled[h] /= static_cast<double>(T);

    double logit = model.classifier_b;
    for (std::size_t h = 0; h < H; ++h) logit += model.classifier_w[h] * cache.pooled[h];
    if (!std::isfinite(logit)) throw NumericError("detector_forward: non-finite value after classifier");

    cache.logit = logit;
    return {logit, std::move(cache)};
}

DetectorGrads detector_backward(const DetectorModel& model, const ForwardCache& cache,
                                double dlogit) {
    if (cache.sig_levels != model.num_levels() || cache.sig_dssl != model.d_ssl ||
        cache.sig_dcodec != model.d_codec || cache.sig_dmodel != model.d_model ||
        cache.sig_hidden != model.recurrent.hidden)
        throw ShapeError("detector_backward: cache does not match this model");
    if (model.has_layer_merge && cache.merge_probs.size() != model.merge.logits.size())
        throw ShapeError("detector_backward: cache does not match this model");

    const std::size_t T = cache.fused.rows();
    const std::size_t H = model.recurrent.hidden;
    const std::size_t Q = model.num_levels();
    const std::size_t Ds = model.d_ssl, Dc = model.d_codec, M = model.d_model;

    DetectorGrads g = DetectorGrads::zeros_like(model);

    // Classifier and temporal mean pooling.
    g.classifier_b = dlogit;
    std::vector<double> dpooled(H);
    for (std::size_t h = 0; h < H; ++h) {
        g.classifier_w[h] = dlogit * cache.pooled[h];
        dpooled[h] = dlogit * model.classifier_w[h];
    }
    const double inv_T = 1.0 / static_cast<double>(T);

    // Backprop through time.
    Matrix dx(T, M);
    std::vector<double> dh_carry(H, 0.0), dc_carry(H, 0.0), da(4 * H);
    for (std::size_t ti = T; ti-- > 0;) {
        for (std::size_t h = 0; h < H; ++h) {
            double dh = dpooled[h] * inv_T + dh_carry[h];
            double go = cache.gate_o(ti, h);
            double tc = cache.cell_tanh(ti, h);
            double d_o = dh * tc;
            double dc = dc_carry[h] + dh * go * (1.0 - tc * tc);
            double gi = cache.gate_i(ti, h);
            double gf = cache.gate_f(ti, h);
            double gg = cache.gate_g(ti, h);
            double c_prev = ti > 0 ? cache.cell(ti - 1, h) : 0.0;
            double d_i = dc * gg;
            double d_g = dc * gi;
            double d_f = dc * c_prev;
            dc_carry[h] = dc * gf;
            da[h] = d_i * gi * (1.0 - gi);
            da[H + h] = d_f * gf * (1.0 - gf);
            da[2 * H + h] = d_g * (1.0 - gg * gg);
            da[3 * H + h] = d_o * go * (1.0 - go);
        }
        for (std::size_t j = 0; j < 4 * H; ++j) g.lstm_bias[j] += da[j];
        for (std::size_t i = 0; i < M; ++i) {
            double x = cache.fused(ti, i);
            double* gw = g.w_input.row(i);
            const double* w = model.recurrent.w_input.row(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < 4 * H; ++j) {
                gw[j] += x * da[j];
                acc += da[j] * w[j];
            }
            dx(ti, i) = acc;
        }
        if (ti > 0) {
            for (std::size_t i = 0; i < H; ++i) {
                double h_prev = cache.hidden(ti - 1, i);
                double* gw = g.w_recur.row(i);
                const double* w = model.recurrent.w_recur.row(i);
                double acc = 0.0;
                for (std::size_t j = 0; j < 4 * H; ++j) {
                    gw[j] += h_prev * da[j];
                    acc += da[j] * w[j];
                }
                dh_carry[i] = acc;
            }
        } else {
            std::fill(dh_carry.begin(), dh_carry.end(), 0.0);
        }
    }

    // Fusion projection.
    Matrix dmerged(T, Ds);
    Matrix dagg(T, Dc);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < M; ++j) {
            double d = dx(t, j);
            g.fusion_bias[j] += d;
            for (std::size_t i = 0; i < Ds; ++i) {
                g.fusion_weight(i, j) += cache.merged(t, i) * d;
                dmerged(t, i) += d * model.fusion.weight(i, j);
            }
            for (std::size_t i = 0; i < Dc; ++i) {
                g.fusion_weight(Ds + i, j) += cache.codec_agg(t, i) * d;
                dagg(t, i) += d * model.fusion.weight(Ds + i, j);
            }
        }
    }

    // Aggregation backward; grad_levels feed the embedding table scatter.
    std::vector<Matrix> grad_levels;
    if (model.method == AggMethod::QafStatic) {
        QafBackwardResult qb = qaf_backward(cache.bundle, model.qaf, dagg);
        g.qaf_W = std::move(qb.grad_W);
        grad_levels = std::move(qb.grad_levels);
    } else {
        const double inv_Q = 1.0 / static_cast<double>(Q);
        grad_levels.assign(Q, Matrix(T, Dc));
        for (std::size_t q = 0; q < Q; ++q)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t d = 0; d < Dc; ++d) grad_levels[q](t, d) = dagg(t, d) * inv_Q;
    }

    if (model.codec_trainable) {
        for (std::size_t q = 0; q < Q; ++q) {
            for (std::size_t t = 0; t < T; ++t) {
                std::uint32_t k = cache.codes.at(t, q);
                for (std::size_t d = 0; d < Dc; ++d) g.embed[q](k, d) += grad_levels[q](t, d);
            }
        }
    }

    // SSL merge logits. The SSL layers themselves are frozen inputs.
    if (model.has_layer_merge) {
        const std::size_t L = cache.ssl_layers.size();
        std::vector<double> u(L, 0.0);
        for (std::size_t l = 0; l < L; ++l) {
            const Matrix& layer = cache.ssl_layers[l];
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t d = 0; d < Ds; ++d) u[l] += dmerged(t, d) * layer(t, d);
        }
        double weighted = 0.0;
        for (std::size_t l = 0; l < L; ++l) weighted += cache.merge_probs[l] * u[l];
        for (std::size_t l = 0; l < L; ++l)
            g.merge_logits[l] = cache.merge_probs[l] * (u[l] - weighted);
    }

    return g;
}

DetectorModel build_detector(const DetectorShape& shape, const QuantizerStack& stack,
                             std::uint64_t seed) {
    stack.validate();
    if (shape.d_codec != stack.dim())
        throw ShapeError("build_detector: d_codec " + std::to_string(shape.d_codec) +
                         " != stack dim " + std::to_string(stack.dim()));
    if (shape.d_ssl == 0 || shape.d_model == 0 || shape.hidden == 0 || shape.num_ssl_layers == 0)
        throw ValueError("build_detector: all dimensions must be >= 1");

    DetectorModel model;
    model.stack = stack;
    model.method = shape.method;
    model.codec_trainable = shape.ablate_codec ? false : shape.codec_trainable;
    model.num_ssl_layers = shape.num_ssl_layers;
    model.d_ssl = shape.d_ssl;
    model.d_codec = shape.d_codec;
    model.d_model = shape.d_model;

    const std::size_t Q = stack.num_levels();

    // Codec embeddings start as the stack codewords (zeroed for the ablation).
    model.embed.reserve(Q);
    for (std::size_t q = 0; q < Q; ++q) {
        model.embed.push_back(shape.ablate_codec ? Matrix(stack.codebook_size(), shape.d_codec)
                                                 : stack.levels[q].codewords);
    }

    model.qaf.W = Matrix(Q, shape.d_codec);  // zeros: training starts at uniform pooling
    model.qaf.tau = shape.tau;

    model.has_layer_merge = shape.num_ssl_layers > 1;
    if (model.has_layer_merge) model.merge.logits.assign(shape.num_ssl_layers, 0.0);

    Rng rng(derive_seed(seed, 0x0D37EC70));
    const std::size_t fan_in = shape.d_ssl + shape.d_codec;
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    model.fusion.weight = Matrix(fan_in, shape.d_model);
    for (std::size_t i = 0; i < model.fusion.weight.size(); ++i)
        model.fusion.weight.data()[i] = rng.uniform(-bound, bound);
    model.fusion.bias.assign(shape.d_model, 0.0);

    const std::size_t H = shape.hidden;
    bound = 1.0 / std::sqrt(static_cast<double>(H));
    model.recurrent.hidden = H;
    model.recurrent.w_input = Matrix(shape.d_model, 4 * H);
    for (std::size_t i = 0; i < model.recurrent.w_input.size(); ++i)
        model.recurrent.w_input.data()[i] = rng.uniform(-bound, bound);
    model.recurrent.w_recur = Matrix(H, 4 * H);
    for (std::size_t i = 0; i < model.recurrent.w_recur.size(); ++i)
        model.recurrent.w_recur.data()[i] = rng.uniform(-bound, bound);
    model.recurrent.bias.assign(4 * H, 0.0);

    model.classifier_w.assign(H, 0.0);  // untrained model scores 0 everywhere
    model.classifier_b = 0.0;

    model.validate();
    return model;
}

void save_detector(const DetectorModel& model, const std::string& path) {
    model.validate();
    std::vector<TensorRecord> records;
    records.push_back(TensorRecord::from_u32(
        "config",
        {model.method == AggMethod::QafStatic ? 1u : 0u, model.codec_trainable ? 1u : 0u,
         model.has_layer_merge ? 1u : 0u, static_cast<std::uint32_t>(model.num_ssl_layers),
         static_cast<std::uint32_t>(model.d_ssl), static_cast<std::uint32_t>(model.d_codec),
         static_cast<std::uint32_t>(model.d_model), static_cast<std::uint32_t>(model.recurrent.hidden),
         static_cast<std::uint32_t>(model.stack.num_levels()),
         static_cast<std::uint32_t>(model.stack.codebook_size()),
         model.stack.zero_codeword ? 1u : 0u}));
    records.push_back(TensorRecord::from_scalar("tau", model.qaf.tau));
    char name[32];
    for (std::size_t q = 0; q < model.stack.num_levels(); ++q) {
        std::snprintf(name, sizeof(name), "stack.level%02zu", q);
        records.push_back(TensorRecord::from_matrix(name, model.stack.levels[q].codewords));
    }
    if (model.has_layer_merge)
        records.push_back(TensorRecord::from_vector("merge.logits", model.merge.logits));
    records.push_back(TensorRecord::from_matrix("qaf.W", model.qaf.W));
    for (std::size_t q = 0; q < model.num_levels(); ++q)
        records.push_back(TensorRecord::from_matrix(embed_name(q), model.embed[q]));
    records.push_back(TensorRecord::from_matrix("proj.w", model.fusion.weight));
    records.push_back(TensorRecord::from_vector("proj.b", model.fusion.bias));
    records.push_back(TensorRecord::from_matrix("lstm.w_in", model.recurrent.w_input));
    records.push_back(TensorRecord::from_matrix("lstm.w_rec", model.recurrent.w_recur));
    records.push_back(TensorRecord::from_vector("lstm.b", model.recurrent.bias));
    records.push_back(TensorRecord::from_vector("cls.w", model.classifier_w));
    records.push_back(TensorRecord::from_scalar("cls.b", model.classifier_b));
    write_container(path, records);
}

DetectorModel load_detector(const std::string& path) {
    RecordMap map(read_container(path));
    const TensorRecord& cfg = map.get("config");
    if (cfg.dtype != Dtype::U32 || cfg.element_count() != 11)
        throw FormatError(path + ": malformed model config record");

    DetectorModel model;
    model.method = cfg.u32[0] != 0 ? AggMethod::QafStatic : AggMethod::MeanPool;
    model.codec_trainable = cfg.u32[1] != 0;
    model.has_layer_merge = cfg.u32[2] != 0;
    model.num_ssl_layers = cfg.u32[3];
    model.d_ssl = cfg.u32[4];
    model.d_codec = cfg.u32[5];
    model.d_model = cfg.u32[6];
    model.recurrent.hidden = cfg.u32[7];
    std::uint32_t Q = cfg.u32[8], K = cfg.u32[9];
    model.stack.zero_codeword = cfg.u32[10] != 0;

    model.qaf.tau = map.get("tau").to_scalar();
    char name[32];
    for (std::uint32_t q = 0; q < Q; ++q) {
        std::snprintf(name, sizeof(name), "stack.level%02u", q);
        Matrix cw = map.get(name).to_matrix();
        if (cw.rows() != K)
            throw FormatError(path + ": stack level shape mismatch against header");
        model.stack.levels.push_back(Codebook{std::move(cw)});
    }
    if (model.has_layer_merge) model.merge.logits = map.get("merge.logits").to_vector();
    model.qaf.W = map.get("qaf.W").to_matrix();
    for (std::uint32_t q = 0; q < Q; ++q) model.embed.push_back(map.get(embed_name(q)).to_matrix());
    model.fusion.weight = map.get("proj.w").to_matrix();
    model.fusion.bias = map.get("proj.b").to_vector();
    model.recurrent.w_input = map.get("lstm.w_in").to_matrix();
    model.recurrent.w_recur = map.get("lstm.w_rec").to_matrix();
    model.recurrent.bias = map.get("lstm.b").to_vector();
    model.classifier_w = map.get("cls.w").to_vector();
    model.classifier_b = map.get("cls.b").to_scalar();

    try {
        model.validate();
    } catch (const Error& e) {
        throw FormatError(path + ": inconsistent model file: " + e.what());
    }
    return model;
}

void write_model_manifest(const DetectorModel& model, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f << "aggregation=" << to_string(model.method) << "\n";
    f << "codec=" << (model.codec_trainable ? "trainable" : "frozen") << "\n";
    f << "layer_merge=" << (model.has_layer_merge ? 1 : 0) << "\n";
    f << "tau=" << model.qaf.tau << "\n";
    auto line = [&f](const std::string& name, std::initializer_list<std::size_t> dims) {
        f << "tensor " << name << " [";
        bool first = true;
        for (auto d : dims) {
            if (!first) f << ", ";
            f << d;
            first = false;
        }
        f << "]\n";
    };
    for (std::size_t q = 0; q < model.stack.num_levels(); ++q)
        line("stack.level" + std::to_string(q),
             {model.stack.codebook_size(), model.stack.dim()});
    if (model.has_layer_merge) line("merge.logits", {model.merge.logits.size()});
    if (model.method == AggMethod::QafStatic) line("qaf.W", {model.qaf.W.rows(), model.qaf.W.cols()});
    for (std::size_t q = 0; q < model.num_levels(); ++q)
        line("embed." + std::to_string(q), {model.embed[q].rows(), model.embed[q].cols()});
    line("proj.w", {model.fusion.weight.rows(), model.fusion.weight.cols()});
    line("proj.b", {model.fusion.bias.size()});
    line("lstm.w_in", {model.recurrent.w_input.rows(), model.recurrent.w_input.cols()});
    line("lstm.w_rec", {model.recurrent.w_recur.rows(), model.recurrent.w_recur.cols()});
    line("lstm.b", {model.recurrent.bias.size()});
    line("cls.w", {model.classifier_w.size()});
    line("cls.b", {1});
    if (!f) throw FormatError(path + ": write failed");
}

}  // namespace qaf
