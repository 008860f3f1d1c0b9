#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qaf/aggregation.hpp"
#include "qaf/matrix.hpp"
#include "qaf/rvq.hpp"

namespace qaf {

// Late-fusion projection: concat(ssl, codec) -> d_model.
struct FusionParams {
    Matrix weight;             // (d_ssl + d_codec) x d_model
    std::vector<double> bias;  // d_model
};

// Scalar softmax weights over SSL layers.
struct LayerMergeParams {
    std::vector<double> logits;  // one per layer
};

// Single-layer LSTM. Gate blocks are ordered (input, forget, cell, output)
// with sigmoid/sigmoid/tanh/sigmoid activations; initial state is zero.
struct RecurrentParams {
    Matrix w_input;            // d_model x 4H
    Matrix w_recur;            // H x 4H
    std::vector<double> bias;  // 4H
    std::size_t hidden = 0;
};

// Full scorer: codec front end (stack + per-level embedding table),
// aggregation, SSL merge, fusion, recurrence, linear classifier.
// Higher logit means bona fide.
struct DetectorModel {
    QuantizerStack stack;  // encoding front end, never trained

    AggMethod method = AggMethod::MeanPool;
    QafParams qaf;  // used when method == QafStatic; W is Q x d_codec

    std::vector<Matrix> embed;  // Q tables of K x d_codec, trainable per codec_trainable
    bool codec_trainable = false;

    bool has_layer_merge = false;
    LayerMergeParams merge;

    FusionParams fusion;
    RecurrentParams recurrent;
    std::vector<double> classifier_w;  // H
    double classifier_b = 0.0;

    std::size_t num_ssl_layers = 1;
    std::size_t d_ssl = 0, d_codec = 0, d_model = 0;

    std::size_t num_levels() const { return embed.size(); }
    std::size_t codebook_size() const { return embed.empty() ? 0 : embed[0].rows(); }

    // Trainable tensors in a fixed order shared with DetectorGrads.
    std::vector<TensorRef> tensors();
    void validate() const;
};

// Gradient holder mirroring DetectorModel's trainable tensors.
struct DetectorGrads {
    Matrix qaf_W;
    std::vector<Matrix> embed;
    std::vector<double> merge_logits;
    Matrix fusion_weight;
    std::vector<double> fusion_bias;
    Matrix w_input, w_recur;
    std::vector<double> lstm_bias;
    std::vector<double> classifier_w;
    double classifier_b = 0.0;

    static DetectorGrads zeros_like(const DetectorModel& model);
    std::vector<TensorRef> tensors(const DetectorModel& model);
    void accumulate(const DetectorGrads& other);
    void scale(double s);
};

// Everything the backward pass needs, captured by value.
struct ForwardCache {
    std::vector<FeatureSequence> ssl_layers;
    CodeIndices codes;
    std::vector<double> merge_probs;
    FeatureSequence merged;     // T x d_ssl
    LevelBundle bundle;         // Q x (T x d_codec)
    AlphaMatrix alpha;          // Q x d_codec
    FeatureSequence codec_agg;  // T x d_codec
    FeatureSequence fused;      // T x d_model
    Matrix gate_i, gate_f, gate_g, gate_o;  // T x H
    Matrix cell, cell_tanh, hidden;         // T x H
    std::vector<double> pooled;             // H
    double logit = 0.0;
    // shape fingerprint for stale-cache detection
    std::size_t sig_levels = 0, sig_dssl = 0, sig_dcodec = 0, sig_dmodel = 0, sig_hidden = 0;
};

struct ForwardResult {
    double logit = 0.0;
    ForwardCache cache;
};

// Weighted SSL layer merge (scalar softmax over layers).
FeatureSequence layer_merge(const std::vector<FeatureSequence>& layers,
                            const LayerMergeParams& params);

// Frame-wise concat(ssl, codec) followed by the linear projection; SSL first.
FeatureSequence fuse(const FeatureSequence& ssl, const FeatureSequence& codec,
                     const FusionParams& params);

// merge -> embedding lookup -> aggregation -> fuse -> LSTM -> temporal mean
// -> scalar logit.
ForwardResult detector_forward(const std::vector<FeatureSequence>& ssl_layers,
                               const CodeIndices& codes, const DetectorModel& model);

// Reverse-mode pass. Gradients flow to every trainable tensor; the embedding
// table gradient is zeroed when codec_trainable is false. SSL layers are
// inputs and never receive gradients.
DetectorGrads detector_backward(const DetectorModel& model, const ForwardCache& cache,
                                double dlogit);

// Construction parameters for a fresh model.
struct DetectorShape {
    std::size_t num_ssl_layers = 1;
    std::size_t d_ssl = 0, d_codec = 0, d_model = 32, hidden = 32;
    AggMethod method = AggMethod::MeanPool;
    bool codec_trainable = false;
    double tau = 1.0;
    bool ablate_codec = false;  // zero + freeze the embedding table
};

// Fresh model: embedding table copied from the stack codewords, projection
// and LSTM weights symmetric-uniform by fan-in, classifier and W at zero.
DetectorModel build_detector(const DetectorShape& shape, const QuantizerStack& stack,
                             std::uint64_t seed);

// Model <-> QAF1 container, plus a text manifest alongside the binary.
void save_detector(const DetectorModel& model, const std::string& path);
DetectorModel load_detector(const std::string& path);
void write_model_manifest(const DetectorModel& model, const std::string& path);

}  // namespace qaf
