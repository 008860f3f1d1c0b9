#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qaf/matrix.hpp"
#include "qaf/rvq.hpp"

namespace qaf {

// Generator settings for the planted-artifact corpus. Codeword scales decay
// geometrically (ratio 0.5) per level, so the stack forms a genuine
// coarse-to-fine hierarchy. The spoof/bona-fide difference lives only at
// artifact_level: bona-fide trials draw that level's codes from the first
// half of the codebook, spoof trials from the second half.
struct SynthConfig {
    std::uint64_t seed = 1;
    std::size_t num_levels = 4;     // Q
    std::size_t codebook_size = 8;  // K, even and >= 4 when the artifact is on
    std::size_t d_codec = 8;
    std::size_t d_ssl = 16;
    std::size_t num_ssl_layers = 3;  // L
    std::size_t t_min = 20, t_max = 40;
    std::size_t train_per_class = 400;
    std::size_t dev_per_class = 100;
    std::size_t eval_per_class = 200;
    std::size_t artifact_level = 2;    // q*, 1-based
    double artifact_strength = 0.5;    // sigma_a: shift of the spoof half, in level-scale units
    std::size_t ssl_smoothing = 8;     // moving-average window w
    double noise = 0.45;               // sigma_n
    bool artifact_enabled = true;      // off: both classes sample all codewords (null case)

    void validate() const;
};

struct Trial {
    std::vector<FeatureSequence> ssl_layers;  // L of T x d_ssl
    FeatureSequence codec_latent;             // T x d_codec
    int label = 0;                            // 0 spoof, 1 bona fide
};

struct Dataset {
    std::vector<Trial> train, dev, eval;
    QuantizerStack truth_stack;
};

// Deterministic generation; the three splits use disjoint seed streams and
// share the stack, SSL maps and artifact direction.
Dataset gen_dataset(const SynthConfig& cfg);

// Trials <-> QAF1 container. Values are stored as float32.
void write_trials(const std::vector<Trial>& trials, const std::string& path);
std::vector<Trial> read_trials(const std::string& path);

// Plain-text key=value manifest mirroring the config keys.
void write_synth_manifest(const SynthConfig& cfg, const std::string& path);

}  // namespace qaf
