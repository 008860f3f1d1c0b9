#pragma once

#include <cstdint>
#include <vector>

#include "qaf/matrix.hpp"

namespace qaf {

// One residual level: K codewords of dimension D, one per row.
struct Codebook {
    Matrix codewords;
};

// Ordered cascade of codebooks sharing K and D. Level q quantizes the
// residual left by levels 1..q-1; immutable after construction.
struct QuantizerStack {
    std::vector<Codebook> levels;
    bool zero_codeword = false;  // row 0 of every level pinned to the zero vector

    std::size_t num_levels() const { return levels.size(); }
    std::size_t codebook_size() const { return levels.empty() ? 0 : levels[0].codewords.rows(); }
    std::size_t dim() const { return levels.empty() ? 0 : levels[0].codewords.cols(); }

    void validate() const;
};

// Per-frame codeword selections, frames x levels.
struct CodeIndices {
    std::size_t frames = 0;
    std::size_t levels = 0;
    std::vector<std::uint32_t> idx;

    CodeIndices() = default;
    CodeIndices(std::size_t frames_, std::size_t levels_)
        : frames(frames_), levels(levels_), idx(frames_ * levels_, 0) {}

    std::uint32_t& at(std::size_t t, std::size_t q) { return idx[t * levels + q]; }
    std::uint32_t at(std::size_t t, std::size_t q) const { return idx[t * levels + q]; }

    friend bool operator==(const CodeIndices& a, const CodeIndices& b) {
        return a.frames == b.frames && a.levels == b.levels && a.idx == b.idx;
    }
};

struct EncodeResult {
    CodeIndices indices;
    // frames x (Q+1); column q holds ||r^(q)||_2, column 0 the input norm.
    Matrix residual_norms;
};

// Greedy residual quantization: per frame, each level picks the codeword
// nearest (squared Euclidean) to the running residual, ties to the lowest
// index, and subtracts it.
EncodeResult rvq_encode(const FeatureSequence& z, const QuantizerStack& stack);

// Reconstruction: sum of the selected codewords across levels.
FeatureSequence rvq_decode(const CodeIndices& indices, const QuantizerStack& stack);

// Per-level embedding: row t is the codeword picked at frame t by level q
// (1-based). Summing over all q reproduces rvq_decode exactly.
FeatureSequence embed_level(const CodeIndices& indices, const QuantizerStack& stack, std::size_t q);

// Level-by-level residual k-means (plain Lloyd). Level 1 fits the raw frames,
// each later level fits the residuals left by the frozen earlier ones. Empty
// clusters reseed at the point farthest from its assigned centroid. With
// include_zero_codeword, row 0 of every level is pinned to the zero vector.
// objective_trace, when given, receives the per-iteration k-means objective
// of every level.
QuantizerStack train_codebooks(const std::vector<FeatureSequence>& data, std::size_t num_levels,
                               std::size_t codebook_size, std::size_t iters, std::uint64_t seed,
                               bool include_zero_codeword = true,
                               std::vector<std::vector<double>>* objective_trace = nullptr);

// Mean squared residual after each level; entry 0 is the raw signal energy.
std::vector<double> reconstruction_curve(const FeatureSequence& z, const QuantizerStack& stack);

// Stack <-> QAF1 container.
void save_stack(const QuantizerStack& stack, const std::string& path);
QuantizerStack load_stack(const std::string& path);

}  // namespace qaf
