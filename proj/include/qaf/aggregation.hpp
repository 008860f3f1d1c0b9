#pragma once

#include <string>
#include <vector>

#include "qaf/matrix.hpp"

namespace qaf {

enum class AggMethod { MeanPool, QafStatic };

AggMethod parse_agg_method(const std::string& s);
std::string to_string(AggMethod m);

// Static quantizer reweighting parameters: unconstrained logits W (Q x D)
// and the softmax temperature.
struct QafParams {
    Matrix W;
    double tau = 1.0;

    void validate() const;
};

// Per-dimension quantizer weights; every column sums to 1.
using AlphaMatrix = Matrix;

// Q per-level embedding sequences, all T x D.
struct LevelBundle {
    std::vector<FeatureSequence> levels;

    std::size_t num_levels() const { return levels.size(); }
    std::size_t frames() const { return levels.empty() ? 0 : levels[0].rows(); }
    std::size_t dim() const { return levels.empty() ? 0 : levels[0].cols(); }

    void validate() const;
};

// Uniform average over levels.
FeatureSequence mean_pool_levels(const LevelBundle& bundle);

// Column-wise temperature softmax of W, with per-column max subtraction.
AlphaMatrix qaf_alpha(const QafParams& params);

// Per-dimension convex combination of the levels under qaf_alpha weights.
FeatureSequence qaf_aggregate(const LevelBundle& bundle, const QafParams& params);

struct QafBackwardResult {
    Matrix grad_W;                            // Q x D
    std::vector<FeatureSequence> grad_levels; // Q of T x D
};

// Reverse-mode gradients of qaf_aggregate through the softmax.
QafBackwardResult qaf_backward(const LevelBundle& bundle, const QafParams& params,
                               const Matrix& upstream);

// CSV dump of an alpha matrix: header `quantizer,dim,alpha`, rows q-major,
// then one `q,mean,value` summary row per quantizer.
void write_alpha_csv(const AlphaMatrix& alpha, const std::string& path);

}  // namespace qaf
