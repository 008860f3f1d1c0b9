#include "qaf/aggregation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "qaf/errors.hpp"

namespace qaf {

AggMethod parse_agg_method(const std::string& s) {
    if (s == "mean_pool") return AggMethod::MeanPool;
    if (s == "qaf" || s == "qaf_static") return AggMethod::QafStatic;
    throw ConfigError("unknown aggregation method '" + s + "' (expected mean_pool or qaf)");
}

std::string to_string(AggMethod m) {
    return m == AggMethod::MeanPool ? "mean_pool" : "qaf_static";
}

void QafParams::validate() const {
    if (!(tau > 0.0)) throw ValueError("QafParams: tau must be positive");
    if (W.rows() == 0 || W.cols() == 0) throw ValueError("QafParams: empty weight matrix");
    require_finite(W, "QafParams.W");
}

void LevelBundle::validate() const {
    if (levels.empty()) throw ValueError("LevelBundle: no levels");
    for (std::size_t q = 0; q < levels.size(); ++q) {
        if (!levels[q].same_shape(levels[0]))
            throw ShapeError("LevelBundle: level " + std::to_string(q + 1) +
                             " shape differs from level 1");
    }
    if (levels[0].rows() == 0 || levels[0].cols() == 0)
        throw ValueError("LevelBundle: empty sequences");
}

FeatureSequence mean_pool_levels(const LevelBundle& bundle) {
    bundle.validate();
    const std::size_t Q = bundle.num_levels(), T = bundle.frames(), D = bundle.dim();
    Matrix out(T, D);
    for (std::size_t q = 0; q < Q; ++q) {
        const Matrix& lv = bundle.levels[q];
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t d = 0; d < D; ++d) out(t, d) += lv(t, d);
    }
    double inv = 1.0 / static_cast<double>(Q);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < D; ++d) out(t, d) *= inv;
    return out;
}

AlphaMatrix qaf_alpha(const QafParams& params) {
    params.validate();
    const std::size_t Q = params.W.rows(), D = params.W.cols();
    Matrix alpha(Q, D);
    for (std::size_t d = 0; d < D; ++d) {
        double max_logit = params.W(0, d);
        for (std::size_t q = 1; q < Q; ++q) max_logit = std::max(max_logit, params.W(q, d));
        double denom = 0.0;
        for (std::size_t q = 0; q < Q; ++q) {
            double e = std::exp((params.W(q, d) - max_logit) / params.tau);
            alpha(q, d) = e;
            denom += e;
        }
        for (std::size_t q = 0; q < Q; ++q) alpha(q, d) /= denom;
    }
    return alpha;
}

FeatureSequence qaf_aggregate(const LevelBundle& bundle, const QafParams& params) {
    bundle.validate();
    if (params.W.rows() != bundle.num_levels() || params.W.cols() != bundle.dim())
        throw ShapeError("qaf_aggregate: W is " + std::to_string(params.W.rows()) + "x" +
                         std::to_string(params.W.cols()) + ", bundle is Q=" +
                         std::to_string(bundle.num_levels()) + ", D=" + std::to_string(bundle.dim()));
    AlphaMatrix alpha = qaf_alpha(params);
    const std::size_t Q = bundle.num_levels(), T = bundle.frames(), D = bundle.dim();
    Matrix out(T, D);
    for (std::size_t q = 0; q < Q; ++q) {
        const Matrix& lv = bundle.levels[q];
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t d = 0; d < D; ++d) out(t, d) += alpha(q, d) * lv(t, d);
    }
    return out;
}

QafBackwardResult qaf_backward(const LevelBundle& bundle, const QafParams& params,
                               const Matrix& upstream) {
    bundle.validate();
    if (params.W.rows() != bundle.num_levels() || params.W.cols() != bundle.dim())
        throw ShapeError("qaf_backward: W does not match bundle");
    if (upstream.rows() != bundle.frames() || upstream.cols() != bundle.dim())
        throw ShapeError("qaf_backward: upstream gradient does not match bundle");

    AlphaMatrix alpha = qaf_alpha(params);
    const std::size_t Q = bundle.num_levels(), T = bundle.frames(), D = bundle.dim();

    QafBackwardResult out;
    out.grad_levels.assign(Q, Matrix(T, D));

    // g[q][d] = sum_t upstream[t][d] * levels[q][t][d]
    Matrix g(Q, D);
    for (std::size_t q = 0; q < Q; ++q) {
        const Matrix& lv = bundle.levels[q];
        Matrix& gl = out.grad_levels[q];
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t d = 0; d < D; ++d) {
                gl(t, d) = alpha(q, d) * upstream(t, d);
                g(q, d) += upstream(t, d) * lv(t, d);
            }
        }
    }

    // Softmax Jacobian: dW[q][d] = alpha/tau * (g - sum_q' alpha*g)
    out.grad_W = Matrix(Q, D);
    for (std::size_t d = 0; d < D; ++d) {
        double weighted = 0.0;
        for (std::size_t q = 0; q < Q; ++q) weighted += alpha(q, d) * g(q, d);
        for (std::size_t q = 0; q < Q; ++q)
            out.grad_W(q, d) = alpha(q, d) / params.tau * (g(q, d) - weighted);
    }
    return out;
}

void write_alpha_csv(const AlphaMatrix& alpha, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f << "quantizer,dim,alpha\n";
    char buf[64];
    for (std::size_t q = 0; q < alpha.rows(); ++q) {
        for (std::size_t d = 0; d < alpha.cols(); ++d) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g\n", q + 1, d, alpha(q, d));
            f << buf;
        }
    }
    for (std::size_t q = 0; q < alpha.rows(); ++q) {
        double mean = 0.0;
        for (std::size_t d = 0; d < alpha.cols(); ++d) mean += alpha(q, d);
        mean /= static_cast<double>(alpha.cols());
        std::snprintf(buf, sizeof(buf), "%zu,mean,%.9g\n", q + 1, mean);
        f << buf;
    }
    if (!f) throw FormatError(path + ": write failed");
}

}  // namespace qaf
