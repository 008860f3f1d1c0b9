#include "qaf/gradcheck.hpp"

#include <cmath>
#include <map>

#include "qaf/aggregation.hpp"
#include "qaf/detector.hpp"
#include "qaf/rng.hpp"
#include "qaf/training.hpp"

namespace qaf {

namespace {

constexpr double kStep = 1e-5;
constexpr double kGuard = 1e-8;

std::string group_of(const std::string& tensor_name) {
    if (tensor_name.rfind("embed.", 0) == 0) return "embed";
    return tensor_name;
}

void update_group(std::map<std::string, GradCheckGroup>& groups, const std::string& name,
                  double analytic, double numeric) {
    if (std::abs(analytic) + std::abs(numeric) <= kGuard) return;
    double rel = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric));
    GradCheckGroup& g = groups[name];
    g.name = name;
    g.max_rel_err = std::max(g.max_rel_err, rel);
    g.checked += 1;
}

QuantizerStack random_stack(Rng& rng, std::size_t q_levels, std::size_t k, std::size_t d) {
    QuantizerStack stack;
    for (std::size_t q = 0; q < q_levels; ++q) {
        Matrix cw(k, d);
        double scale = std::pow(0.5, static_cast<double>(q));
        for (std::size_t i = 0; i < cw.size(); ++i) cw.data()[i] = rng.normal(0.0, scale);
        stack.levels.push_back(Codebook{cw});
    }
    return stack;
}

void check_detector_round(std::map<std::string, GradCheckGroup>& groups, std::uint64_t seed,
                          AggMethod method) {
    // Tiny shape: T=3, d_ssl=4, d_codec=2, Q=2, K=3, H=3, two SSL layers.
    const std::size_t T = 3, Dc = 2, Ds = 4, Q = 2, K = 3, H = 3, L = 2, M = 4;
    Rng rng(derive_seed(seed, 0xDE7));

    QuantizerStack stack = random_stack(rng, Q, K, Dc);
    DetectorShape shape;
    shape.num_ssl_layers = L;
    shape.d_ssl = Ds;
    shape.d_codec = Dc;
    shape.d_model = M;
    shape.hidden = H;
    shape.method = method;
    shape.codec_trainable = true;
    shape.tau = 0.7;
    DetectorModel model = build_detector(shape, stack, seed);

    // Zero-initialized tensors (classifier, W, merge) would give degenerate
    // gradients; randomize everything.
    for (TensorRef& ref : model.tensors()) {
        for (std::size_t j = 0; j < ref.size; ++j) ref.data[j] = rng.normal(0.0, 0.6);
    }

    std::vector<FeatureSequence> ssl_layers(L, Matrix(T, Ds));
    for (auto& layer : ssl_layers) {
        for (std::size_t i = 0; i < layer.size(); ++i) layer.data()[i] = rng.normal();
    }
    CodeIndices codes(T, Q);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t q = 0; q < Q; ++q)
            codes.at(t, q) = static_cast<std::uint32_t>(rng.uniform_index(K));
    int label = static_cast<int>(rng.uniform_index(2));

    ForwardResult fwd = detector_forward(ssl_layers, codes, model);
    BceResult bce = bce_loss(fwd.logit, label);
    DetectorGrads grads = detector_backward(model, fwd.cache, bce.dlogit);

    std::vector<TensorRef> prefs = model.tensors();
    std::vector<TensorRef> grefs = grads.tensors(model);
    auto loss_at = [&]() {
        return bce_loss(detector_forward(ssl_layers, codes, model).logit, label).loss;
    };
    for (std::size_t i = 0; i < prefs.size(); ++i) {
        if (!prefs[i].trainable) continue;
        for (std::size_t j = 0; j < prefs[i].size; ++j) {
            double saved = prefs[i].data[j];
            prefs[i].data[j] = saved + kStep;
            double up = loss_at();
            prefs[i].data[j] = saved - kStep;
            double down = loss_at();
            prefs[i].data[j] = saved;
            double numeric = (up - down) / (2.0 * kStep);
            update_group(groups, group_of(prefs[i].name), grefs[i].data[j], numeric);
        }
    }
}

void check_qaf_round(std::map<std::string, GradCheckGroup>& groups, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xA11CE));
    const std::size_t Q = 2 + rng.uniform_index(3);  // 2..4
    const std::size_t D = 1 + rng.uniform_index(3);
    const std::size_t T = 1 + rng.uniform_index(3);

    LevelBundle bundle;
    bundle.levels.assign(Q, Matrix(T, D));
    for (auto& lv : bundle.levels)
        for (std::size_t i = 0; i < lv.size(); ++i) lv.data()[i] = rng.normal();
    QafParams params;
    params.tau = 0.5 + rng.uniform();
    params.W = Matrix(Q, D);
    for (std::size_t i = 0; i < params.W.size(); ++i) params.W.data()[i] = rng.normal();
    Matrix upstream(T, D);
    for (std::size_t i = 0; i < upstream.size(); ++i) upstream.data()[i] = rng.normal();

    QafBackwardResult back = qaf_backward(bundle, params, upstream);
    auto loss_at = [&]() {
        Matrix out = qaf_aggregate(bundle, params);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += upstream.data()[i] * out.data()[i];
        return s;
    };
    for (std::size_t i = 0; i < params.W.size(); ++i) {
        double saved = params.W.data()[i];
        params.W.data()[i] = saved + kStep;
        double up = loss_at();
        params.W.data()[i] = saved - kStep;
        double down = loss_at();
        params.W.data()[i] = saved;
        update_group(groups, "qaf_op.W", back.grad_W.data()[i], (up - down) / (2.0 * kStep));
    }
    for (std::size_t q = 0; q < Q; ++q) {
        for (std::size_t i = 0; i < bundle.levels[q].size(); ++i) {
            double saved = bundle.levels[q].data()[i];
            bundle.levels[q].data()[i] = saved + kStep;
            double up = loss_at();
            bundle.levels[q].data()[i] = saved - kStep;
            double down = loss_at();
            bundle.levels[q].data()[i] = saved;
            update_group(groups, "qaf_op.levels", back.grad_levels[q].data()[i],
                         (up - down) / (2.0 * kStep));
        }
    }
}

}  // namespace

std::vector<GradCheckGroup> run_gradcheck(std::uint64_t seed, std::size_t rounds) {
    std::map<std::string, GradCheckGroup> groups;
    for (std::size_t r = 0; r < rounds; ++r) {
        AggMethod method = r % 2 == 0 ? AggMethod::QafStatic : AggMethod::MeanPool;
        check_detector_round(groups, derive_seed(seed, 100 + r), method);
        check_qaf_round(groups, derive_seed(seed, 500 + r));
    }
    std::vector<GradCheckGroup> out;
    out.reserve(groups.size());
    for (const auto& [name, group] : groups) out.push_back(group);
    return out;
}

}  // namespace qaf
