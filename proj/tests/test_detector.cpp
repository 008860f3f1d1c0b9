#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "qaf/detector.hpp"
#include "test_util.hpp"

using namespace qaf;
using qaf::test::random_matrix;
using qaf::test::random_stack;

namespace {

constexpr std::size_t kT = 3, kDs = 4, kDc = 2, kQ = 2, kK = 3, kH = 3, kL = 2, kM = 4;

DetectorModel tiny_model(std::uint64_t seed, AggMethod method, bool codec_trainable,
                         bool randomize = true) {
    Rng rng(seed);
    QuantizerStack stack = random_stack(rng, kQ, kK, kDc);
    DetectorShape shape;
    shape.num_ssl_layers = kL;
    shape.d_ssl = kDs;
    shape.d_codec = kDc;
    shape.d_model = kM;
    shape.hidden = kH;
    shape.method = method;
    shape.codec_trainable = codec_trainable;
    shape.tau = 0.8;
    DetectorModel model = build_detector(shape, stack, seed);
    if (randomize) {
        for (TensorRef& ref : model.tensors())
            for (std::size_t j = 0; j < ref.size; ++j) ref.data[j] = rng.normal(0.0, 0.5);
    }
    return model;
}

std::vector<FeatureSequence> tiny_ssl(Rng& rng, std::size_t t = kT) {
    std::vector<FeatureSequence> layers;
    for (std::size_t l = 0; l < kL; ++l) layers.push_back(random_matrix(rng, t, kDs));
    return layers;
}

CodeIndices tiny_codes(Rng& rng, std::size_t t = kT) {
    CodeIndices codes(t, kQ);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t q = 0; q < kQ; ++q)
            codes.at(i, q) = static_cast<std::uint32_t>(rng.uniform_index(kK));
    return codes;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("layer_merge: single layer, uniform mixture, naive oracle") {
    Matrix a(1, 1), b(1, 1);
    a(0, 0) = 0.0;
    b(0, 0) = 2.0;

    LayerMergeParams one;
    one.logits = {0.3};
    CHECK(layer_merge({a}, one)(0, 0) == doctest::Approx(0.0));

    LayerMergeParams equal;
    equal.logits = {1.7, 1.7};
    CHECK(layer_merge({a, b}, equal)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(301);
    std::vector<FeatureSequence> layers = {random_matrix(rng, 3, 2), random_matrix(rng, 3, 2),
                                           random_matrix(rng, 3, 2)};
    LayerMergeParams params;
    params.logits = {rng.normal(), rng.normal(), rng.normal()};
    Matrix merged = layer_merge(layers, params);
    // Independent weighted-sum loop.
    double z = 0.0;
    std::vector<double> w(3);
    for (int l = 0; l < 3; ++l) z += std::exp(params.logits[l]);
    for (int l = 0; l < 3; ++l) w[l] = std::exp(params.logits[l]) / z;
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t d = 0; d < 2; ++d) {
            double expect = 0.0;
            for (int l = 0; l < 3; ++l) expect += w[l] * layers[l](t, d);
            CHECK(merged(t, d) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("fuse: zero weight yields the bias, identity block yields the concat") {
    Rng rng(307);
    Matrix ssl = random_matrix(rng, 3, 2);
    Matrix codec = random_matrix(rng, 3, 2);

    FusionParams zero;
    zero.weight = Matrix(4, 3);
    zero.bias = {1.5, -2.0, 0.25};
    Matrix out = fuse(ssl, codec, zero);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t j = 0; j < 3; ++j) CHECK(out(t, j) == doctest::Approx(zero.bias[j]));

    FusionParams identity;
    identity.weight = Matrix(4, 4);
    for (std::size_t i = 0; i < 4; ++i) identity.weight(i, i) = 1.0;
    identity.bias.assign(4, 0.0);
    Matrix concat = fuse(ssl, codec, identity);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(concat(t, 0) == ssl(t, 0));
        CHECK(concat(t, 1) == ssl(t, 1));
        CHECK(concat(t, 2) == codec(t, 0));
        CHECK(concat(t, 3) == codec(t, 1));
    }
}

TEST_CASE("fuse matches a naive triple-loop matmul") {
    Rng rng(311);
    Matrix ssl = random_matrix(rng, 4, 3);
    Matrix codec = random_matrix(rng, 4, 2);
    FusionParams params;
    params.weight = random_matrix(rng, 5, 6);
    params.bias.resize(6);
    for (auto& b : params.bias) b = rng.normal();
    Matrix out = fuse(ssl, codec, params);
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t j = 0; j < 6; ++j) {
            double acc = params.bias[j];
            for (std::size_t i = 0; i < 3; ++i) acc += ssl(t, i) * params.weight(i, j);
            for (std::size_t i = 0; i < 2; ++i) acc += codec(t, i) * params.weight(3 + i, j);
            CHECK(std::abs(out(t, j) - acc) <= 1e-12);
        }
    }
}

TEST_CASE("detector_forward with all-zero weights returns the classifier bias") {
    DetectorModel model = tiny_model(13, AggMethod::MeanPool, false, /*randomize=*/false);
    for (TensorRef& ref : model.tensors())
        for (std::size_t j = 0; j < ref.size; ++j) ref.data[j] = 0.0;
    model.classifier_b = -0.75;

    Rng rng(17);
    ForwardResult fwd = detector_forward(tiny_ssl(rng), tiny_codes(rng), model);
    CHECK(fwd.logit == -0.75);
}

TEST_CASE("detector_forward T=1 matches a hand-rolled one-step pipeline") {
    DetectorModel model = tiny_model(19, AggMethod::QafStatic, true);
    Rng rng(23);
    std::vector<FeatureSequence> ssl = tiny_ssl(rng, 1);
    CodeIndices codes = tiny_codes(rng, 1);

    ForwardResult fwd = detector_forward(ssl, codes, model);

    // Independent single-step evaluation.
    std::vector<double> probs(kL);
    double z = 0.0;
    for (std::size_t l = 0; l < kL; ++l) z += std::exp(model.merge.logits[l]);
    for (std::size_t l = 0; l < kL; ++l) probs[l] = std::exp(model.merge.logits[l]) / z;
    std::vector<double> merged(kDs, 0.0);
    for (std::size_t l = 0; l < kL; ++l)
        for (std::size_t d = 0; d < kDs; ++d) merged[d] += probs[l] * ssl[l](0, d);

    AlphaMatrix alpha = qaf_alpha(model.qaf);
    std::vector<double> agg(kDc, 0.0);
    for (std::size_t q = 0; q < kQ; ++q)
        for (std::size_t d = 0; d < kDc; ++d)
            agg[d] += alpha(q, d) * model.embed[q](codes.at(0, q), d);

    std::vector<double> x(kM, 0.0);
    for (std::size_t j = 0; j < kM; ++j) {
        x[j] = model.fusion.bias[j];
        for (std::size_t i = 0; i < kDs; ++i) x[j] += merged[i] * model.fusion.weight(i, j);
        for (std::size_t i = 0; i < kDc; ++i) x[j] += agg[i] * model.fusion.weight(kDs + i, j);
    }

    double logit = model.classifier_b;
    for (std::size_t h = 0; h < kH; ++h) {
        double ai = model.recurrent.bias[h];
        double af = model.recurrent.bias[kH + h];
        double ag = model.recurrent.bias[2 * kH + h];
        double ao = model.recurrent.bias[3 * kH + h];
        for (std::size_t i = 0; i < kM; ++i) {
            ai += x[i] * model.recurrent.w_input(i, h);
            af += x[i] * model.recurrent.w_input(i, kH + h);
            ag += x[i] * model.recurrent.w_input(i, 2 * kH + h);
            ao += x[i] * model.recurrent.w_input(i, 3 * kH + h);
        }
        double c = sigmoid_ref(ai) * std::tanh(ag);  // zero initial state
        double hidden = sigmoid_ref(ao) * std::tanh(c);
        logit += model.classifier_w[h] * hidden;  // T=1: mean pool is the single state
    }
    CHECK(fwd.logit == doctest::Approx(logit).epsilon(1e-12));
}

TEST_CASE("disabled recurrence makes the logit insensitive to frame order") {
    DetectorModel model = tiny_model(29, AggMethod::MeanPool, false);
    // Cut both recurrent pathways: the hidden feedback (weights) and the cell
    // carry (forget gate saturated closed). The layer is then a per-frame map
    // followed by the temporal mean.
    model.recurrent.w_recur.fill(0.0);
    for (std::size_t h = 0; h < kH; ++h) model.recurrent.bias[kH + h] = -1000.0;

    Rng rng(31);
    std::vector<FeatureSequence> ssl = tiny_ssl(rng, 2);
    CodeIndices codes = tiny_codes(rng, 2);

    std::vector<FeatureSequence> ssl_swapped = ssl;
    for (auto& layer : ssl_swapped)
        for (std::size_t d = 0; d < kDs; ++d) std::swap(layer(0, d), layer(1, d));
    CodeIndices codes_swapped = codes;
    for (std::size_t q = 0; q < kQ; ++q)
        std::swap(codes_swapped.idx[q], codes_swapped.idx[kQ + q]);

    double a = detector_forward(ssl, codes, model).logit;
    double b = detector_forward(ssl_swapped, codes_swapped, model).logit;
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("LSTM recurrence matches a reference step-by-step implementation") {
    DetectorModel model = tiny_model(37, AggMethod::MeanPool, false);
    Rng rng(41);
    std::vector<FeatureSequence> ssl = tiny_ssl(rng, 6);
    CodeIndices codes = tiny_codes(rng, 6);
    ForwardResult fwd = detector_forward(ssl, codes, model);

    // Reference recurrence over the cached fused inputs.
    std::vector<double> h(kH, 0.0), c(kH, 0.0);
    for (std::size_t t = 0; t < 6; ++t) {
        std::vector<double> a(4 * kH);
        for (std::size_t j = 0; j < 4 * kH; ++j) {
            a[j] = model.recurrent.bias[j];
            for (std::size_t i = 0; i < kM; ++i)
                a[j] += fwd.cache.fused(t, i) * model.recurrent.w_input(i, j);
            for (std::size_t i = 0; i < kH; ++i) a[j] += h[i] * model.recurrent.w_recur(i, j);
        }
        for (std::size_t hh = 0; hh < kH; ++hh) {
            double gi = sigmoid_ref(a[hh]);
            double gf = sigmoid_ref(a[kH + hh]);
            double gg = std::tanh(a[2 * kH + hh]);
            double go = sigmoid_ref(a[3 * kH + hh]);
            c[hh] = gf * c[hh] + gi * gg;
            h[hh] = go * std::tanh(c[hh]);
        }
        for (std::size_t hh = 0; hh < kH; ++hh)
            CHECK(std::abs(fwd.cache.hidden(t, hh) - h[hh]) <= 1e-12);
    }
}

TEST_CASE("freshly initialized qaf model scores exactly like mean pooling") {
    Rng rng(43);
    QuantizerStack stack = random_stack(rng, kQ, kK, kDc);
    DetectorShape shape;
    shape.num_ssl_layers = kL;
    shape.d_ssl = kDs;
    shape.d_codec = kDc;
    shape.d_model = kM;
    shape.hidden = kH;
    shape.method = AggMethod::QafStatic;
    DetectorModel qaf_model = build_detector(shape, stack, 77);
    shape.method = AggMethod::MeanPool;
    DetectorModel mean_model = build_detector(shape, stack, 77);  // same seed, same weights

    // An untrained classifier would make both logits 0; give the shared tail
    // weights some life first.
    Rng wrng(47);
    for (std::size_t h = 0; h < kH; ++h) {
        double v = wrng.normal();
        qaf_model.classifier_w[h] = v;
        mean_model.classifier_w[h] = v;
    }
    for (int round = 0; round < 10; ++round) {
        std::vector<FeatureSequence> ssl = tiny_ssl(wrng, 4);
        CodeIndices codes = tiny_codes(wrng, 4);
        double a = detector_forward(ssl, codes, qaf_model).logit;
        double b = detector_forward(ssl, codes, mean_model).logit;
        CHECK(std::abs(a - b) <= 1e-10);
    }
}

TEST_CASE("codec flag changes emitted gradients but never the forward logit") {
    DetectorModel frozen = tiny_model(53, AggMethod::QafStatic, false);
    DetectorModel trainable = frozen;
    trainable.codec_trainable = true;

    Rng rng(59);
    std::vector<FeatureSequence> ssl = tiny_ssl(rng);
    CodeIndices codes = tiny_codes(rng);

    ForwardResult fa = detector_forward(ssl, codes, frozen);
    ForwardResult fb = detector_forward(ssl, codes, trainable);
    CHECK(fa.logit == fb.logit);

    DetectorGrads ga = detector_backward(frozen, fa.cache, 1.0);
    DetectorGrads gb = detector_backward(trainable, fb.cache, 1.0);

    double frozen_embed_mag = 0.0, trainable_embed_mag = 0.0, w_mag = 0.0;
    for (std::size_t q = 0; q < kQ; ++q) {
        for (std::size_t i = 0; i < ga.embed[q].size(); ++i) {
            frozen_embed_mag += std::abs(ga.embed[q].data()[i]);
            trainable_embed_mag += std::abs(gb.embed[q].data()[i]);
        }
    }
    for (std::size_t i = 0; i < ga.qaf_W.size(); ++i) w_mag += std::abs(ga.qaf_W.data()[i]);
    CHECK(frozen_embed_mag == 0.0);
    CHECK(trainable_embed_mag > 0.0);
    CHECK(w_mag > 0.0);

    // Shared path gradients agree.
    for (std::size_t i = 0; i < ga.qaf_W.size(); ++i)
        CHECK(ga.qaf_W.data()[i] == gb.qaf_W.data()[i]);
    CHECK(ga.classifier_b == gb.classifier_b);
}

TEST_CASE("zero upstream gradient zeroes every tensor") {
    DetectorModel model = tiny_model(61, AggMethod::QafStatic, true);
    Rng rng(67);
    std::vector<FeatureSequence> ssl = tiny_ssl(rng);
    CodeIndices codes = tiny_codes(rng);
    ForwardResult fwd = detector_forward(ssl, codes, model);
    DetectorGrads grads = detector_backward(model, fwd.cache, 0.0);
    for (TensorRef& ref : grads.tensors(model))
        for (std::size_t j = 0; j < ref.size; ++j) CHECK(ref.data[j] == 0.0);
}

TEST_CASE("detector_backward rejects a cache from another model shape") {
    DetectorModel model = tiny_model(71, AggMethod::MeanPool, false);
    Rng rng(73);
    ForwardResult fwd = detector_forward(tiny_ssl(rng), tiny_codes(rng), model);

    Rng rng2(79);
    QuantizerStack other_stack = random_stack(rng2, kQ, kK, kDc + 1);
    DetectorShape shape;
    shape.num_ssl_layers = kL;
    shape.d_ssl = kDs;
    shape.d_codec = kDc + 1;
    shape.d_model = kM;
    shape.hidden = kH;
    DetectorModel other = build_detector(shape, other_stack, 81);
    CHECK_THROWS_AS(detector_backward(other, fwd.cache, 1.0), ShapeError);
}

TEST_CASE("detector_forward shape errors") {
    DetectorModel model = tiny_model(83, AggMethod::MeanPool, false);
    Rng rng(89);
    std::vector<FeatureSequence> ssl = tiny_ssl(rng);
    CodeIndices codes = tiny_codes(rng);

    std::vector<FeatureSequence> wrong_count(ssl.begin(), ssl.begin() + 1);
    CHECK_THROWS_AS(detector_forward(wrong_count, codes, model), ShapeError);

    CodeIndices short_codes = tiny_codes(rng, 2);
    CHECK_THROWS_AS(detector_forward(ssl, short_codes, model), ShapeError);

    CodeIndices bad_codes = codes;
    bad_codes.at(0, 0) = kK + 5;
    CHECK_THROWS_AS(detector_forward(ssl, bad_codes, model), ValueError);
}

TEST_CASE("detector save/load round-trips every tensor at stored precision") {
    DetectorModel model = tiny_model(97, AggMethod::QafStatic, true);
    const std::string path = "detector_roundtrip.qaf1";
    save_detector(model, path);
    DetectorModel loaded = load_detector(path);

    CHECK(loaded.method == model.method);
    CHECK(loaded.codec_trainable == model.codec_trainable);
    CHECK(loaded.has_layer_merge == model.has_layer_merge);
    CHECK(loaded.d_ssl == model.d_ssl);
    CHECK(loaded.d_codec == model.d_codec);
    CHECK(loaded.d_model == model.d_model);

    std::vector<TensorRef> a = model.tensors();
    std::vector<TensorRef> b = loaded.tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].size == b[i].size);
        for (std::size_t j = 0; j < a[i].size; ++j)
            CHECK(b[i].data[j] == static_cast<double>(static_cast<float>(a[i].data[j])));
    }

    // A second save must be byte-identical.
    const std::string path2 = "detector_roundtrip2.qaf1";
    save_detector(loaded, path2);
    std::FILE* f1 = std::fopen(path.c_str(), "rb");
    std::FILE* f2 = std::fopen(path2.c_str(), "rb");
    REQUIRE(f1);
    REQUIRE(f2);
    int c1, c2;
    do {
        c1 = std::fgetc(f1);
        c2 = std::fgetc(f2);
        CHECK(c1 == c2);
    } while (c1 != EOF && c2 != EOF);
    std::fclose(f1);
    std::fclose(f2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}
