#include "qaf/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "qaf/qaf1.hpp"
#include "qaf/rng.hpp"

namespace qaf {

void SynthConfig::validate() const {
    if (num_levels < 1) throw ConfigError("q must be >= 1");
    if (codebook_size < 1) throw ConfigError("k must be >= 1");
    if (artifact_enabled && (codebook_size < 4 || codebook_size % 2 != 0))
        throw ConfigError("k must be even and >= 4 to split into disjoint halves");
    if (d_codec < 1 || d_ssl < 1) throw ConfigError("d_codec and d_ssl must be >= 1");
    if (num_ssl_layers < 1) throw ConfigError("ssl_layers must be >= 1");
    if (t_min < 1 || t_min > t_max) throw ConfigError("need 1 <= t_min <= t_max");
    if (train_per_class < 1 || dev_per_class < 1 || eval_per_class < 1)
        throw ConfigError("trial counts must be >= 1");
    if (artifact_level < 1 || artifact_level > num_levels)
        throw ConfigError("artifact_level must be in [1, q]");
    if (!(artifact_strength > 0.0)) throw ConfigError("artifact_strength must be > 0");
    if (noise < 0.0) throw ConfigError("noise must be >= 0");
    if (ssl_smoothing < 1) throw ConfigError("ssl_smoothing must be >= 1");
}

namespace {

constexpr std::uint64_t kStackStream = 10;
constexpr std::uint64_t kSplitStream[3] = {21, 22, 23};

double level_scale(std::size_t q /*0-based*/) { return std::pow(0.5, static_cast<double>(q)); }

double row_dist(const Matrix& cw, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < cw.cols(); ++j) {
        double diff = cw(a, j) - cw(b, j);
        s += diff * diff;
    }
    return std::sqrt(s);
}

// Fills all K rows with codewords of exact norm scale*sqrt(D). For K <= D the
// rows form a random orthogonal frame (pairwise distance sqrt(2)*radius);
// otherwise rejection sampling keeps a minimum separation. Well-separated
// codewords keep the greedy residual encoding recoverable against the energy
// of later levels.
void level_codewords(Matrix& cw, double scale, Rng& rng) {
    const std::size_t k = cw.rows(), d = cw.cols();
    const double radius = scale * std::sqrt(static_cast<double>(d));
    if (k <= d) {
        for (std::size_t r = 0; r < k; ++r) {
            // Gram-Schmidt against the rows already placed.
            double norm = 0.0;
            while (true) {
                for (std::size_t j = 0; j < d; ++j) cw(r, j) = rng.normal();
                for (std::size_t p = 0; p < r; ++p) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < d; ++j) dot += cw(r, j) * cw(p, j);
                    dot /= radius * radius;
                    for (std::size_t j = 0; j < d; ++j) cw(r, j) -= dot * cw(p, j);
                }
                norm = 0.0;
                for (std::size_t j = 0; j < d; ++j) norm += cw(r, j) * cw(r, j);
                norm = std::sqrt(norm);
                if (norm > 1e-6) break;  // resample near-dependent draws
            }
            for (std::size_t j = 0; j < d; ++j) cw(r, j) *= radius / norm;
        }
        return;
    }
    const double min_sep = radius;
    for (std::size_t r = 0; r < k; ++r) {
        for (int attempt = 0; attempt < 256; ++attempt) {
            double norm = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                cw(r, j) = rng.normal();
                norm += cw(r, j) * cw(r, j);
            }
            norm = std::sqrt(norm);
            for (std::size_t j = 0; j < d; ++j) cw(r, j) *= radius / norm;
            bool ok = true;
            for (std::size_t p = 0; p < r && ok; ++p) ok = row_dist(cw, r, p) >= min_sep;
            if (ok) break;  // dense codebooks keep the last draw
        }
    }
}

// Centers a half to zero mean, rescales it to a fixed second moment and adds
// `shift` (zero for the bona-fide half). This pins both class-conditional
// frame moments: the means differ by exactly the shift and the variances
// match, so the class cue is carried by codeword identity rather than by
// bulk statistics.
void condition_half(Matrix& cw, std::size_t row0, std::size_t count, double scale,
                    const std::vector<double>& shift) {
    const std::size_t d = cw.cols();
    std::vector<double> mean(d, 0.0);
    for (std::size_t r = 0; r < count; ++r)
        for (std::size_t j = 0; j < d; ++j) mean[j] += cw(row0 + r, j);
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            cw(row0 + r, j) -= mean[j];
            sq += cw(row0 + r, j) * cw(row0 + r, j);
        }
    }
    double target = scale * scale * static_cast<double>(d * count);
    double gain = sq > 0.0 ? std::sqrt(target / sq) : 1.0;
    for (std::size_t r = 0; r < count; ++r)
        for (std::size_t j = 0; j < d; ++j) cw(row0 + r, j) = cw(row0 + r, j) * gain + shift[j];
}

double min_cross_half_dist(const Matrix& cw) {
    const std::size_t half = cw.rows() / 2;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < half; ++a)
        for (std::size_t b = half; b < cw.rows(); ++b) best = std::min(best, row_dist(cw, a, b));
    return best;
}

QuantizerStack sample_truth_stack(const SynthConfig& cfg, Rng& rng,
                                  std::vector<double>& artifact_shift) {
    QuantizerStack stack;
    for (std::size_t q = 0; q < cfg.num_levels; ++q) {
        Matrix cw(cfg.codebook_size, cfg.d_codec);
        double scale = level_scale(q);
        if (cfg.artifact_enabled && q + 1 == cfg.artifact_level) {
            // Random unit direction for the spoof-half displacement.
            std::vector<double> u(cfg.d_codec);
            double norm = 0.0;
            for (double& v : u) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            artifact_shift.assign(cfg.d_codec, 0.0);
            for (std::size_t j = 0; j < cfg.d_codec; ++j)
                artifact_shift[j] = cfg.artifact_strength * scale * u[j] / norm;

            const std::size_t half = cfg.codebook_size / 2;
            const std::vector<double> no_shift(cfg.d_codec, 0.0);
            const double radius = scale * std::sqrt(static_cast<double>(cfg.d_codec));
            for (int attempt = 0; attempt < 64; ++attempt) {
                level_codewords(cw, scale, rng);
                condition_half(cw, 0, half, scale, no_shift);
                condition_half(cw, half, half, scale, artifact_shift);
                // The moment normalization can squeeze codewords from opposite
                // halves together; redraw until the halves keep a margin, so
                // sub-codebook membership survives re-encoding.
                if (min_cross_half_dist(cw) >= 0.9 * radius) break;
            }
        } else {
            level_codewords(cw, scale, rng);
        }
        stack.levels.push_back(Codebook{std::move(cw)});
    }
    return stack;
}

Matrix smooth_rows(const Matrix& raw, std::size_t window) {
    Matrix out(raw.rows(), raw.cols());
    for (std::size_t t = 0; t < raw.rows(); ++t) {
        std::size_t t0 = t + 1 >= window ? t + 1 - window : 0;
        double inv = 1.0 / static_cast<double>(t - t0 + 1);
        for (std::size_t d = 0; d < raw.cols(); ++d) {
            double acc = 0.0;
            for (std::size_t s = t0; s <= t; ++s) acc += raw(s, d);
            out(t, d) = acc * inv;
        }
    }
    return out;
}

Trial make_trial(const SynthConfig& cfg, const QuantizerStack& stack,
                 const std::vector<Matrix>& ssl_maps, int label, Rng& rng) {
    const std::size_t T = cfg.t_min + rng.uniform_index(cfg.t_max - cfg.t_min + 1);
    const std::size_t K = cfg.codebook_size, half = K / 2;

    CodeIndices codes(T, cfg.num_levels);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t q = 0; q < cfg.num_levels; ++q) {
            std::uint32_t k;
            if (cfg.artifact_enabled && q + 1 == cfg.artifact_level) {
                k = static_cast<std::uint32_t>(rng.uniform_index(half));
                if (label == 0) k += static_cast<std::uint32_t>(half);  // spoof sub-codebook
            } else {
                k = static_cast<std::uint32_t>(rng.uniform_index(K));
            }
            codes.at(t, q) = k;
        }
    }

    Trial trial;
    trial.label = label;
    trial.codec_latent = rvq_decode(codes, stack);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < cfg.d_codec; ++d)
            trial.codec_latent(t, d) += rng.normal(0.0, cfg.noise);

    trial.ssl_layers.reserve(cfg.num_ssl_layers);
    for (std::size_t l = 0; l < cfg.num_ssl_layers; ++l) {
        Matrix raw(T, cfg.d_ssl);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < cfg.d_ssl; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < cfg.d_codec; ++i)
                    acc += trial.codec_latent(t, i) * ssl_maps[l](i, j);
                raw(t, j) = acc;
            }
        }
        Matrix layer = smooth_rows(raw, cfg.ssl_smoothing);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < cfg.d_ssl; ++j) layer(t, j) += rng.normal(0.0, cfg.noise);
        trial.ssl_layers.push_back(std::move(layer));
    }
    return trial;
}

std::vector<Trial> make_split(const SynthConfig& cfg, const QuantizerStack& stack,
                              const std::vector<Matrix>& ssl_maps, std::size_t per_class,
                              std::uint64_t stream) {
    Rng rng(derive_seed(cfg.seed, stream));
    std::vector<Trial> trials;
    trials.reserve(2 * per_class);
    for (std::size_t i = 0; i < per_class; ++i) {
        trials.push_back(make_trial(cfg, stack, ssl_maps, 1, rng));
        trials.push_back(make_trial(cfg, stack, ssl_maps, 0, rng));
    }
    return trials;
}

}  // namespace

Dataset gen_dataset(const SynthConfig& cfg) {
    cfg.validate();

    Rng stack_rng(derive_seed(cfg.seed, kStackStream));
    std::vector<double> artifact_shift;
    Dataset ds;
    ds.truth_stack = sample_truth_stack(cfg, stack_rng, artifact_shift);

    // Dataset-level SSL projections, shared across splits.
    std::vector<Matrix> ssl_maps;
    double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_codec));
    for (std::size_t l = 0; l < cfg.num_ssl_layers; ++l) {
        Matrix m(cfg.d_codec, cfg.d_ssl);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = stack_rng.normal(0.0, map_scale);
        ssl_maps.push_back(std::move(m));
    }

    ds.train = make_split(cfg, ds.truth_stack, ssl_maps, cfg.train_per_class, kSplitStream[0]);
    ds.dev = make_split(cfg, ds.truth_stack, ssl_maps, cfg.dev_per_class, kSplitStream[1]);
    ds.eval = make_split(cfg, ds.truth_stack, ssl_maps, cfg.eval_per_class, kSplitStream[2]);
    return ds;
}

void write_trials(const std::vector<Trial>& trials, const std::string& path) {
    std::uint32_t n = static_cast<std::uint32_t>(trials.size());
    std::uint32_t L = 0, d_ssl = 0, d_codec = 0;
    if (n > 0) {
        L = static_cast<std::uint32_t>(trials[0].ssl_layers.size());
        d_ssl = L > 0 ? static_cast<std::uint32_t>(trials[0].ssl_layers[0].cols()) : 0;
        d_codec = static_cast<std::uint32_t>(trials[0].codec_latent.cols());
    }

    std::vector<TensorRecord> records;
    records.push_back(TensorRecord::from_u32("meta", {n, L, d_ssl, d_codec}));
    std::vector<std::uint32_t> labels;
    labels.reserve(n);
    for (const auto& t : trials) labels.push_back(static_cast<std::uint32_t>(t.label));
    records.push_back(TensorRecord::from_u32("labels", labels));

    char name[32];
    for (std::uint32_t i = 0; i < n; ++i) {
        const Trial& trial = trials[i];
        if (trial.ssl_layers.size() != L)
            throw ShapeError("write_trials: trial " + std::to_string(i) + " layer count differs");
        std::uint32_t T = static_cast<std::uint32_t>(trial.codec_latent.rows());

        TensorRecord ssl;
        std::snprintf(name, sizeof(name), "t%05u.ssl", i);
        ssl.name = name;
        ssl.dtype = Dtype::F32;
        ssl.dims = {L, T, d_ssl};
        ssl.f32.reserve(static_cast<std::size_t>(L) * T * d_ssl);
        for (const auto& layer : trial.ssl_layers) {
            if (layer.rows() != T || layer.cols() != d_ssl)
                throw ShapeError("write_trials: trial " + std::to_string(i) + " layer shape differs");
            for (std::size_t j = 0; j < layer.size(); ++j)
                ssl.f32.push_back(static_cast<float>(layer.data()[j]));
        }
        records.push_back(std::move(ssl));

        std::snprintf(name, sizeof(name), "t%05u.lat", i);
        if (trial.codec_latent.cols() != d_codec)
            throw ShapeError("write_trials: trial " + std::to_string(i) + " latent dim differs");
        records.push_back(TensorRecord::from_matrix(name, trial.codec_latent));
    }
    write_container(path, records);
}

std::vector<Trial> read_trials(const std::string& path) {
    RecordMap map(read_container(path));
    const TensorRecord& meta = map.get("meta");
    if (meta.dtype != Dtype::U32 || meta.element_count() != 4)
        throw FormatError(path + ": malformed trials meta record");
    const std::uint32_t n = meta.u32[0], L = meta.u32[1], d_ssl = meta.u32[2], d_codec = meta.u32[3];

    const TensorRecord& labels = map.get("labels");
    if (labels.dtype != Dtype::U32 || labels.element_count() != n)
        throw FormatError(path + ": labels record does not match trial count");

    std::vector<Trial> trials;
    trials.reserve(n);
    char name[32];
    for (std::uint32_t i = 0; i < n; ++i) {
        if (labels.u32[i] > 1) throw FormatError(path + ": label out of range in trial " + std::to_string(i));
        Trial trial;
        trial.label = static_cast<int>(labels.u32[i]);

        std::snprintf(name, sizeof(name), "t%05u.ssl", i);
        const TensorRecord& ssl = map.get(name);
        if (ssl.dtype != Dtype::F32 || ssl.dims.size() != 3 || ssl.dims[0] != L ||
            ssl.dims[2] != d_ssl || ssl.dims[1] == 0)
            throw FormatError(path + ": trial " + std::to_string(i) +
                              " SSL record shape mismatch against header");
        std::uint32_t T = ssl.dims[1];
        std::size_t offset = 0;
        for (std::uint32_t l = 0; l < L; ++l) {
            Matrix layer(T, d_ssl);
            for (std::size_t j = 0; j < layer.size(); ++j)
                layer.data()[j] = static_cast<double>(ssl.f32[offset + j]);
            offset += layer.size();
            trial.ssl_layers.push_back(std::move(layer));
        }

        std::snprintf(name, sizeof(name), "t%05u.lat", i);
        const TensorRecord& lat = map.get(name);
        if (lat.dtype != Dtype::F32 || lat.dims.size() != 2 || lat.dims[0] != T ||
            lat.dims[1] != d_codec)
            throw FormatError(path + ": trial " + std::to_string(i) +
                              " latent record shape mismatch against header");
        trial.codec_latent = lat.to_matrix();
        trials.push_back(std::move(trial));
    }
    return trials;
}

void write_synth_manifest(const SynthConfig& cfg, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError(path + ": cannot open for writing");
    char buf[96];
    f << "seed=" << cfg.seed << "\n";
    f << "q=" << cfg.num_levels << "\n";
    f << "k=" << cfg.codebook_size << "\n";
    f << "d_codec=" << cfg.d_codec << "\n";
    f << "d_ssl=" << cfg.d_ssl << "\n";
    f << "ssl_layers=" << cfg.num_ssl_layers << "\n";
    f << "t_min=" << cfg.t_min << "\n";
    f << "t_max=" << cfg.t_max << "\n";
    f << "train_per_class=" << cfg.train_per_class << "\n";
    f << "dev_per_class=" << cfg.dev_per_class << "\n";
    f << "eval_per_class=" << cfg.eval_per_class << "\n";
    f << "artifact_level=" << cfg.artifact_level << "\n";
    std::snprintf(buf, sizeof(buf), "artifact_strength=%.17g\n", cfg.artifact_strength);
    f << buf;
    f << "ssl_smoothing=" << cfg.ssl_smoothing << "\n";
    std::snprintf(buf, sizeof(buf), "noise=%.17g\n", cfg.noise);
    f << buf;
    f << "artifact_enabled=" << (cfg.artifact_enabled ? 1 : 0) << "\n";
    if (!f) throw FormatError(path + ": write failed");
}

}  // namespace qaf
