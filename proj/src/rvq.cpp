#include "qaf/rvq.hpp"

#include <cstdio>
#include <string>

#include "qaf/qaf1.hpp"
#include "qaf/rng.hpp"

namespace qaf {

void QuantizerStack::validate() const {
    if (levels.empty()) throw ValueError("QuantizerStack: needs at least one level");
    std::size_t k = levels[0].codewords.rows();
    std::size_t d = levels[0].codewords.cols();
    if (k == 0 || d == 0) throw ValueError("QuantizerStack: empty codebook");
    for (std::size_t q = 0; q < levels.size(); ++q) {
        const Matrix& cw = levels[q].codewords;
        if (cw.rows() != k || cw.cols() != d)
            throw ShapeError("QuantizerStack: level " + std::to_string(q + 1) +
                             " does not share K and D with level 1");
        require_finite(cw, "QuantizerStack level " + std::to_string(q + 1));
        if (zero_codeword) {
            for (std::size_t dd = 0; dd < d; ++dd) {
                if (cw(0, dd) != 0.0)
                    throw ValueError("QuantizerStack: zero_codeword set but row 0 is not zero");
            }
        }
    }
}

namespace {

// Squared Euclidean distance, accumulated in index order.
double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

double sq_norm(const double* a, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += a[i] * a[i];
    return s;
}

std::uint32_t nearest_codeword(const double* r, const Matrix& codewords) {
    std::uint32_t best = 0;
    double best_dist = sq_dist(r, codewords.row(0), codewords.cols());
    for (std::size_t k = 1; k < codewords.rows(); ++k) {
        double dist = sq_dist(r, codewords.row(k), codewords.cols());
        if (dist < best_dist) {  // strict: ties keep the lowest index
            best_dist = dist;
            best = static_cast<std::uint32_t>(k);
        }
    }
    return best;
}

}  // namespace

EncodeResult rvq_encode(const FeatureSequence& z, const QuantizerStack& stack) {
    stack.validate();
    if (z.rows() == 0) throw ValueError("rvq_encode: empty sequence");
    if (z.cols() != stack.dim())
        throw ShapeError("rvq_encode: input dim " + std::to_string(z.cols()) +
                         " vs stack dim " + std::to_string(stack.dim()));
    require_finite(z, "rvq_encode input");

    const std::size_t T = z.rows(), D = z.cols(), Q = stack.num_levels();
    EncodeResult out;
    out.indices = CodeIndices(T, Q);
    out.residual_norms = Matrix(T, Q + 1);

    std::vector<double> r(D);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t d = 0; d < D; ++d) r[d] = z(t, d);
        out.residual_norms(t, 0) = std::sqrt(sq_norm(r.data(), D));
        for (std::size_t q = 0; q < Q; ++q) {
            const Matrix& cw = stack.levels[q].codewords;
            std::uint32_t k = nearest_codeword(r.data(), cw);
            out.indices.at(t, q) = k;
            const double* e = cw.row(k);
            for (std::size_t d = 0; d < D; ++d) r[d] -= e[d];
            out.residual_norms(t, q + 1) = std::sqrt(sq_norm(r.data(), D));
        }
    }
    return out;
}

FeatureSequence rvq_decode(const CodeIndices& indices, const QuantizerStack& stack) {
    stack.validate();
    if (indices.levels != stack.num_levels())
        throw ShapeError("rvq_decode: indices have " + std::to_string(indices.levels) +
                         " levels, stack has " + std::to_string(stack.num_levels()));
    const std::size_t T = indices.frames, D = stack.dim(), K = stack.codebook_size();
    Matrix out(T, D);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t q = 0; q < indices.levels; ++q) {
            std::uint32_t k = indices.at(t, q);
            if (k >= K)
                throw ValueError("rvq_decode: index " + std::to_string(k) + " out of range at frame " +
                                 std::to_string(t) + ", level " + std::to_string(q + 1));
            const double* e = stack.levels[q].codewords.row(k);
            for (std::size_t d = 0; d < D; ++d) out(t, d) += e[d];
        }
    }
    return out;
}

FeatureSequence embed_level(const CodeIndices& indices, const QuantizerStack& stack, std::size_t q) {
    stack.validate();
    if (q < 1 || q > stack.num_levels())
        throw ValueError("embed_level: level " + std::to_string(q) + " out of range [1, " +
                         std::to_string(stack.num_levels()) + "]");
    if (indices.levels != stack.num_levels())
        throw ShapeError("embed_level: indices do not match stack");
    const std::size_t T = indices.frames, D = stack.dim(), K = stack.codebook_size();
    const Matrix& cw = stack.levels[q - 1].codewords;
    Matrix out(T, D);
    for (std::size_t t = 0; t < T; ++t) {
        std::uint32_t k = indices.at(t, q - 1);
        if (k >= K)
            throw ValueError("embed_level: index " + std::to_string(k) + " out of range at frame " +
                             std::to_string(t));
        for (std::size_t d = 0; d < D; ++d) out(t, d) = cw(k, d);
    }
    return out;
}

namespace {

// Lloyd k-means over `points` with optional pinned zero centroid at row 0.
// Returns the fitted codebook; per-iteration objectives appended to trace.
Matrix lloyd_kmeans(const std::vector<std::vector<double>>& points, std::size_t d, std::size_t k,
                    std::size_t iters, Rng& rng, bool pin_zero_row, std::vector<double>* trace) {
    const std::size_t n = points.size();
    const std::size_t first_free = pin_zero_row ? 1 : 0;

    // Distinct points, first-occurrence order.
    std::vector<std::size_t> distinct;
    for (std::size_t i = 0; i < n; ++i) {
        bool seen = false;
        for (std::size_t j : distinct) {
            if (points[i] == points[j]) {
                seen = true;
                break;
            }
        }
        if (!seen) distinct.push_back(i);
        if (distinct.size() >= k) break;  // enough for any init
    }

    std::size_t n_free = k - first_free;
    if (distinct.size() < n_free) {
        std::fprintf(stderr,
                     "[qaf] warning: only %zu distinct frames for %zu centroids; padding duplicates\n",
                     distinct.size(), n_free);
    }

    // Init: distinct frames in seeded random order, padded with duplicates.
    std::vector<std::size_t> pool = distinct;
    rng.shuffle(pool);
    Matrix centroids(k, d);
    for (std::size_t c = first_free; c < k; ++c) {
        const auto& p = points[pool[(c - first_free) % pool.size()]];
        for (std::size_t j = 0; j < d; ++j) centroids(c, j) = p[j];
    }

    std::vector<std::uint32_t> assign(n, 0);
    std::vector<double> dist_to_own(n, 0.0);
    for (std::size_t it = 0; it < iters; ++it) {
        // Assignment + objective.
        double objective = 0.0;
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t best = nearest_codeword(points[i].data(), centroids);
            assign[i] = best;
            dist_to_own[i] = sq_dist(points[i].data(), centroids.row(best), d);
            objective += dist_to_own[i];
            counts[best]++;
        }
        if (trace) trace->push_back(objective);

        // Update free centroids to cluster means.
        Matrix sums(k, d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) sums(assign[i], j) += points[i][j];
        }
        for (std::size_t c = first_free; c < k; ++c) {
            if (counts[c] > 0) {
                for (std::size_t j = 0; j < d; ++j)
                    centroids(c, j) = sums(c, j) / static_cast<double>(counts[c]);
            }
        }

        // Reseed empty free clusters at the farthest point (lowest index on ties).
        std::vector<bool> taken(n, false);
        for (std::size_t c = first_free; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far_idx = n;
            double far_dist = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i] && dist_to_own[i] > far_dist) {
                    far_dist = dist_to_own[i];
                    far_idx = i;
                }
            }
            if (far_idx == n) break;
            taken[far_idx] = true;
            for (std::size_t j = 0; j < d; ++j) centroids(c, j) = points[far_idx][j];
        }
    }
    return centroids;
}

}  // namespace

QuantizerStack train_codebooks(const std::vector<FeatureSequence>& data, std::size_t num_levels,
                               std::size_t codebook_size, std::size_t iters, std::uint64_t seed,
                               bool include_zero_codeword,
                               std::vector<std::vector<double>>* objective_trace) {
    if (num_levels < 1) throw ValueError("train_codebooks: need at least one level");
    if (codebook_size < 1) throw ValueError("train_codebooks: need at least one codeword");
    if (iters < 1) throw ValueError("train_codebooks: iters must be >= 1");

    // Pool frames across sequences.
    std::size_t d = 0;
    std::vector<std::vector<double>> residuals;
    for (const auto& seq : data) {
        if (seq.rows() == 0) continue;
        if (d == 0) d = seq.cols();
        if (seq.cols() != d) throw ShapeError("train_codebooks: sequences disagree on dim");
        require_finite(seq, "train_codebooks input");
        for (std::size_t t = 0; t < seq.rows(); ++t) {
            residuals.emplace_back(seq.row(t), seq.row(t) + d);
        }
    }
    if (residuals.size() < codebook_size)
        throw ValueError("train_codebooks: pooled frame count " + std::to_string(residuals.size()) +
                         " < K = " + std::to_string(codebook_size));

    QuantizerStack stack;
    stack.zero_codeword = include_zero_codeword;
    if (objective_trace) objective_trace->assign(num_levels, {});

    for (std::size_t q = 0; q < num_levels; ++q) {
        Rng rng(derive_seed(seed, q));
        std::vector<double>* trace = objective_trace ? &(*objective_trace)[q] : nullptr;
        Matrix cw = lloyd_kmeans(residuals, d, codebook_size, iters, rng, include_zero_codeword, trace);
        stack.levels.push_back(Codebook{cw});
        // Residual pass with the frozen level.
        for (auto& r : residuals) {
            std::uint32_t k = nearest_codeword(r.data(), cw);
            const double* e = cw.row(k);
            for (std::size_t j = 0; j < d; ++j) r[j] -= e[j];
        }
    }
    stack.validate();
    return stack;
}

std::vector<double> reconstruction_curve(const FeatureSequence& z, const QuantizerStack& stack) {
    EncodeResult enc = rvq_encode(z, stack);
    const std::size_t T = z.rows(), Q = stack.num_levels();
    std::vector<double> curve(Q + 1, 0.0);
    for (std::size_t q = 0; q <= Q; ++q) {
        double s = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            double norm = enc.residual_norms(t, q);
            s += norm * norm;
        }
        curve[q] = s / static_cast<double>(T);
    }
    return curve;
}

void save_stack(const QuantizerStack& stack, const std::string& path) {
    stack.validate();
    std::vector<TensorRecord> records;
    records.push_back(TensorRecord::from_u32(
        "shape", {static_cast<std::uint32_t>(stack.num_levels()),
                  static_cast<std::uint32_t>(stack.codebook_size()),
                  static_cast<std::uint32_t>(stack.dim()),
                  stack.zero_codeword ? 1u : 0u}));
    char name[32];
    for (std::size_t q = 0; q < stack.num_levels(); ++q) {
        std::snprintf(name, sizeof(name), "level%02zu", q);
        records.push_back(TensorRecord::from_matrix(name, stack.levels[q].codewords));
    }
    write_container(path, records);
}

QuantizerStack load_stack(const std::string& path) {
    RecordMap map(read_container(path));
    const TensorRecord& shape = map.get("shape");
    if (shape.dtype != Dtype::U32 || shape.element_count() != 4)
        throw FormatError(path + ": malformed stack shape record");
    std::uint32_t q_levels = shape.u32[0], k = shape.u32[1], d = shape.u32[2], zero = shape.u32[3];
    QuantizerStack stack;
    stack.zero_codeword = zero != 0;
    char name[32];
    for (std::uint32_t q = 0; q < q_levels; ++q) {
        std::snprintf(name, sizeof(name), "level%02u", q);
        Matrix cw = map.get(name).to_matrix();
        if (cw.rows() != k || cw.cols() != d)
            throw FormatError(path + ": level record shape mismatch against header");
        stack.levels.push_back(Codebook{std::move(cw)});
    }
    stack.validate();
    return stack;
}

}  // namespace qaf
