#include "wsseg/contrast.hpp"

#include "wsseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace wsseg {

namespace {

std::size_t ceil_fraction(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12));
}

std::vector<int> argmax_columns(const Matrix& probs) {
    std::vector<int> out(static_cast<std::size_t>(probs.cols()));
    for (Index t = 0; t < probs.cols(); ++t) {
        Index best = 0;
        probs.col(t).maxCoeff(&best);
        out[static_cast<std::size_t>(t)] = static_cast<int>(best);
    }
    return out;
}

Vector positive_vector(const PositiveSpec& pos, const PrototypeBank& bank) {
    if (!pos.is_mixture()) return bank.prototype(pos.class_a);
    return pos.weight_a * bank.prototype(pos.class_a) + (1.0 - pos.weight_a) * bank.prototype(pos.class_b);
}

} // namespace

ContrastBatch mine_pairs(const Matrix& embeddings, std::span<const int> pseudo_mask, const Matrix& probs,
                         const TimestampAnnotations& ann, const PrototypeBank& bank, std::uint64_t seed,
                         const MiningOptions& options) {
    ContrastBatch batch;
    if (bank.initialized_count() < 2) return batch;

    const Index length = embeddings.cols();
    if (static_cast<Index>(pseudo_mask.size()) != length || probs.cols() != length) {
        throw Error(ErrorKind::Structural, "mining inputs disagree on sequence length");
    }
    if (embeddings.rows() != bank.dim()) throw Error(ErrorKind::Structural, "embedding dimension differs from bank");

    std::mt19937_64 rng(seed);
    const Matrix similarity = bank.prototypes() * embeddings;  // C x T

    auto negatives_for = [&](Index t, const PositiveSpec& pos) {
        std::vector<int> pool;
        for (int c = 0; c < bank.num_classes(); ++c) {
            if (!bank.initialized(c) || c == pos.class_a || c == pos.class_b) continue;
            pool.push_back(c);
        }
        std::stable_sort(pool.begin(), pool.end(), [&](int a, int b) { return similarity(a, t) > similarity(b, t); });
        pool.resize(ceil_fraction(options.hard_negative_fraction, pool.size()));
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(ceil_fraction(options.negative_keep_fraction, pool.size()));
        std::sort(pool.begin(), pool.end());
        return pool;
    };

    // Half the anchors are uniformly random, the rest are the samples least similar to their own prototype.
    std::vector<Index> candidates;
    for (Index t = 0; t < length; ++t) {
        const int c = pseudo_mask[static_cast<std::size_t>(t)];
        if (c >= 0 && c < bank.num_classes() && bank.initialized(c)) candidates.push_back(t);
    }
    const std::size_t n_anchor =
        std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(std::max(0, options.anchor_count)));
    const std::size_t n_random = std::min(n_anchor, ceil_fraction(options.random_anchor_fraction, n_anchor));

    std::shuffle(candidates.begin(), candidates.end(), rng);
    std::vector<Index> chosen(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n_random));
    std::vector<Index> rest(candidates.begin() + static_cast<std::ptrdiff_t>(n_random), candidates.end());
    auto own_similarity = [&](Index t) { return similarity(pseudo_mask[static_cast<std::size_t>(t)], t); };
    std::sort(rest.begin(), rest.end(), [&](Index a, Index b) {
        const double sa = own_similarity(a);
        const double sb = own_similarity(b);
        return sa != sb ? sa < sb : a < b;
    });
    const std::size_t n_hard = std::min(rest.size(), n_anchor - n_random);
    chosen.insert(chosen.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_hard));
    std::sort(chosen.begin(), chosen.end());

    for (Index t : chosen) {
        ContrastAnchor anchor;
        anchor.position = t;
        anchor.positive.class_a = pseudo_mask[static_cast<std::size_t>(t)];
        anchor.negatives = negatives_for(t, anchor.positive);
        batch.anchors.push_back(std::move(anchor));
    }

    // Between two timestamps, predictions must be one of the flanking classes.
    const auto predicted = argmax_columns(probs);
    for (std::size_t n = 0; n + 1 < ann.entries.size(); ++n) {
        const auto& left = ann.entries[n];
        const auto& right = ann.entries[n + 1];
        if (!bank.initialized(left.label) || !bank.initialized(right.label)) continue;
        for (Index t = left.position + 1; t < right.position; ++t) {
            const int p = predicted[static_cast<std::size_t>(t)];
            if (p == left.label || p == right.label || !bank.initialized(p)) continue;
            ContrastAnchor anchor;
            anchor.position = t;
            anchor.positive.class_a = left.label;
            if (right.label != left.label) {
                anchor.positive.class_b = right.label;
                anchor.positive.weight_a = 0.5;
            }
            anchor.negatives = {p};
            batch.anchors.push_back(std::move(anchor));
        }
    }
    return batch;
}

ContrastLoss info_nce(const ContrastBatch& batch, const Matrix& embeddings, const PrototypeBank& bank, double temperature) {
    if (!(temperature > 0.0)) throw Error(ErrorKind::Parameter, "contrast temperature must be positive");
    ContrastLoss result;
    result.grad_embeddings = Matrix::Zero(embeddings.rows(), embeddings.cols());
    if (batch.empty()) return result;

    const double scale = 1.0 / static_cast<double>(batch.anchors.size());
    std::vector<Vector> vecs;
    std::vector<double> logits;
    for (const auto& anchor : batch.anchors) {
        if (anchor.position < 0 || anchor.position >= embeddings.cols()) {
            throw Error(ErrorKind::Range, "anchor position outside the sequence");
        }
        const auto v = embeddings.col(anchor.position);
        vecs.clear();
        vecs.push_back(positive_vector(anchor.positive, bank));
        for (int c : anchor.negatives) vecs.push_back(bank.prototype(c));
        logits.resize(vecs.size());
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < vecs.size(); ++k) {
            logits[k] = v.dot(vecs[k]) / temperature;
            peak = std::max(peak, logits[k]);
        }
        double denom = 0.0;
        for (double l : logits) denom += std::exp(l - peak);
        const double lse = peak + std::log(denom);
        result.value += scale * (lse - logits[0]);

        Vector grad = -vecs[0];
        for (std::size_t k = 0; k < vecs.size(); ++k) grad += std::exp(logits[k] - lse) * vecs[k];
        result.grad_embeddings.col(anchor.position) += (scale / temperature) * grad;
    }
    return result;
}

} // namespace wsseg
