#pragma once

#include "wsseg/proto.hpp"
#include "wsseg/seqdata.hpp"
#include "wsseg/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace wsseg {

// A single class, or an equal/weighted mixture of two class prototypes.
struct PositiveSpec {
    int class_a = 0;
    int class_b = -1;  // -1: single prototype
    double weight_a = 1.0;

    bool is_mixture() const { return class_b >= 0; }
};

struct ContrastAnchor {
    Index position = 0;
    PositiveSpec positive;
    std::vector<int> negatives;
};

struct ContrastBatch {
    std::vector<ContrastAnchor> anchors;

    bool empty() const { return anchors.empty(); }
};

struct MiningOptions {
    int anchor_count = 64;             // capped at T
    double hard_negative_fraction = 0.6;  // of the candidate negatives, most similar first
    double negative_keep_fraction = 0.5;  // random share of the hard pool
    double random_anchor_fraction = 0.5;  // the rest are the hardest positives
};

// embeddings: dim x T (unit columns); pseudo_mask: CAM argmax per sample;
// probs: C x T sample-level predictions used for the timestamp constraint.
ContrastBatch mine_pairs(const Matrix& embeddings, std::span<const int> pseudo_mask, const Matrix& probs,
                         const TimestampAnnotations& ann, const PrototypeBank& bank, std::uint64_t seed,
                         const MiningOptions& options = {});

struct ContrastLoss {
    double value = 0.0;
    Matrix grad_embeddings;  // dim x T; prototypes are constants here
};

// Mean over anchors of -log softmax of the positive among {positive} and the negatives.
ContrastLoss info_nce(const ContrastBatch& batch, const Matrix& embeddings, const PrototypeBank& bank, double temperature);

} // namespace wsseg
