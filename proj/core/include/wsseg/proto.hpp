#pragma once

#include "wsseg/seqdata.hpp"
#include "wsseg/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace wsseg {

// One global embedding per class, updated by exponential momentum.
class PrototypeBank {
public:
    PrototypeBank() = default;
    PrototypeBank(int num_classes, int dim, double momentum);

    int num_classes() const { return static_cast<int>(rows_.rows()); }
    int dim() const { return static_cast<int>(rows_.cols()); }
    double momentum() const { return momentum_; }

    // C x dim; uninitialized rows are zero and must not be used.
    const Matrix& prototypes() const { return rows_; }
    Vector prototype(int c) const { return rows_.row(c).transpose(); }
    bool initialized(int c) const { return initialized_[static_cast<std::size_t>(c)] != 0; }
    int initialized_count() const;

    // P_c = momentum * fresh + (1 - momentum) * P_c; the first update copies fresh.
    void update(int c, const Vector& fresh);

    // Restores a serialized bank exactly.
    static PrototypeBank restore(Matrix rows, std::vector<std::uint8_t> initialized, double momentum);
    const std::vector<std::uint8_t>& initialized_flags() const { return initialized_; }

    bool operator==(const PrototypeBank&) const = default;

private:
    Matrix rows_;
    std::vector<std::uint8_t> initialized_;
    double momentum_ = 0.9;
};

// CAM-weighted mean of the top-k embeddings (by class confidence) among the masked samples.
// embeddings: dim x T, confidences: length T, mask: length T.
std::optional<Vector> estimate_prototype(const Matrix& embeddings, std::span<const double> confidences,
                                         std::span<const std::uint8_t> mask, int top_k);

// Free-function form of PrototypeBank::update.
void update_bank(PrototypeBank& bank, int c, const Vector& fresh);

// Per-sequence estimation for every class present in the annotations, folded into the bank.
// The candidate mask for class c is the CAM pseudo-mask of c plus the timestamps labeled c.
// Returns the classes that were updated.
std::vector<int> update_prototypes_from_sequence(PrototypeBank& bank, const Matrix& embeddings, const Matrix& cams,
                                                 const TimestampAnnotations& ann, int top_k);

} // namespace wsseg
