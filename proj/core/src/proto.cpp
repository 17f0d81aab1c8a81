#include "wsseg/proto.hpp"

#include "wsseg/cam.hpp"
#include "wsseg/error.hpp"

#include <algorithm>
#include <numeric>

namespace wsseg {

PrototypeBank::PrototypeBank(int num_classes, int dim, double momentum)
    : rows_(Matrix::Zero(num_classes, dim)),
      initialized_(static_cast<std::size_t>(num_classes), 0),
      momentum_(momentum) {
    if (momentum < 0.0 || momentum > 1.0) {
        throw Error(ErrorKind::Parameter, "prototype momentum must lie in [0, 1]");
    }
}

int PrototypeBank::initialized_count() const {
    return static_cast<int>(std::count(initialized_.begin(), initialized_.end(), std::uint8_t{1}));
}

void PrototypeBank::update(int c, const Vector& fresh) {
    if (c < 0 || c >= num_classes()) {
        throw Error(ErrorKind::Range, "prototype class " + std::to_string(c) + " out of range");
    }
    if (fresh.size() != dim()) throw Error(ErrorKind::Structural, "prototype dimension mismatch");
    auto& flag = initialized_[static_cast<std::size_t>(c)];
    if (!flag) {
        rows_.row(c) = fresh.transpose();
        flag = 1;
        return;
    }
    rows_.row(c) = momentum_ * fresh.transpose() + (1.0 - momentum_) * rows_.row(c);
}

PrototypeBank PrototypeBank::restore(Matrix rows, std::vector<std::uint8_t> initialized, double momentum) {
    if (static_cast<Index>(initialized.size()) != rows.rows()) {
        throw Error(ErrorKind::Structural, "prototype flags do not match bank rows");
    }
    PrototypeBank bank(static_cast<int>(rows.rows()), static_cast<int>(rows.cols()), momentum);
    bank.rows_ = std::move(rows);
    bank.initialized_ = std::move(initialized);
    return bank;
}

void update_bank(PrototypeBank& bank, int c, const Vector& fresh) { bank.update(c, fresh); }

std::optional<Vector> estimate_prototype(const Matrix& embeddings, std::span<const double> confidences,
                                         std::span<const std::uint8_t> mask, int top_k) {
    if (top_k < 1) throw Error(ErrorKind::Parameter, "top_k must be >= 1");
    const auto length = static_cast<std::size_t>(embeddings.cols());
    if (confidences.size() != length || mask.size() != length) {
        throw Error(ErrorKind::Structural, "confidence/mask length differs from embeddings");
    }
    std::vector<Index> candidates;
    for (std::size_t t = 0; t < length; ++t) {
        if (mask[t]) candidates.push_back(static_cast<Index>(t));
    }
    if (candidates.empty()) return std::nullopt;
    const auto keep = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(top_k));
    // Highest confidence first; earlier samples win ties.
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [&](Index a, Index b) {
                          const double ca = confidences[static_cast<std::size_t>(a)];
                          const double cb = confidences[static_cast<std::size_t>(b)];
                          return ca != cb ? ca > cb : a < b;
                      });
    Vector acc = Vector::Zero(embeddings.rows());
    double total = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
        const Index t = candidates[i];
        const double w = confidences[static_cast<std::size_t>(t)];
        acc += w * embeddings.col(t);
        total += w;
    }
    if (!(total > 0.0)) return std::nullopt;
    return Vector(acc / total);
}

std::vector<int> update_prototypes_from_sequence(PrototypeBank& bank, const Matrix& embeddings, const Matrix& cams,
                                                 const TimestampAnnotations& ann, int top_k) {
    const int num_classes = bank.num_classes();
    if (cams.rows() != num_classes || cams.cols() != embeddings.cols()) {
        throw Error(ErrorKind::Structural, "CAM shape does not match the bank and embeddings");
    }
    const auto present = sequence_multilabel(ann, num_classes);
    const auto mask_classes = pseudo_mask(cams);
    const auto length = static_cast<std::size_t>(cams.cols());

    std::vector<int> updated;
    std::vector<std::uint8_t> mask(length);
    std::vector<double> conf(length);
    for (int c = 0; c < num_classes; ++c) {
        if (!present[c]) continue;
        for (std::size_t t = 0; t < length; ++t) {
            mask[t] = mask_classes[t] == c ? 1 : 0;
            conf[t] = cams(c, static_cast<Index>(t));
        }
        for (const auto& e : ann.entries) {
            if (e.label == c) mask[static_cast<std::size_t>(e.position)] = 1;
        }
        if (auto p = estimate_prototype(embeddings, conf, mask, top_k)) {
            bank.update(c, *p);
            updated.push_back(c);
        }
    }
    return updated;
}

} // namespace wsseg
