#include "wsseg/cam.hpp"

#include "wsseg/error.hpp"

namespace wsseg {

Matrix compute_cams(const Matrix& features, const Matrix& class_weights) {
    if (class_weights.cols() != features.rows()) {
        throw Error(ErrorKind::Structural, "CAM weights have " + std::to_string(class_weights.cols()) +
                                               " columns but the feature map has " + std::to_string(features.rows()) +
                                               " channels");
    }
    return (class_weights * features).cwiseMax(0.0);
}

Matrix normalize_cams(const Matrix& cams) {
    Matrix out = cams;
    for (Index c = 0; c < out.rows(); ++c) {
        const double peak = out.row(c).maxCoeff();
        if (peak > 0.0) out.row(c) /= peak;
    }
    return out;
}

std::vector<int> pseudo_mask(const Matrix& cams) {
    std::vector<int> mask(static_cast<std::size_t>(cams.cols()), 0);
    if (cams.rows() < 1) throw Error(ErrorKind::Structural, "pseudo mask needs at least one class");
    for (Index t = 0; t < cams.cols(); ++t) {
        Index best = 0;
        for (Index c = 1; c < cams.rows(); ++c) {
            if (cams(c, t) > cams(best, t)) best = c;
        }
        mask[static_cast<std::size_t>(t)] = static_cast<int>(best);
    }
    return mask;
}

} // namespace wsseg
