#pragma once

#include "wsseg/types.hpp"

#include <vector>

namespace wsseg {

// Class activation maps: m = ReLU(W * Z), C x T, W being the multi-label head weights.
Matrix compute_cams(const Matrix& features, const Matrix& class_weights);

// Divides each row by its maximum when positive; zero rows stay zero.
Matrix normalize_cams(const Matrix& cams);

// Per-sample argmax over classes, lowest class index on ties.
std::vector<int> pseudo_mask(const Matrix& cams);

} // namespace wsseg
