#pragma once

#include "wsseg/seqdata.hpp"
#include "wsseg/types.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace wsseg {

struct PseudoLabels {
    Matrix distribution;              // C x T, every column sums to 1
    std::vector<std::uint8_t> hard;   // 1 where the column is one-hot

    Index length() const { return distribution.cols(); }
};

// Samples in [begin, end) assigned to class a when plan(t, a) >= plan(t, b), else to b.
// plan is T x C. Returns (N_a, N_b).
std::pair<Index, Index> count_assignments(const Matrix& plan, Index begin, Index end, int a, int b);

// (plan(t, a), plan(t, b)) rescaled to sum to 1; (0.5, 0.5) when both are zero.
std::pair<double, double> normalize_two_class(const Matrix& plan, Index t, int a, int b);

// Number of hard samples at each end of an interval of `length` interior samples:
// floor(scale * N_a) after the left timestamp and floor(scale * N_b) before the right one.
// Overlapping regions are cut at the point splitting the interval in the ratio N_a : N_b.
std::pair<Index, Index> hard_region_sizes(Index length, Index count_a, Index count_b, double scale);

// Hybrid hard/soft labels from a T x C transport plan and the timestamps.
// Outside the first/last timestamp the nearest timestamp's class is used as a hard label.
PseudoLabels generate_pseudo_labels(const Matrix& plan, const TimestampAnnotations& ann, double hard_scale);

} // namespace wsseg
