#include "wsseg/pseudo.hpp"

#include "wsseg/error.hpp"

#include <algorithm>
#include <cmath>

namespace wsseg {

std::pair<Index, Index> count_assignments(const Matrix& plan, Index begin, Index end, int a, int b) {
    if (a == b) throw Error(ErrorKind::Parameter, "count_assignments needs two distinct classes");
    if (begin < 0 || end > plan.rows() || begin > end) throw Error(ErrorKind::Range, "interval outside the plan");
    Index na = 0;
    for (Index t = begin; t < end; ++t) {
        if (plan(t, a) >= plan(t, b)) ++na;
    }
    return {na, (end - begin) - na};
}

std::pair<double, double> normalize_two_class(const Matrix& plan, Index t, int a, int b) {
    const double qa = plan(t, a);
    const double qb = plan(t, b);
    const double total = qa + qb;
    if (!(total > 0.0)) return {0.5, 0.5};
    return {qa / total, qb / total};
}

std::pair<Index, Index> hard_region_sizes(Index length, Index count_a, Index count_b, double scale) {
    Index ha = static_cast<Index>(std::floor(scale * static_cast<double>(count_a)));
    Index hb = static_cast<Index>(std::floor(scale * static_cast<double>(count_b)));
    if (ha + hb > length) {
        const Index total = count_a + count_b;
        const Index split = total > 0 ? static_cast<Index>(std::floor(static_cast<double>(length) *
                                                                      static_cast<double>(count_a) /
                                                                      static_cast<double>(total)))
                                      : length / 2;
        ha = std::min(ha, split);
        hb = std::min(hb, length - split);
    }
    return {ha, hb};
}

PseudoLabels generate_pseudo_labels(const Matrix& plan, const TimestampAnnotations& ann, double hard_scale) {
    if (hard_scale < 0.0 || hard_scale > 1.0) throw Error(ErrorKind::Parameter, "hard label scale must lie in [0, 1]");
    if (ann.empty()) throw Error(ErrorKind::Parameter, "pseudo labels need at least one timestamp");
    const Index length = plan.rows();
    const int num_classes = static_cast<int>(plan.cols());
    ann.validate(length, num_classes);

    PseudoLabels out;
    out.distribution = Matrix::Zero(num_classes, length);
    out.hard.assign(static_cast<std::size_t>(length), 0);
    auto set_hard = [&](Index t, int c) {
        out.distribution(c, t) = 1.0;
        out.hard[static_cast<std::size_t>(t)] = 1;
    };

    const auto& first = ann.entries.front();
    const auto& last = ann.entries.back();
    for (Index t = 0; t <= first.position; ++t) set_hard(t, first.label);
    for (Index t = last.position; t < length; ++t) set_hard(t, last.label);

    for (std::size_t n = 0; n + 1 < ann.entries.size(); ++n) {
        const auto& left = ann.entries[n];
        const auto& right = ann.entries[n + 1];
        set_hard(left.position, left.label);
        set_hard(right.position, right.label);
        const Index begin = left.position + 1;
        const Index end = right.position;
        if (left.label == right.label) {
            for (Index t = begin; t < end; ++t) set_hard(t, left.label);
            continue;
        }
        const auto [na, nb] = count_assignments(plan, begin, end, left.label, right.label);
        const auto [ha, hb] = hard_region_sizes(end - begin, na, nb, hard_scale);
        for (Index t = begin; t < end; ++t) {
            if (t < begin + ha) {
                set_hard(t, left.label);
            } else if (t >= end - hb) {
                set_hard(t, right.label);
            } else {
                const auto [qa, qb] = normalize_two_class(plan, t, left.label, right.label);
                out.distribution(left.label, t) = qa;
                out.distribution(right.label, t) = qb;
            }
        }
    }
    return out;
}

} // namespace wsseg
