#pragma once

// Hand-rolled generators and independent oracles shared by the unit and acceptance suites.

#include "wsseg/metrics.hpp"
#include "wsseg/seqdata.hpp"
#include "wsseg/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace wsseg::tk {

using Rng = std::mt19937_64;

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m;
}

inline Matrix unit_columns(Rng& rng, Index rows, Index cols) {
    Matrix m = random_matrix(rng, rows, cols);
    for (Index j = 0; j < cols; ++j) m.col(j).normalize();
    return m;
}

// Column-stochastic C x T matrix bounded away from zero.
inline Matrix random_probs(Rng& rng, Index classes, Index length) {
    Matrix m(classes, length);
    for (Index j = 0; j < length; ++j) {
        for (Index i = 0; i < classes; ++i) m(i, j) = uniform(rng, 0.05, 1.0);
        m.col(j) /= m.col(j).sum();
    }
    return m;
}

// Runs of random length; with distinct_runs the class always changes between runs.
inline std::vector<int> random_labels(Rng& rng, Index length, int classes, int max_run, bool distinct_runs = false) {
    std::vector<int> out;
    int prev = -1;
    while (static_cast<Index>(out.size()) < length) {
        int c = uniform_int(rng, 0, classes - 1);
        if (distinct_runs && classes > 1)
            while (c == prev) c = uniform_int(rng, 0, classes - 1);
        const int run = uniform_int(rng, 1, max_run);
        for (int k = 0; k < run && static_cast<Index>(out.size()) < length; ++k) out.push_back(c);
        prev = c;
    }
    return out;
}

// Strictly increasing positions; neighbouring labels differ.
inline TimestampAnnotations random_annotations(Rng& rng, Index length, int classes, int count) {
    std::vector<Index> pos(static_cast<std::size_t>(length));
    for (Index t = 0; t < length; ++t) pos[static_cast<std::size_t>(t)] = t;
    std::shuffle(pos.begin(), pos.end(), rng);
    pos.resize(static_cast<std::size_t>(std::min<Index>(count, length)));
    std::sort(pos.begin(), pos.end());
    TimestampAnnotations ann;
    int prev = -1;
    for (Index p : pos) {
        int c = uniform_int(rng, 0, classes - 1);
        while (classes > 1 && c == prev) c = uniform_int(rng, 0, classes - 1);
        ann.entries.push_back({p, c});
        prev = c;
    }
    return ann;
}

// Max over entries of |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
    }
    return worst;
}

// Central differences of f over every entry of x.
inline std::vector<double> central_differences(Matrix& x, const std::function<double()>& f, double step = 1e-4) {
    std::vector<double> out;
    for (Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + step;
        const double up = f();
        x.data()[i] = keep - step;
        const double down = f();
        x.data()[i] = keep;
        out.push_back((up - down) / (2.0 * step));
    }
    return out;
}

inline std::vector<double> flatten(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

// ---- brute-force metric oracles (plain counting over samples) ----

struct BfCounts {
    long tp = 0, fp = 0, fn = 0;
};

inline BfCounts bf_counts(const std::vector<int>& pred, const std::vector<int>& truth, int c) {
    BfCounts k;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        k.tp += pred[t] == c && truth[t] == c;
        k.fp += pred[t] == c && truth[t] != c;
        k.fn += pred[t] != c && truth[t] == c;
    }
    return k;
}

inline double bf_f_m(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < classes; ++c) {
        const BfCounts k = bf_counts(pred, truth, c);
        if (k.tp + k.fn == 0) continue;
        const double p = k.tp + k.fp ? static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fp) : 0.0;
        const double r = static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fn);
        sum += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        ++n;
    }
    return n ? sum / n : 0.0;
}

inline double bf_ji(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < classes; ++c) {
        const BfCounts k = bf_counts(pred, truth, c);
        const long uni = k.tp + k.fp + k.fn;
        if (uni == 0) continue;
        sum += static_cast<double>(k.tp) / static_cast<double>(uni);
        ++n;
    }
    return n ? sum / n : 0.0;
}

struct BfSeg {
    int cls;
    long start, end;  // inclusive
};

inline std::vector<BfSeg> bf_segments(const std::vector<int>& labels) {
    std::vector<BfSeg> out;
    long t = 0;
    const long n = static_cast<long>(labels.size());
    while (t < n) {
        long e = t;
        while (e + 1 < n && labels[static_cast<std::size_t>(e + 1)] == labels[static_cast<std::size_t>(t)]) ++e;
        out.push_back({labels[static_cast<std::size_t>(t)], t, e});
        t = e + 1;
    }
    return out;
}

inline long bf_count_in(long lo, long hi, const std::function<bool(long)>& pred) {
    long k = 0;
    for (long t = lo; t <= hi; ++t) k += pred(t);
    return k;
}

// Index of the same-class prediction sharing most samples with s (earliest on ties), -1 if none.
inline int bf_match(const BfSeg& s, const std::vector<BfSeg>& preds, long length) {
    int best = -1;
    long best_inter = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const BfSeg& p = preds[i];
        if (p.cls != s.cls) continue;
        const long inter =
            bf_count_in(0, length - 1, [&](long t) { return t >= s.start && t <= s.end && t >= p.start && t <= p.end; });
        if (inter > best_inter) {
            best_inter = inter;
            best = static_cast<int>(i);
        }
    }
    return best;
}

inline double bf_iou(const std::vector<int>& pred, const std::vector<int>& truth) {
    const long n = static_cast<long>(truth.size());
    const auto ts = bf_segments(truth);
    const auto ps = bf_segments(pred);
    double sum = 0.0;
    for (const auto& s : ts) {
        const int m = bf_match(s, ps, n);
        if (m < 0) continue;
        const BfSeg& p = ps[static_cast<std::size_t>(m)];
        const auto in_s = [&](long t) { return t >= s.start && t <= s.end; };
        const auto in_p = [&](long t) { return t >= p.start && t <= p.end; };
        const long inter = bf_count_in(0, n - 1, [&](long t) { return in_s(t) && in_p(t); });
        const long uni = bf_count_in(0, n - 1, [&](long t) { return in_s(t) || in_p(t); });
        sum += static_cast<double>(inter) / static_cast<double>(uni);
    }
    return ts.empty() ? 0.0 : sum / static_cast<double>(ts.size());
}

inline long bf_boundary_samples(const std::vector<int>& pred, const std::vector<int>& truth) {
    const long n = static_cast<long>(truth.size());
    const auto ts = bf_segments(truth);
    const auto ps = bf_segments(pred);
    long total = 0;
    for (const auto& s : ts) {
        const int m = bf_match(s, ps, n);
        if (m < 0) continue;
        const BfSeg& p = ps[static_cast<std::size_t>(m)];
        // Prediction samples before/after the truth segment, truth samples before/after the prediction.
        total += bf_count_in(0, n - 1, [&](long t) { return t >= p.start && t < s.start; });
        total += bf_count_in(0, n - 1, [&](long t) { return t <= p.end && t > s.end; });
        total += bf_count_in(0, n - 1, [&](long t) { return t >= s.start && t < p.start; });
        total += bf_count_in(0, n - 1, [&](long t) { return t <= s.end && t > p.end; });
    }
    return total;
}

inline double bf_o_u(const std::vector<int>& pred, const std::vector<int>& truth) {
    return truth.empty() ? 0.0 : static_cast<double>(bf_boundary_samples(pred, truth)) / static_cast<double>(truth.size());
}

} // namespace wsseg::tk
