#include "wsseg/losses.hpp"

#include "wsseg/error.hpp"

#include <algorithm>
#include <cmath>

namespace wsseg {

namespace {

double clamped_log(double p) { return std::log(std::max(p, kProbFloor)); }

// d/dp of clamped_log.
double clamped_log_grad(double p) { return p > kProbFloor ? 1.0 / p : 0.0; }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

LossValue l_seg_timestamps(const Matrix& probs, const TimestampAnnotations& ann) {
    LossValue out;
    out.grad = Matrix::Zero(probs.rows(), probs.cols());
    if (ann.empty()) return out;
    ann.validate(probs.cols(), static_cast<int>(probs.rows()));
    const double scale = 1.0 / static_cast<double>(ann.size());
    for (const auto& e : ann.entries) {
        const double p = probs(e.label, e.position);
        out.value -= scale * clamped_log(p);
        out.grad(e.label, e.position) -= scale * clamped_log_grad(p);
    }
    return out;
}

LossValue l_seg_all(const Matrix& probs, const Matrix& target) {
    if (probs.rows() != target.rows() || probs.cols() != target.cols()) {
        throw Error(ErrorKind::Structural, "pseudo-label shape differs from predictions");
    }
    LossValue out;
    out.grad = Matrix::Zero(probs.rows(), probs.cols());
    const double scale = 1.0 / static_cast<double>(probs.cols());
    for (Index t = 0; t < probs.cols(); ++t) {
        for (Index c = 0; c < probs.rows(); ++c) {
            const double y = target(c, t);
            if (y == 0.0) continue;
            out.value -= scale * y * clamped_log(probs(c, t));
            out.grad(c, t) = -scale * y * clamped_log_grad(probs(c, t));
        }
    }
    return out;
}

LossValue l_smooth(const Matrix& probs, double truncation) {
    if (!(truncation > 0.0)) throw Error(ErrorKind::Parameter, "smoothing truncation must be positive");
    LossValue out;
    out.grad = Matrix::Zero(probs.rows(), probs.cols());
    const Index length = probs.cols();
    if (length < 2) return out;
    const double scale = 1.0 / static_cast<double>((length - 1) * probs.rows());
    for (Index t = 1; t < length; ++t) {
        for (Index c = 0; c < probs.rows(); ++c) {
            const double d = clamped_log(probs(c, t)) - clamped_log(probs(c, t - 1));
            if (std::abs(d) >= truncation) {
                out.value += scale * truncation * truncation;
                continue;
            }
            out.value += scale * d * d;
            out.grad(c, t) += scale * 2.0 * d * clamped_log_grad(probs(c, t));
            out.grad(c, t - 1) -= scale * 2.0 * d * clamped_log_grad(probs(c, t - 1));
        }
    }
    return out;
}

ConfidenceLoss l_conf(const Matrix& probs, const TimestampAnnotations& ann) {
    ConfidenceLoss out;
    out.loss.grad = Matrix::Zero(probs.rows(), probs.cols());
    if (ann.size() < 2) {
        out.degenerate = true;
        return out;
    }
    ann.validate(probs.cols(), static_cast<int>(probs.rows()));
    const auto& entries = ann.entries;
    const double normalizer = 2.0 * static_cast<double>(entries.back().position - entries.front().position);
    const double scale = 1.0 / normalizer;

    // Pair index t compares samples t-1 and t.
    auto hinge = [&](int c, Index t, bool rising_side) {
        const double diff = clamped_log(probs(c, t)) - clamped_log(probs(c, t - 1));
        // Left of the timestamp the class should not decrease towards it; right of it, not increase.
        const double violation = rising_side ? -diff : diff;
        if (violation <= 0.0) return;
        out.loss.value += scale * violation;
        const double sign = rising_side ? -1.0 : 1.0;
        out.loss.grad(c, t) += scale * sign * clamped_log_grad(probs(c, t));
        out.loss.grad(c, t - 1) -= scale * sign * clamped_log_grad(probs(c, t - 1));
    };

    for (std::size_t n = 0; n < entries.size(); ++n) {
        const int c = entries[n].label;
        const Index center = entries[n].position;
        const Index lo = n > 0 ? entries[n - 1].position : center;
        const Index hi = n + 1 < entries.size() ? entries[n + 1].position : center;
        for (Index t = lo + 1; t <= center; ++t) hinge(c, t, true);
        for (Index t = center + 1; t <= hi; ++t) hinge(c, t, false);
    }
    return out;
}

LossValue l_cls(const Vector& logits, const SequenceMultiLabel& target, bool include_background) {
    const Index num_classes = logits.size();
    if (target.num_classes() != num_classes) throw Error(ErrorKind::Structural, "multi-label target size mismatch");
    const Index first = include_background ? 0 : 1;
    if (num_classes - first < 1) {
        throw Error(ErrorKind::Parameter, "multi-label loss needs at least one non-background class");
    }
    LossValue out;
    out.grad = Matrix::Zero(num_classes, 1);
    const double scale = 1.0 / static_cast<double>(num_classes - first);
    for (Index c = first; c < num_classes; ++c) {
        const double x = logits(c);
        const double y = target[static_cast<int>(c)] ? 1.0 : 0.0;
        out.value += scale * (y * softplus(-x) + (1.0 - y) * softplus(x));
        out.grad(c, 0) = scale * (sigmoid(x) - y);
    }
    return out;
}

void LossWeights::validate() const {
    if (con < 0.0 || smooth < 0.0 || conf < 0.0) throw Error(ErrorKind::Parameter, "loss weights must be nonnegative");
    if (!(truncation > 0.0)) throw Error(ErrorKind::Parameter, "smoothing truncation must be positive");
    if (!(temperature > 0.0)) throw Error(ErrorKind::Parameter, "contrast temperature must be positive");
}

Phase parse_phase(const std::string& name) {
    if (name == "warmup") return Phase::Warmup;
    if (name == "timestamp") return Phase::Timestamp;
    if (name == "pseudo") return Phase::Pseudo;
    throw Error(ErrorKind::Parameter, "unknown training phase '" + name + "'");
}

const char* to_string(Phase phase) {
    switch (phase) {
    case Phase::Warmup: return "warmup";
    case Phase::Timestamp: return "timestamp";
    case Phase::Pseudo: return "pseudo";
    }
    return "unknown";
}

LossParts phase_coefficients(Phase phase, const LossWeights& weights) {
    weights.validate();
    LossParts k;
    k.smooth = weights.smooth;
    k.conf = weights.conf;
    switch (phase) {
    case Phase::Warmup:
        k.seg = 1.0;
        break;
    case Phase::Timestamp:
        k.cls = 1.0;
        k.seg = 1.0;
        k.con = weights.con;
        break;
    case Phase::Pseudo:
        k.cls = 1.0;
        k.seg_all = 1.0;
        k.con = weights.con;
        break;
    default:
        throw Error(ErrorKind::Parameter, "unknown training phase");
    }
    return k;
}

double combined(Phase phase, const LossParts& parts, const LossWeights& weights) {
    const LossParts k = phase_coefficients(phase, weights);
    return k.cls * parts.cls + k.seg * parts.seg + k.seg_all * parts.seg_all + k.con * parts.con +
           k.smooth * parts.smooth + k.conf * parts.conf;
}

} // namespace wsseg
