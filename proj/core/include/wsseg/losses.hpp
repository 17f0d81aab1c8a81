#pragma once

#include "wsseg/pseudo.hpp"
#include "wsseg/seqdata.hpp"
#include "wsseg/types.hpp"

#include <string>

namespace wsseg {

// Scalar loss with its gradient wrt the input it was computed from
// (probabilities for the segmentation terms, logits for the multi-label term).
struct LossValue {
    double value = 0.0;
    Matrix grad;
};

// Mean cross-entropy at the annotated positions. probs is C x T.
LossValue l_seg_timestamps(const Matrix& probs, const TimestampAnnotations& ann);

// Soft cross-entropy against a C x T target distribution, averaged over T.
LossValue l_seg_all(const Matrix& probs, const Matrix& target);
inline LossValue l_seg_all(const Matrix& probs, const PseudoLabels& target) { return l_seg_all(probs, target.distribution); }

// Truncated MSE over neighbouring log-probabilities, mean over (T-1) x C terms.
LossValue l_smooth(const Matrix& probs, double truncation);

struct ConfidenceLoss {
    LossValue loss;
    bool degenerate = false;  // fewer than two timestamps: loss is 0
};

// Monotonic-decay penalty around every timestamp, normalized by 2 (t_N - t_1).
ConfidenceLoss l_conf(const Matrix& probs, const TimestampAnnotations& ann);

// Multi-label soft margin loss; the background class 0 is skipped unless include_background.
// Gradient is wrt the logits (a column vector stored in grad).
LossValue l_cls(const Vector& logits, const SequenceMultiLabel& target, bool include_background = false);

struct LossWeights {
    double con = 0.5;    // lambda_con
    double smooth = 0.1;  // lambda_s
    double conf = 0.5;   // lambda_conf
    double truncation = 4.0;
    double temperature = 0.1;

    void validate() const;
};

enum class Phase {
    Warmup,     // L_seg + l_s L_s + l_conf L_conf
    Timestamp,  // L_cls + L_seg + l_con L_con + l_s L_s + l_conf L_conf
    Pseudo,     // as Timestamp with L_seg replaced by the dense pseudo-label term
};

Phase parse_phase(const std::string& name);
const char* to_string(Phase phase);

struct LossParts {
    double cls = 0.0;
    double seg = 0.0;
    double seg_all = 0.0;
    double con = 0.0;
    double smooth = 0.0;
    double conf = 0.0;
};

// Multiplier applied to each part (and to its gradient) in a given phase.
LossParts phase_coefficients(Phase phase, const LossWeights& weights);

double combined(Phase phase, const LossParts& parts, const LossWeights& weights);

} // namespace wsseg
