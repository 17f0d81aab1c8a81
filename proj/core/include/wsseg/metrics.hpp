#pragma once

#include "wsseg/seqdata.hpp"

#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace wsseg {

using LabelSpan = std::span<const int>;

// Fraction of samples with pred == truth.
double accuracy(LabelSpan pred, LabelSpan truth);
// (sum TP + sum TN) / (sum TP + TN + FP + FN) over one-vs-rest confusions of num_classes classes.
double accuracy_one_vs_rest(LabelSpan pred, LabelSpan truth, int num_classes);

// Mean F1 over the classes present in truth; classes with precision + recall = 0 contribute 0.
double class_average_f(LabelSpan pred, LabelSpan truth);

// Mean per-class sample-set IoU over classes present in truth or pred.
double jaccard_index(LabelSpan pred, LabelSpan truth);

enum class IouAveraging { TruthSegments, Classes };

// Each truth segment is compared with the same-class predicted segment overlapping it most
// (earliest on ties); IoU 0 when none overlaps. Averaged over truth segments, or per class first.
double segment_iou(LabelSpan pred, LabelSpan truth, IouAveraging averaging = IouAveraging::TruthSegments);

struct BoundaryErrors {
    Index overfill_start = 0;
    Index overfill_end = 0;
    Index underfill_start = 0;
    Index underfill_end = 0;

    Index total() const { return overfill_start + overfill_end + underfill_start + underfill_end; }
};

// Overfill/underfill sample counts against the maximally overlapping same-class predicted segment.
BoundaryErrors boundary_errors(LabelSpan pred, LabelSpan truth);
// Boundary error samples divided by T.
double overfill_underfill(LabelSpan pred, LabelSpan truth);

struct EvalReport {
    double acc = 0.0;
    double f_m = 0.0;
    double ji = 0.0;
    double iou = 0.0;
    double o_u = 0.0;
    std::vector<double> f_per_class;
    std::vector<double> ji_per_class;
    std::vector<std::uint8_t> class_in_truth;
    Index samples = 0;
    Index truth_segments = 0;

    bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
    bool one_vs_rest_accuracy = false;
    IouAveraging iou_averaging = IouAveraging::TruthSegments;
};

// Pools confusion counts over all sequences; IoU averages over every truth segment and
// O/U divides the total boundary errors by the total sample count.
EvalReport evaluate_labels(const std::vector<std::vector<int>>& preds, const std::vector<std::vector<int>>& truths,
                           int num_classes, const EvalOptions& options = {});

void write_report_csv(std::ostream& out, const EvalReport& report, const std::string& name);
void write_report_table(std::ostream& out, const EvalReport& report);

} // namespace wsseg
