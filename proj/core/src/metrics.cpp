#include "wsseg/metrics.hpp"

#include "wsseg/error.hpp"

#include <algorithm>
#include <iomanip>
#include <map>

namespace wsseg {

namespace {

void check_lengths(LabelSpan pred, LabelSpan truth) {
    if (pred.size() != truth.size()) {
        throw Error(ErrorKind::Structural, "prediction length " + std::to_string(pred.size()) +
                                               " differs from truth length " + std::to_string(truth.size()));
    }
}

struct Run {
    int cls;
    Index start;
    Index end;  // inclusive
};

std::vector<Run> runs_of(LabelSpan labels) {
    std::vector<Run> runs;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        const auto ti = static_cast<Index>(t);
        if (runs.empty() || runs.back().cls != labels[t]) {
            runs.push_back({labels[t], ti, ti});
        } else {
            runs.back().end = ti;
        }
    }
    return runs;
}

Index overlap(const Run& a, const Run& b) {
    return std::max<Index>(0, std::min(a.end, b.end) - std::max(a.start, b.start) + 1);
}

// Same-class predicted run overlapping `truth` most; earliest wins ties. nullptr when none overlaps.
const Run* best_match(const Run& truth, const std::vector<Run>& predicted) {
    const Run* best = nullptr;
    Index best_overlap = 0;
    for (const auto& p : predicted) {
        if (p.cls != truth.cls) continue;
        const Index ov = overlap(truth, p);
        if (ov > best_overlap) {
            best = &p;
            best_overlap = ov;
        }
    }
    return best;
}

struct SegmentScore {
    int cls;
    double iou;
};

std::vector<SegmentScore> segment_scores(LabelSpan pred, LabelSpan truth) {
    const auto truth_runs = runs_of(truth);
    const auto pred_runs = runs_of(pred);
    std::vector<SegmentScore> out;
    for (const auto& s : truth_runs) {
        const Run* m = best_match(s, pred_runs);
        double iou = 0.0;
        if (m) {
            const Index inter = overlap(s, *m);
            const Index uni = std::max(s.end, m->end) - std::min(s.start, m->start) + 1;
            iou = static_cast<double>(inter) / static_cast<double>(uni);
        }
        out.push_back({s.cls, iou});
    }
    return out;
}

struct ClassCounts {
    Index tp = 0;
    Index fp = 0;
    Index fn = 0;
};

std::map<int, ClassCounts> confusion(LabelSpan pred, LabelSpan truth) {
    std::map<int, ClassCounts> counts;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        if (pred[t] == truth[t]) {
            ++counts[truth[t]].tp;
        } else {
            ++counts[pred[t]].fp;
            ++counts[truth[t]].fn;
        }
    }
    return counts;
}

double f1(const ClassCounts& c) {
    const double prec = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    const double rec = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    return prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
}

double jaccard(const ClassCounts& c) {
    const Index uni = c.tp + c.fp + c.fn;
    return uni > 0 ? static_cast<double>(c.tp) / static_cast<double>(uni) : 0.0;
}

} // namespace

double accuracy(LabelSpan pred, LabelSpan truth) {
    check_lengths(pred, truth);
    if (truth.empty()) return 0.0;
    Index hits = 0;
    for (std::size_t t = 0; t < truth.size(); ++t) hits += pred[t] == truth[t];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double accuracy_one_vs_rest(LabelSpan pred, LabelSpan truth, int num_classes) {
    check_lengths(pred, truth);
    if (truth.empty() || num_classes < 1) return 0.0;
    // Each sample contributes num_classes one-vs-rest decisions; a miss flips exactly two of them.
    const double n = static_cast<double>(truth.size());
    const double misses = n * (1.0 - accuracy(pred, truth));
    return (num_classes * n - 2.0 * misses) / (num_classes * n);
}

double class_average_f(LabelSpan pred, LabelSpan truth) {
    check_lengths(pred, truth);
    const auto counts = confusion(pred, truth);
    double sum = 0.0;
    int classes = 0;
    for (const auto& [cls, c] : counts) {
        if (c.tp + c.fn == 0) continue;  // absent from truth
        sum += f1(c);
        ++classes;
    }
    return classes ? sum / classes : 0.0;
}

double jaccard_index(LabelSpan pred, LabelSpan truth) {
    check_lengths(pred, truth);
    const auto counts = confusion(pred, truth);
    double sum = 0.0;
    for (const auto& [cls, c] : counts) sum += jaccard(c);
    return counts.empty() ? 0.0 : sum / static_cast<double>(counts.size());
}

double segment_iou(LabelSpan pred, LabelSpan truth, IouAveraging averaging) {
    check_lengths(pred, truth);
    const auto scores = segment_scores(pred, truth);
    if (scores.empty()) return 0.0;
    if (averaging == IouAveraging::TruthSegments) {
        double sum = 0.0;
        for (const auto& s : scores) sum += s.iou;
        return sum / static_cast<double>(scores.size());
    }
    std::map<int, std::pair<double, int>> per_class;
    for (const auto& s : scores) {
        per_class[s.cls].first += s.iou;
        per_class[s.cls].second += 1;
    }
    double sum = 0.0;
    for (const auto& [cls, acc] : per_class) sum += acc.first / acc.second;
    return sum / static_cast<double>(per_class.size());
}

BoundaryErrors boundary_errors(LabelSpan pred, LabelSpan truth) {
    check_lengths(pred, truth);
    const auto truth_runs = runs_of(truth);
    const auto pred_runs = runs_of(pred);
    BoundaryErrors e;
    for (const auto& s : truth_runs) {
        const Run* m = best_match(s, pred_runs);
        if (!m) continue;
        e.overfill_start += std::max<Index>(0, s.start - m->start);
        e.overfill_end += std::max<Index>(0, m->end - s.end);
        e.underfill_start += std::max<Index>(0, m->start - s.start);
        e.underfill_end += std::max<Index>(0, s.end - m->end);
    }
    return e;
}

double overfill_underfill(LabelSpan pred, LabelSpan truth) {
    const auto e = boundary_errors(pred, truth);
    return truth.empty() ? 0.0 : static_cast<double>(e.total()) / static_cast<double>(truth.size());
}

EvalReport evaluate_labels(const std::vector<std::vector<int>>& preds, const std::vector<std::vector<int>>& truths,
                           int num_classes, const EvalOptions& options) {
    if (preds.size() != truths.size()) throw Error(ErrorKind::Structural, "prediction and truth counts differ");
    EvalReport r;
    r.f_per_class.assign(static_cast<std::size_t>(num_classes), 0.0);
    r.ji_per_class.assign(static_cast<std::size_t>(num_classes), 0.0);
    r.class_in_truth.assign(static_cast<std::size_t>(num_classes), 0);

    std::vector<ClassCounts> counts(static_cast<std::size_t>(num_classes));
    Index hits = 0;
    Index boundary = 0;
    std::vector<double> iou_sum(static_cast<std::size_t>(num_classes), 0.0);
    std::vector<int> iou_count(static_cast<std::size_t>(num_classes), 0);
    double iou_total = 0.0;

    for (std::size_t s = 0; s < preds.size(); ++s) {
        const LabelSpan pred = preds[s];
        const LabelSpan truth = truths[s];
        check_lengths(pred, truth);
        for (std::size_t t = 0; t < truth.size(); ++t) {
            const int p = pred[t];
            const int g = truth[t];
            if (p < 0 || p >= num_classes || g < 0 || g >= num_classes) {
                throw Error(ErrorKind::Structural, "label outside the report's class count");
            }
            if (p == g) {
                ++hits;
                ++counts[static_cast<std::size_t>(g)].tp;
            } else {
                ++counts[static_cast<std::size_t>(p)].fp;
                ++counts[static_cast<std::size_t>(g)].fn;
            }
        }
        r.samples += static_cast<Index>(truth.size());
        for (const auto& sc : segment_scores(pred, truth)) {
            iou_sum[static_cast<std::size_t>(sc.cls)] += sc.iou;
            iou_count[static_cast<std::size_t>(sc.cls)] += 1;
            iou_total += sc.iou;
            ++r.truth_segments;
        }
        boundary += boundary_errors(pred, truth).total();
    }
    if (r.samples == 0) return r;

    const double n = static_cast<double>(r.samples);
    const double misses = n - static_cast<double>(hits);
    r.acc = options.one_vs_rest_accuracy ? (num_classes * n - 2.0 * misses) / (num_classes * n) : hits / n;

    double f_sum = 0.0;
    int f_classes = 0;
    double ji_sum = 0.0;
    int ji_classes = 0;
    for (int c = 0; c < num_classes; ++c) {
        const auto& cc = counts[static_cast<std::size_t>(c)];
        const bool in_truth = cc.tp + cc.fn > 0;
        const bool in_any = in_truth || cc.fp > 0;
        r.class_in_truth[static_cast<std::size_t>(c)] = in_truth ? 1 : 0;
        r.f_per_class[static_cast<std::size_t>(c)] = f1(cc);
        r.ji_per_class[static_cast<std::size_t>(c)] = jaccard(cc);
        if (in_truth) {
            f_sum += f1(cc);
            ++f_classes;
        }
        if (in_any) {
            ji_sum += jaccard(cc);
            ++ji_classes;
        }
    }
    r.f_m = f_classes ? f_sum / f_classes : 0.0;
    r.ji = ji_classes ? ji_sum / ji_classes : 0.0;

    if (r.truth_segments > 0) {
        if (options.iou_averaging == IouAveraging::TruthSegments) {
            r.iou = iou_total / static_cast<double>(r.truth_segments);
        } else {
            double s = 0.0;
            int k = 0;
            for (int c = 0; c < num_classes; ++c) {
                if (iou_count[static_cast<std::size_t>(c)] == 0) continue;
                s += iou_sum[static_cast<std::size_t>(c)] / iou_count[static_cast<std::size_t>(c)];
                ++k;
            }
            r.iou = s / k;
        }
    }
    r.o_u = static_cast<double>(boundary) / n;
    return r;
}

void write_report_csv(std::ostream& out, const EvalReport& report, const std::string& name) {
    out << "name,acc,f_m,ji,iou,o_u,samples,truth_segments";
    for (std::size_t c = 0; c < report.f_per_class.size(); ++c) out << ",f_c" << c;
    for (std::size_t c = 0; c < report.ji_per_class.size(); ++c) out << ",ji_c" << c;
    out << '\n' << name << std::setprecision(17) << ',' << report.acc << ',' << report.f_m << ',' << report.ji << ','
        << report.iou << ',' << report.o_u << ',' << report.samples << ',' << report.truth_segments;
    for (double f : report.f_per_class) out << ',' << f;
    for (double j : report.ji_per_class) out << ',' << j;
    out << '\n';
}

void write_report_table(std::ostream& out, const EvalReport& report) {
    const auto flags = out.flags();
    out << std::fixed << std::setprecision(2);
    out << "  Acc   " << std::setw(6) << 100.0 * report.acc << " %\n"
        << "  F_m   " << std::setw(6) << 100.0 * report.f_m << " %\n"
        << "  JI    " << std::setw(6) << 100.0 * report.ji << " %\n"
        << "  IoU   " << std::setw(6) << 100.0 * report.iou << " %\n"
        << "  O/U   " << std::setw(6) << 100.0 * report.o_u << " %\n";
    out << "  class   F1      JI\n";
    for (std::size_t c = 0; c < report.f_per_class.size(); ++c) {
        out << "  " << std::setw(5) << c << "  " << std::setw(6) << 100.0 * report.f_per_class[c] << "  "
            << std::setw(6) << 100.0 * report.ji_per_class[c] << (report.class_in_truth[c] ? "" : "  (absent)") << '\n';
    }
    out.flags(flags);
}

} // namespace wsseg
