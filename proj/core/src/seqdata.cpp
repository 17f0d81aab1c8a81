#include "wsseg/seqdata.hpp"

#include "wsseg/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string_view>

namespace wsseg {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::EmptyInput: return "empty_input";
    case ErrorKind::Structural: return "structural";
    case ErrorKind::Range: return "range";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::NumericOverflow: return "numeric_overflow";
    case ErrorKind::Consistency: return "consistency";
    case ErrorKind::NonFiniteLoss: return "non_finite_loss";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

void DenseLabels::validate() const {
    if (num_classes < 1) {
        throw Error(ErrorKind::Structural, "dense labels need at least one class");
    }
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (labels[t] < 0 || labels[t] >= num_classes) {
            throw Error(ErrorKind::Range, "label " + std::to_string(labels[t]) + " at sample " + std::to_string(t) +
                                              " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

void SensorSequence::validate() const {
    if (data.rows() < 1 || data.cols() < 1) {
        throw Error(ErrorKind::Structural, "sequence '" + id + "' must have D >= 1 and T >= 1");
    }
    if (!data.allFinite()) {
        throw Error(ErrorKind::Structural, "sequence '" + id + "' contains non-finite values");
    }
    if (labels) {
        if (labels->size() != length()) {
            throw Error(ErrorKind::Structural, "sequence '" + id + "' label count differs from its length");
        }
        labels->validate();
    }
}

void TimestampAnnotations::validate(Index length, int num_classes) const {
    Index prev = -1;
    for (const auto& e : entries) {
        if (e.position <= prev) {
            throw Error(ErrorKind::Structural, "timestamp positions must be strictly increasing");
        }
        if (e.position >= length) {
            throw Error(ErrorKind::Range, "timestamp position " + std::to_string(e.position) + " beyond sequence end");
        }
        if (e.label < 0 || e.label >= num_classes) {
            throw Error(ErrorKind::Range, "timestamp class " + std::to_string(e.label) + " outside class range");
        }
        prev = e.position;
    }
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t begin = 0;
    while (true) {
        auto comma = line.find(',', begin);
        out.push_back(trim(line.substr(begin, comma == std::string_view::npos ? std::string_view::npos : comma - begin)));
        if (comma == std::string_view::npos) break;
        begin = comma + 1;
    }
    return out;
}

bool parse_double(std::string_view s, double& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

bool parse_int(std::string_view s, long long& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

bool is_header(const std::vector<std::string_view>& fields) {
    double dummy = 0.0;
    return std::any_of(fields.begin(), fields.end(), [&](std::string_view f) { return !parse_double(f, dummy); });
}

} // namespace

SensorSequence load_sequence(const std::filesystem::path& path, Index channels, int num_classes) {
    if (channels < 1) {
        throw Error(ErrorKind::Schema, "channel count must be positive");
    }
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    const std::string name = path.string();

    std::vector<double> values;
    std::vector<int> labels;
    std::optional<bool> has_label;
    std::string line;
    std::size_t line_no = 0;
    bool first_content = true;
    Index rows = 0;

    while (std::getline(in, line)) {
        ++line_no;
        auto view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        auto fields = split_fields(view);
        if (first_content) {
            first_content = false;
            if (is_header(fields)) continue;
        }
        const auto n = static_cast<Index>(fields.size());
        if (n != channels && n != channels + 1) {
            throw Error(ErrorKind::Schema, name + ":" + std::to_string(line_no) + ": expected " +
                                               std::to_string(channels) + " channels (plus optional label), got " +
                                               std::to_string(n) + " fields");
        }
        const bool row_label = n == channels + 1;
        if (has_label && *has_label != row_label) {
            throw Error(ErrorKind::Schema, name + ":" + std::to_string(line_no) + ": inconsistent label column");
        }
        has_label = row_label;
        for (Index c = 0; c < channels; ++c) {
            double v = 0.0;
            if (!parse_double(fields[static_cast<std::size_t>(c)], v)) {
                throw ParseError(name, line_no, "malformed number '" + std::string(fields[static_cast<std::size_t>(c)]) + "'");
            }
            if (!std::isfinite(v)) {
                throw ParseError(name, line_no, "non-finite value '" + std::string(fields[static_cast<std::size_t>(c)]) + "'");
            }
            values.push_back(v);
        }
        if (row_label) {
            long long lab = 0;
            if (!parse_int(fields.back(), lab) || lab < 0) {
                throw ParseError(name, line_no, "malformed label '" + std::string(fields.back()) + "'");
            }
            labels.push_back(static_cast<int>(lab));
        }
        ++rows;
    }
    if (rows == 0) {
        throw Error(ErrorKind::EmptyInput, name + ": no samples");
    }

    SensorSequence seq;
    seq.id = path.stem().string();
    seq.data = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>(
        values.data(), channels, rows);
    if (!labels.empty()) {
        DenseLabels dl;
        dl.labels = std::move(labels);
        dl.num_classes = num_classes > 0 ? num_classes : *std::max_element(dl.labels.begin(), dl.labels.end()) + 1;
        dl.validate();
        seq.labels = std::move(dl);
    }
    return seq;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace

void save_sequence(const std::filesystem::path& path, const SensorSequence& seq) {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorKind::Io, "cannot write " + path.string());
    }
    for (Index c = 0; c < seq.channels(); ++c) {
        out << (c ? "," : "") << "ch" << c;
    }
    if (seq.labels) out << ",label";
    out << '\n';
    for (Index t = 0; t < seq.length(); ++t) {
        for (Index c = 0; c < seq.channels(); ++c) {
            out << (c ? "," : "") << format_double(seq.data(c, t));
        }
        if (seq.labels) out << ',' << (*seq.labels)[t];
        out << '\n';
    }
}

std::vector<Segment> segments_of(const DenseLabels& labels) {
    std::vector<Segment> segs;
    if (labels.labels.empty()) {
        throw Error(ErrorKind::EmptyInput, "segments_of needs non-empty labels");
    }
    Segment cur{labels[0], 0, 0};
    for (Index t = 1; t < labels.size(); ++t) {
        if (labels[t] != cur.class_index) {
            cur.end = t - 1;
            segs.push_back(cur);
            cur = Segment{labels[t], t, t};
        }
    }
    cur.end = labels.size() - 1;
    segs.push_back(cur);
    return segs;
}

TimestampAnnotations sample_timestamps(const DenseLabels& labels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    TimestampAnnotations ann;
    for (const auto& seg : segments_of(labels)) {
        std::uniform_int_distribution<Index> pick(seg.start, seg.end);
        ann.entries.push_back({pick(rng), seg.class_index});
    }
    return ann;
}

SequenceMultiLabel sequence_multilabel(const TimestampAnnotations& ann, int num_classes) {
    SequenceMultiLabel ml;
    ml.present.assign(static_cast<std::size_t>(num_classes), 0);
    for (const auto& e : ann.entries) {
        if (e.label < 0 || e.label >= num_classes) {
            throw Error(ErrorKind::Range, "timestamp class " + std::to_string(e.label) + " >= class count " +
                                              std::to_string(num_classes));
        }
        ml.present[static_cast<std::size_t>(e.label)] = 1;
    }
    return ml;
}

TimestampAnnotations load_timestamps(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    TimestampAnnotations ann;
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        auto view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        auto fields = split_fields(view);
        if (first) {
            first = false;
            if (is_header(fields)) continue;
        }
        long long pos = 0;
        long long lab = 0;
        if (fields.size() != 2 || !parse_int(fields[0], pos) || !parse_int(fields[1], lab) || pos < 0 || lab < 0) {
            throw ParseError(path.string(), line_no, "expected 'position,label'");
        }
        ann.entries.push_back({static_cast<Index>(pos), static_cast<int>(lab)});
    }
    return ann;
}

void save_timestamps(const std::filesystem::path& path, const TimestampAnnotations& ann) {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorKind::Io, "cannot write " + path.string());
    }
    out << "position,label\n";
    for (const auto& e : ann.entries) out << e.position << ',' << e.label << '\n';
}

void SyntheticSpec::validate() const {
    if (num_classes < 2) throw Error(ErrorKind::Parameter, "synthetic sequences need at least 2 classes");
    if (channels < 1 || length < 1) throw Error(ErrorKind::Parameter, "synthetic sequences need positive D and T");
    if (min_segment < 1 || max_segment < min_segment) {
        throw Error(ErrorKind::Parameter, "synthetic segment lengths must satisfy 1 <= min <= max");
    }
    if (noise_sigma < 0.0) throw Error(ErrorKind::Parameter, "noise sigma must be nonnegative");
    if (class_means.rows() != channels || class_means.cols() != num_classes) {
        throw Error(ErrorKind::Parameter, "class means must be channels x classes");
    }
}

Matrix random_class_means(int num_classes, int channels, double separation, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, separation);
    Matrix means(channels, num_classes);
    for (Index c = 0; c < num_classes; ++c) {
        for (Index d = 0; d < channels; ++d) means(d, c) = normal(rng);
    }
    return means;
}

std::pair<SensorSequence, DenseLabels> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, std::string id) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> seg_len(spec.min_segment, spec.max_segment);
    std::uniform_int_distribution<int> other_class(0, spec.num_classes - 2);
    std::uniform_int_distribution<int> any_class(0, spec.num_classes - 1);
    std::normal_distribution<double> noise(0.0, 1.0);

    DenseLabels labels;
    labels.num_classes = spec.num_classes;
    labels.labels.reserve(static_cast<std::size_t>(spec.length));
    int cls = any_class(rng);
    while (labels.size() < spec.length) {
        const Index len = std::min(seg_len(rng), spec.length - labels.size());
        labels.labels.insert(labels.labels.end(), static_cast<std::size_t>(len), cls);
        // Skip over the current class so consecutive segments differ.
        const int next = other_class(rng);
        cls = next >= cls ? next + 1 : next;
    }

    SensorSequence seq;
    seq.id = std::move(id);
    seq.sample_rate_hz = spec.sample_rate_hz;
    seq.data.resize(spec.channels, spec.length);
    for (Index t = 0; t < spec.length; ++t) {
        for (Index d = 0; d < spec.channels; ++d) {
            const double n = noise(rng);
            seq.data(d, t) = spec.class_means(d, labels[t]) + spec.noise_sigma * n;
        }
    }
    seq.labels = labels;
    return {std::move(seq), std::move(labels)};
}

} // namespace wsseg
