#pragma once

#include "wsseg/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace wsseg {

// Per-sample class indices. Class 0 is the background/Null class by convention.
struct DenseLabels {
    std::vector<int> labels;
    int num_classes = 0;

    Index size() const { return static_cast<Index>(labels.size()); }
    int operator[](Index t) const { return labels[static_cast<std::size_t>(t)]; }

    // Throws Structural/Range errors when indices fall outside [0, num_classes).
    void validate() const;
};

// A D x T stream of normalized sensor readings.
struct SensorSequence {
    Matrix data;
    double sample_rate_hz = 1.0;
    std::string id;
    std::optional<DenseLabels> labels;

    Index channels() const { return data.rows(); }
    Index length() const { return data.cols(); }

    void validate() const;
};

// Maximal run of one class; end is inclusive.
struct Segment {
    int class_index = 0;
    Index start = 0;
    Index end = 0;

    Index length() const { return end - start + 1; }
    bool operator==(const Segment&) const = default;
};

struct TimestampEntry {
    Index position = 0;
    int label = 0;

    bool operator==(const TimestampEntry&) const = default;
};

// One labeled sample per activity segment, positions strictly increasing.
struct TimestampAnnotations {
    std::vector<TimestampEntry> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    void validate(Index length, int num_classes) const;
    bool operator==(const TimestampAnnotations&) const = default;
};

// Bit c set iff class c occurs in the annotations.
struct SequenceMultiLabel {
    std::vector<std::uint8_t> present;

    int num_classes() const { return static_cast<int>(present.size()); }
    bool operator[](int c) const { return present[static_cast<std::size_t>(c)] != 0; }
};

// Reads a header-optional CSV: `channels` numeric columns followed by an optional
// integer label column. When num_classes is 0 the class count is inferred as max+1.
SensorSequence load_sequence(const std::filesystem::path& path, Index channels, int num_classes = 0);

// Writes the same CSV layout (with a header row) load_sequence reads.
void save_sequence(const std::filesystem::path& path, const SensorSequence& seq);

std::vector<Segment> segments_of(const DenseLabels& labels);

// One uniformly drawn position inside every segment.
TimestampAnnotations sample_timestamps(const DenseLabels& labels, std::uint64_t seed);

SequenceMultiLabel sequence_multilabel(const TimestampAnnotations& ann, int num_classes);

TimestampAnnotations load_timestamps(const std::filesystem::path& path);
void save_timestamps(const std::filesystem::path& path, const TimestampAnnotations& ann);

struct SyntheticSpec {
    int num_classes = 5;
    int channels = 6;
    Index length = 2000;
    // Segment lengths are drawn uniformly from [min_segment, max_segment];
    // equal bounds give constant-length segments (the last one may be truncated).
    Index min_segment = 60;
    Index max_segment = 240;
    // channels x num_classes; column c is the mean vector of class c.
    Matrix class_means;
    double noise_sigma = 1.0;
    double sample_rate_hz = 30.0;

    void validate() const;
};

// Class means with entries drawn from N(0, separation^2), seed-controlled.
Matrix random_class_means(int num_classes, int channels, double separation, std::uint64_t seed);

// Piecewise-stationary Gaussian sequence; consecutive segments never share a class.
std::pair<SensorSequence, DenseLabels> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                                                          std::string id = "synthetic");

} // namespace wsseg
