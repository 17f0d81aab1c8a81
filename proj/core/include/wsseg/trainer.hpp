#pragma once

#include "wsseg/config.hpp"
#include "wsseg/error.hpp"
#include "wsseg/metrics.hpp"
#include "wsseg/net.hpp"
#include "wsseg/otrans.hpp"
#include "wsseg/proto.hpp"
#include "wsseg/pseudo.hpp"
#include "wsseg/seqdata.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace wsseg {

// One training or evaluation sequence. Dense labels are needed for evaluation and mixing only.
struct TrainSample {
    SensorSequence sequence;
    TimestampAnnotations timestamps;
};

struct Corpus {
    Matrix class_means;
    std::vector<TrainSample> train;
    std::vector<TrainSample> test;
};

// Synthetic train/test split with one uniformly drawn timestamp per segment.
Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed);

// Timestamps plus the positions whose ground-truth label is revealed (timestamps included).
struct MixedSupervision {
    TimestampAnnotations timestamps;
    TimestampAnnotations labeled;
};

// floor(fraction * length) positions of every segment, drawn without replacement.
MixedSupervision mix_supervision(const TimestampAnnotations& timestamps, const DenseLabels& labels, double fraction,
                                 std::uint64_t seed);

// Half-open crop [begin, end) of one sequence.
struct Crop {
    std::size_t sample = 0;
    Index begin = 0;
    Index end = 0;

    Index length() const { return end - begin; }
    bool operator==(const Crop&) const = default;
};

// Splits [0, length) into crops of at most crop_length samples whose inner boundaries sit on
// timestamps; neighbouring crops share that timestamp so no interval loses a flank.
std::vector<Crop> make_crops(const TimestampAnnotations& ann, Index length, Index crop_length, std::size_t sample = 0);

// Entries of ann inside [begin, end), shifted to crop coordinates.
TimestampAnnotations slice_annotations(const TimestampAnnotations& ann, Index begin, Index end);

struct AdamState {
    NetworkParams m;
    NetworkParams v;
    std::int64_t step = 0;
};

struct TrainState {
    int epoch = 0;  // completed epochs
    double lr = 0.0;
    NetworkParams params;
    PrototypeBank bank;
    AdamState adam;
    // Validation record for early stopping.
    double best_f_m = -1.0;
    int best_epoch = 0;
    int stale_epochs = 0;

    static TrainState fresh(const TrainConfig& config);
};

struct EpochLog {
    int epoch = 0;
    Phase phase = Phase::Timestamp;
    double lr = 0.0;
    LossParts parts;  // means over crops, unweighted
    double loss = 0.0;  // mean weighted objective
    int crops = 0;
    std::optional<EvalReport> validation;
};

void write_epoch_log_csv(std::ostream& out, const std::vector<EpochLog>& log);

struct TrainOptions {
    // Stop after this many completed epochs (for resumable runs); -1 runs to max_epochs.
    int stop_after_epoch = -1;
    // 0 means std::thread::hardware_concurrency, further capped by WSSEG_THREADS.
    int threads = 0;
    std::function<void(const EpochLog&, const TrainState&)> on_epoch;
};

struct TrainResult {
    TrainState state;
    std::vector<EpochLog> log;
    bool early_stopped = false;
};

// Runs epochs state.epoch + 1 .. max_epochs. Dense labels on train samples are used only when
// config.mix_fraction > 0; validation samples need dense labels.
TrainResult train(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& validation,
                  const TrainConfig& config, TrainState state, const TrainOptions& options = {});
TrainResult train(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& validation,
                  const TrainConfig& config, const TrainOptions& options = {});

// Final-stage argmax per sample.
std::vector<int> predict_labels(const Network& network, const SensorSequence& sequence);

EvalReport evaluate(const Network& network, const std::vector<TrainSample>& data, const EvalOptions& options = {});
EvalReport evaluate(const TrainConfig& config, const TrainState& state, const std::vector<TrainSample>& data,
                    const EvalOptions& options = {});

struct SequencePseudo {
    Matrix plan;  // T x C transport plan aggregated over segment columns
    PseudoLabels labels;
    bool used_transport = true;  // false when a prototype was missing and probabilities stood in
};

// Order-preserving transport against one column per annotated segment (its class prototype),
// summed per class, then hybrid pseudo-labels.
SequencePseudo generate_sequence_pseudo(const NetworkOutputs& outputs, const PrototypeBank& bank,
                                        const TimestampAnnotations& ann, const TrainConfig& config);

// Worker count after applying WSSEG_THREADS.
int resolve_threads(int requested);

// Raised when a batch produces a non-finite objective; dump() describes the batch.
class NonFiniteLossError : public Error {
public:
    NonFiniteLossError(const std::string& message, std::string dump)
        : Error(ErrorKind::NonFiniteLoss, message), dump_(std::move(dump)) {}
    const std::string& dump() const { return dump_; }

private:
    std::string dump_;
};

} // namespace wsseg
