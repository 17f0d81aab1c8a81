#pragma once

#include "wsseg/contrast.hpp"
#include "wsseg/losses.hpp"
#include "wsseg/net.hpp"
#include "wsseg/seqdata.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace wsseg {

struct OtConfig {
    double rho = 0.1;
    double sigma = 1.0;
    double tol = 1e-6;
    int max_iters = 5000;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int max_epochs = 100;
    // Epochs 1..init_epochs use timestamp supervision; later epochs use transport pseudo-labels.
    int init_epochs = 30;
    // Objective of the timestamp-supervised epochs (warmup drops the multi-label and contrast terms).
    Phase first_phase = Phase::Timestamp;

    double lr = 1e-3;
    double lr_factor = 0.99;
    int lr_period = 100;
    AdamConfig adam;

    int batch_size = 8;
    Index crop_length = 512;
    std::uint64_t seed = 0;

    TcnConfig net;
    LossWeights weights;
    OtConfig ot;
    MiningOptions mining;
    double hard_scale = 0.5;
    int top_k = 8;
    double momentum = 0.9;
    bool normalize_cams = true;
    bool cls_include_background = false;

    // Share of every segment's samples promoted to ground-truth labels.
    double mix_fraction = 0.0;
    // Regenerate pseudo-labels before every batch instead of once per epoch.
    bool pseudo_per_batch = false;
    // Epochs without validation F_m improvement before stopping; 0 disables.
    int patience = 20;

    void validate() const;
};

// Corpus recipe for the synth subcommand; class means are drawn from means_seed.
struct CorpusConfig {
    SyntheticSpec sequence;
    double separation = 1.0;
    std::uint64_t means_seed = 7;
    int train_sequences = 40;
    int test_sequences = 10;

    void validate() const;
};

// Top-level document: {"train": {...}, "corpus": {...}}; both sections optional.
struct ConfigFile {
    TrainConfig train;
    CorpusConfig corpus;
};

ConfigFile parse_config(const std::string& text, const std::string& origin = "<config>");
ConfigFile load_config(const std::filesystem::path& path);
std::string to_json(const ConfigFile& config);

} // namespace wsseg
