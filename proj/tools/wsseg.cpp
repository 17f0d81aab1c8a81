#include "wsseg/cam.hpp"
#include "wsseg/checkpoint.hpp"
#include "wsseg/config.hpp"
#include "wsseg/error.hpp"
#include "wsseg/metrics.hpp"
#include "wsseg/ribbon.hpp"
#include "wsseg/seqdata.hpp"
#include "wsseg/trainer.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace wsseg;

namespace {

enum Exit : int {
    kOk = 0,
    kUsage = 2,
    kConfig = 3,
    kMissing = 4,
    kData = 5,
    kNumeric = 6,
    kInternal = 7,
};

// Carries the exit code chosen at the point of failure.
struct CliError {
    int code;
    std::string kind;
    std::string message;
};

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '"', '\'');
    return s;
}

[[noreturn]] void fail(int code, const std::string& kind, const std::string& message) {
    throw CliError{code, kind, message};
}

int code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Io: return kMissing;
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::NumericOverflow: return kNumeric;
    default: return kData;
    }
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data;
    std::string checkpoint;
};

ConfigFile read_config(const Common& c) {
    ConfigFile cfg;
    if (!c.config.empty()) {
        if (!fs::is_regular_file(c.config)) fail(kMissing, "io", "config file not found: " + c.config);
        try {
            cfg = load_config(c.config);
        } catch (const Error& e) {
            fail(kConfig, to_string(e.kind()), e.what());
        }
    }
    if (c.seed) cfg.train.seed = *c.seed;
    try {
        cfg.train.validate();
        cfg.corpus.validate();
    } catch (const Error& e) {
        fail(kConfig, to_string(e.kind()), e.what());
    }
    return cfg;
}

void require_dir(const std::string& path, const char* what) {
    if (path.empty()) fail(kUsage, "usage", std::string("--") + what + " is required");
    if (!fs::is_directory(path)) fail(kMissing, "io", std::string(what) + " directory not found: " + path);
}

void require_file(const std::string& path, const char* what) {
    if (path.empty()) fail(kUsage, "usage", std::string("--") + what + " is required");
    if (!fs::is_regular_file(path)) fail(kMissing, "io", std::string(what) + " file not found: " + path);
}

fs::path prepare_out(const std::string& out) {
    if (out.empty()) fail(kUsage, "usage", "--out is required");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) fail(kMissing, "io", "cannot create output directory: " + out);
    return fs::path(out);
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(kMissing, "io", "cannot write " + path.string());
    return f;
}

bool is_timestamp_file(const fs::path& p) {
    const std::string name = p.filename().string();
    const std::string suffix = ".timestamps.csv";
    return name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// <split>/<id>.csv with an optional <id>.timestamps.csv next to it, sorted by id.
std::vector<TrainSample> load_split(const fs::path& dir, Index channels, int num_classes, bool need_timestamps) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto& p = entry.path();
        if (entry.is_regular_file() && p.extension() == ".csv" && !is_timestamp_file(p)) files.push_back(p);
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) fail(kData, "empty_input", "no sequence CSVs in " + dir.string());
    std::vector<TrainSample> out;
    for (const auto& p : files) {
        TrainSample s;
        s.sequence = load_sequence(p, channels, num_classes);
        s.sequence.id = p.stem().string();
        const fs::path ts = p.parent_path() / (p.stem().string() + ".timestamps.csv");
        if (fs::is_regular_file(ts)) {
            s.timestamps = load_timestamps(ts);
            s.timestamps.validate(s.sequence.length(), num_classes);
        } else if (need_timestamps) {
            fail(kMissing, "io", "missing timestamps for " + p.string());
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_matrix_rows(std::ostream& out, const Matrix& m, const std::string& prefix) {
    // One row per column of m (time), one CSV column per row of m.
    for (Index r = 0; r < m.rows(); ++r) out << (r ? "," : "") << prefix << r;
    out << '\n';
    char buf[64];
    for (Index t = 0; t < m.cols(); ++t) {
        for (Index r = 0; r < m.rows(); ++r) {
            auto res = std::to_chars(buf, buf + sizeof buf, m(r, t));
            if (r) out << ',';
            out.write(buf, res.ptr - buf);
        }
        out << '\n';
    }
}

int cmd_synth(const Common& c) {
    ConfigFile cfg = read_config(c);
    const fs::path out = prepare_out(c.out);
    const std::uint64_t seed = c.seed.value_or(0);
    const Corpus corpus = generate_corpus(cfg.corpus, seed);
    for (const auto& [name, split] : {std::pair{"train", &corpus.train}, std::pair{"test", &corpus.test}}) {
        fs::create_directories(out / name);
        for (const auto& s : *split) {
            save_sequence(out / name / (s.sequence.id + ".csv"), s.sequence);
            save_timestamps(out / name / (s.sequence.id + ".timestamps.csv"), s.timestamps);
        }
    }
    auto f = open_out(out / "corpus.json");
    f << to_json(cfg) << '\n';
    std::cout << "wrote " << corpus.train.size() << " train and " << corpus.test.size() << " test sequences to "
              << out.string() << '\n';
    return kOk;
}

int cmd_train(const Common& c) {
    ConfigFile cfg = read_config(c);
    require_dir(c.data, "data");
    if (!c.checkpoint.empty()) require_file(c.checkpoint, "checkpoint");
    const fs::path data(c.data);
    if (!fs::is_directory(data / "train")) fail(kMissing, "io", "missing train split in " + data.string());
    const fs::path out = prepare_out(c.out);

    const TrainConfig& tc = cfg.train;
    const auto train_set = load_split(data / "train", tc.net.input_dim, tc.net.num_classes, true);
    std::vector<TrainSample> validation;
    if (fs::is_directory(data / "test")) validation = load_split(data / "test", tc.net.input_dim, tc.net.num_classes, false);
    std::erase_if(validation, [](const TrainSample& s) { return !s.sequence.labels.has_value(); });

    std::optional<TrainState> resume;
    if (!c.checkpoint.empty()) {
        Checkpoint ck = load_checkpoint(c.checkpoint);
        if (!(ck.net == tc.net)) fail(kConfig, "consistency", "checkpoint network differs from config: " + c.checkpoint);
        resume = std::move(ck.state);
    }

    TrainOptions opts;
    opts.on_epoch = [](const EpochLog& e, const TrainState&) {
        std::cout << "epoch " << e.epoch << ' ' << to_string(e.phase) << " loss " << e.loss;
        if (e.validation) std::cout << " val_f_m " << e.validation->f_m;
        std::cout << '\n';
    };
    TrainResult result;
    try {
        result = resume ? train(train_set, validation, tc, std::move(*resume), opts) : train(train_set, validation, tc, opts);
    } catch (const NonFiniteLossError& e) {
        auto dump = open_out(out / "nonfinite_dump.txt");
        dump << e.dump();
        fail(kNumeric, "non_finite_loss", std::string(e.what()) + " (dump: " + (out / "nonfinite_dump.txt").string() + ")");
    }
    save_checkpoint(out / "checkpoint.txt", Checkpoint{tc.net, result.state});
    auto log = open_out(out / "epoch_log.csv");
    write_epoch_log_csv(log, result.log);
    auto f = open_out(out / "config.json");
    f << to_json(cfg) << '\n';
    std::cout << "trained to epoch " << result.state.epoch << (result.early_stopped ? " (early stop)" : "") << '\n';
    return kOk;
}

struct Loaded {
    ConfigFile cfg;
    Checkpoint ck;
};

Loaded load_model(const Common& c) {
    ConfigFile cfg = read_config(c);
    require_file(c.checkpoint, "checkpoint");
    require_dir(c.data, "data");
    Checkpoint ck = load_checkpoint(c.checkpoint);
    cfg.train.net = ck.net;
    return {std::move(cfg), std::move(ck)};
}

fs::path split_dir(const std::string& data, const std::string& split) {
    const fs::path p = fs::path(data) / split;
    if (!fs::is_directory(p)) fail(kMissing, "io", "missing " + split + " split in " + data);
    return p;
}

int cmd_eval(const Common& c, const std::string& split) {
    Loaded m = load_model(c);
    const fs::path dir = split_dir(c.data, split);
    const fs::path out = prepare_out(c.out);
    const auto samples = load_split(dir, m.ck.net.input_dim, m.ck.net.num_classes, false);
    const Network net(m.ck.net, m.ck.state.params);

    std::vector<std::vector<int>> preds, truths;
    fs::create_directories(out / "ribbons");
    for (const auto& s : samples) {
        if (!s.sequence.labels) fail(kData, "structural", "sequence has no labels: " + s.sequence.id);
        auto pred = predict_labels(net, s.sequence);
        auto svg = open_out(out / "ribbons" / (s.sequence.id + ".svg"));
        write_ribbon_svg(svg, {{"truth", s.sequence.labels->labels}, {"predicted", pred}}, m.ck.net.num_classes);
        auto pf = open_out(out / "ribbons" / (s.sequence.id + ".pred.csv"));
        pf << "truth,predicted\n";
        for (std::size_t t = 0; t < pred.size(); ++t) pf << s.sequence.labels->labels[t] << ',' << pred[t] << '\n';
        truths.push_back(s.sequence.labels->labels);
        preds.push_back(std::move(pred));
    }
    const EvalReport report = evaluate_labels(preds, truths, m.ck.net.num_classes);
    auto f = open_out(out / "report.csv");
    write_report_csv(f, report, fs::path(c.checkpoint).parent_path().filename().string());
    write_report_table(std::cout, report);
    return kOk;
}

int cmd_pseudo(const Common& c) {
    Loaded m = load_model(c);
    const fs::path dir = split_dir(c.data, "train");
    const fs::path out = prepare_out(c.out);
    const auto samples = load_split(dir, m.ck.net.input_dim, m.ck.net.num_classes, true);
    const Network net(m.ck.net, m.ck.state.params);
    int fallback = 0;
    for (const auto& s : samples) {
        const NetworkOutputs o = net.predict(s.sequence.data);
        const SequencePseudo p = generate_sequence_pseudo(o, m.ck.state.bank, s.timestamps, m.cfg.train);
        if (!p.used_transport) ++fallback;
        auto pf = open_out(out / (s.sequence.id + ".plan.csv"));
        write_matrix_rows(pf, p.plan.transpose(), "c");
        auto lf = open_out(out / (s.sequence.id + ".pseudo.csv"));
        Matrix rows(m.ck.net.num_classes + 2, p.labels.length());
        for (Index t = 0; t < p.labels.length(); ++t) {
            Index arg = 0;
            p.labels.distribution.col(t).maxCoeff(&arg);
            rows(0, t) = p.labels.hard[static_cast<std::size_t>(t)];
            rows(1, t) = static_cast<double>(arg);
            rows.col(t).tail(m.ck.net.num_classes) = p.labels.distribution.col(t);
        }
        // Header: hard, label, then one probability column per class.
        lf << "hard,label";
        for (int k = 0; k < m.ck.net.num_classes; ++k) lf << ",p" << k;
        lf << '\n';
        for (Index t = 0; t < rows.cols(); ++t) {
            lf << static_cast<int>(rows(0, t)) << ',' << static_cast<int>(rows(1, t));
            char buf[64];
            for (Index k = 2; k < rows.rows(); ++k) {
                auto res = std::to_chars(buf, buf + sizeof buf, rows(k, t));
                lf << ',';
                lf.write(buf, res.ptr - buf);
            }
            lf << '\n';
        }
    }
    std::cout << "wrote pseudo-labels for " << samples.size() << " sequences";
    if (fallback) std::cout << " (" << fallback << " without transport: missing prototypes)";
    std::cout << '\n';
    return kOk;
}

int cmd_cams(const Common& c, const std::string& split, bool raw) {
    Loaded m = load_model(c);
    const fs::path dir = split_dir(c.data, split);
    const fs::path out = prepare_out(c.out);
    const auto samples = load_split(dir, m.ck.net.input_dim, m.ck.net.num_classes, false);
    const Network net(m.ck.net, m.ck.state.params);
    for (const auto& s : samples) {
        const NetworkOutputs o = net.predict(s.sequence.data);
        Matrix cams = compute_cams(o.features, net.params().ml_w);
        if (!raw) cams = normalize_cams(cams);
        auto f = open_out(out / (s.sequence.id + ".cams.csv"));
        write_matrix_rows(f, cams, "c");
    }
    std::cout << "wrote CAMs for " << samples.size() << " sequences\n";
    return kOk;
}

// Splits one CSV line; report files never quote fields.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

int cmd_report(const Common& c, const std::vector<std::string>& runs) {
    if (runs.empty()) fail(kUsage, "usage", "report needs at least one run directory");
    for (const auto& r : runs) require_file((fs::path(r) / "report.csv").string(), "report");
    const fs::path out = prepare_out(c.out);
    const std::vector<std::string> keep = {"acc", "f_m", "ji", "iou", "o_u"};
    auto f = open_out(out / "summary.csv");
    f << "run";
    for (const auto& k : keep) f << ',' << k;
    f << '\n';
    std::printf("%-24s %8s %8s %8s %8s %8s\n", "run", "Acc", "F_m", "JI", "IoU", "O/U");
    for (const auto& r : runs) {
        std::ifstream in(fs::path(r) / "report.csv");
        std::string head, row;
        if (!std::getline(in, head) || !std::getline(in, row)) fail(kData, "parse", "truncated report in " + r);
        const auto h = split_csv(head), v = split_csv(row);
        if (h.size() != v.size()) fail(kData, "parse", "malformed report in " + r);
        std::map<std::string, std::string> fields;
        for (std::size_t i = 0; i < h.size(); ++i) fields[h[i]] = v[i];
        const std::string name = fs::path(r).filename().string().empty() ? r : fs::path(r).filename().string();
        f << name;
        std::printf("%-24s", name.c_str());
        for (const auto& k : keep) {
            auto it = fields.find(k);
            if (it == fields.end()) fail(kData, "parse", "report in " + r + " lacks column " + k);
            f << ',' << it->second;
            std::printf(" %8.2f", 100.0 * std::stod(it->second));
        }
        f << '\n';
        std::printf("\n");
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Timestamp-supervised sensor sequence segmentation"};
    app.require_subcommand(1, 1);
    Common common;
    std::string split = "test";
    bool raw = false;
    std::vector<std::string> runs;

    auto add_common = [&](CLI::App* sub, bool data, bool ckpt) {
        sub->add_option("--config", common.config, "JSON config file");
        sub->add_option("--seed", common.seed, "Seed override");
        sub->add_option("--out", common.out, "Output directory")->required();
        if (data) sub->add_option("--data", common.data, "Dataset directory with train/ and test/");
        if (ckpt) sub->add_option("--checkpoint", common.checkpoint, "Checkpoint file");
    };
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
    add_common(synth, false, false);
    auto* trn = app.add_subcommand("train", "Train a model; --checkpoint resumes");
    add_common(trn, true, true);
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and draw ribbons");
    add_common(ev, true, true);
    ev->add_option("--split", split, "Split to evaluate")->check(CLI::IsMember({"train", "test"}));
    auto* ps = app.add_subcommand("pseudo", "Dump transport plans and pseudo-labels for the train split");
    add_common(ps, true, true);
    auto* cm = app.add_subcommand("cams", "Dump class activation maps");
    add_common(cm, true, true);
    cm->add_option("--split", split, "Split to read")->check(CLI::IsMember({"train", "test"}));
    cm->add_flag("--raw", raw, "Skip per-class min-max normalisation");
    auto* rep = app.add_subcommand("report", "Aggregate report.csv files of several eval runs");
    add_common(rep, false, false);
    rep->add_option("runs", runs, "Eval output directories")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: code=" << kUsage << " kind=usage message=\"" << one_line(e.what()) << "\"\n";
        return kUsage;
    }

    try {
        if (*synth) return cmd_synth(common);
        if (*trn) return cmd_train(common);
        if (*ev) return cmd_eval(common, split);
        if (*ps) return cmd_pseudo(common);
        if (*cm) return cmd_cams(common, split, raw);
        if (*rep) return cmd_report(common, runs);
        fail(kUsage, "usage", "no subcommand");
    } catch (const CliError& e) {
        std::cerr << "error: code=" << e.code << " kind=" << e.kind << " message=\"" << one_line(e.message) << "\"\n";
        return e.code;
    } catch (const Error& e) {
        const int code = code_for(e.kind());
        std::cerr << "error: code=" << code << " kind=" << to_string(e.kind()) << " message=\"" << one_line(e.what())
                  << "\"\n";
        return code;
    } catch (const std::exception& e) {
        std::cerr << "error: code=" << kInternal << " kind=internal message=\"" << one_line(e.what()) << "\"\n";
        return kInternal;
    }
}
