#include "wsseg/config.hpp"

#include "wsseg/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace wsseg {

using nlohmann::json;

void TrainConfig::validate() const {
    if (max_epochs < 0 || init_epochs < 0) throw Error(ErrorKind::Parameter, "epoch counts must be nonnegative");
    if (init_epochs > max_epochs) throw Error(ErrorKind::Parameter, "init_epochs must not exceed max_epochs");
    if (first_phase == Phase::Pseudo) throw Error(ErrorKind::Parameter, "first_phase must be warmup or timestamp");
    if (!(lr > 0.0)) throw Error(ErrorKind::Parameter, "learning rate must be positive");
    if (!(lr_factor > 0.0 && lr_factor <= 1.0)) throw Error(ErrorKind::Parameter, "lr_factor must be in (0, 1]");
    if (lr_period < 1) throw Error(ErrorKind::Parameter, "lr_period must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
        throw Error(ErrorKind::Parameter, "Adam betas must be in [0, 1) and eps positive");
    }
    if (batch_size < 1) throw Error(ErrorKind::Parameter, "batch_size must be positive");
    if (crop_length < 2) throw Error(ErrorKind::Parameter, "crop_length must be at least 2");
    net.validate();
    weights.validate();
    if (!(ot.rho > 0.0 && ot.sigma > 0.0 && ot.tol > 0.0) || ot.max_iters < 1) {
        throw Error(ErrorKind::Parameter, "transport rho, sigma, tol and max_iters must be positive");
    }
    if (mining.anchor_count < 0) throw Error(ErrorKind::Parameter, "anchor_count must be nonnegative");
    for (double f : {mining.hard_negative_fraction, mining.negative_keep_fraction, mining.random_anchor_fraction}) {
        if (!(f >= 0.0 && f <= 1.0)) throw Error(ErrorKind::Parameter, "mining fractions must be in [0, 1]");
    }
    if (!(hard_scale >= 0.0 && hard_scale <= 1.0)) throw Error(ErrorKind::Parameter, "hard_scale must be in [0, 1]");
    if (top_k < 1) throw Error(ErrorKind::Parameter, "top_k must be positive");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw Error(ErrorKind::Parameter, "momentum must be in [0, 1]");
    if (!(mix_fraction >= 0.0 && mix_fraction <= 1.0)) {
        throw Error(ErrorKind::Parameter, "mix_fraction must be in [0, 1]");
    }
    if (patience < 0) throw Error(ErrorKind::Parameter, "patience must be nonnegative");
}

void CorpusConfig::validate() const {
    SyntheticSpec probe = sequence;
    probe.class_means = Matrix::Zero(sequence.channels, sequence.num_classes);
    probe.validate();
    if (!(separation >= 0.0)) throw Error(ErrorKind::Parameter, "class separation must be nonnegative");
    if (train_sequences < 0 || test_sequences < 0) throw Error(ErrorKind::Parameter, "sequence counts must be nonnegative");
}

namespace {

// Reads typed members of one JSON object and rejects keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& object, std::string where) : object_(object), where_(std::move(where)) {
        if (!object_.is_object()) throw Error(ErrorKind::Schema, where_ + " must be an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        auto it = object_.find(key);
        if (it == object_.end()) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw Error(ErrorKind::Schema, "");
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer()) throw Error(ErrorKind::Schema, "");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!it->is_number()) throw Error(ErrorKind::Schema, "");
            }
            out = it->get<T>();
        } catch (const std::exception&) {
            throw Error(ErrorKind::Schema, where_ + "." + key + " has the wrong type");
        }
    }

    void read_phase(const char* key, Phase& out) {
        std::string name = to_string(out);
        read(key, name);
        if (name == "pseudo") throw Error(ErrorKind::Schema, where_ + "." + key + " must be warmup or timestamp");
        try {
            out = parse_phase(name);
        } catch (const Error&) {
            throw Error(ErrorKind::Schema, where_ + "." + key + " names an unknown phase '" + name + "'");
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = object_.find(key);
        return it == object_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = object_.begin(); it != object_.end(); ++it) {
            if (!seen_.count(it.key())) throw Error(ErrorKind::Schema, "unknown key " + where_ + "." + it.key());
        }
    }

private:
    const json& object_;
    std::string where_;
    std::set<std::string> seen_;
};

void read_net(const json& j, TcnConfig& n) {
    ObjectReader r(j, "train.net");
    r.read("input_dim", n.input_dim);
    r.read("num_classes", n.num_classes);
    r.read("stages", n.stages);
    r.read("layers_per_stage", n.layers_per_stage);
    r.read("feature_dim", n.feature_dim);
    r.read("kernel_width", n.kernel_width);
    r.read("projector_dim", n.projector_dim);
    r.finish();
}

void read_weights(const json& j, LossWeights& w) {
    ObjectReader r(j, "train.weights");
    r.read("con", w.con);
    r.read("smooth", w.smooth);
    r.read("conf", w.conf);
    r.read("truncation", w.truncation);
    r.read("temperature", w.temperature);
    r.finish();
}

void read_train(const json& j, TrainConfig& c) {
    ObjectReader r(j, "train");
    r.read("max_epochs", c.max_epochs);
    r.read("init_epochs", c.init_epochs);
    r.read_phase("first_phase", c.first_phase);
    r.read("lr", c.lr);
    r.read("lr_factor", c.lr_factor);
    r.read("lr_period", c.lr_period);
    if (const json* a = r.child("adam")) {
        ObjectReader ar(*a, "train.adam");
        ar.read("beta1", c.adam.beta1);
        ar.read("beta2", c.adam.beta2);
        ar.read("eps", c.adam.eps);
        ar.finish();
    }
    r.read("batch_size", c.batch_size);
    r.read("crop_length", c.crop_length);
    r.read("seed", c.seed);
    if (const json* n = r.child("net")) read_net(*n, c.net);
    if (const json* w = r.child("weights")) read_weights(*w, c.weights);
    if (const json* o = r.child("ot")) {
        ObjectReader orr(*o, "train.ot");
        orr.read("rho", c.ot.rho);
        orr.read("sigma", c.ot.sigma);
        orr.read("tol", c.ot.tol);
        orr.read("max_iters", c.ot.max_iters);
        orr.finish();
    }
    if (const json* m = r.child("mining")) {
        ObjectReader mr(*m, "train.mining");
        mr.read("anchor_count", c.mining.anchor_count);
        mr.read("hard_negative_fraction", c.mining.hard_negative_fraction);
        mr.read("negative_keep_fraction", c.mining.negative_keep_fraction);
        mr.read("random_anchor_fraction", c.mining.random_anchor_fraction);
        mr.finish();
    }
    r.read("hard_scale", c.hard_scale);
    r.read("top_k", c.top_k);
    r.read("momentum", c.momentum);
    r.read("normalize_cams", c.normalize_cams);
    r.read("cls_include_background", c.cls_include_background);
    r.read("mix_fraction", c.mix_fraction);
    r.read("pseudo_per_batch", c.pseudo_per_batch);
    r.read("patience", c.patience);
    r.finish();
}

void read_corpus(const json& j, CorpusConfig& c) {
    ObjectReader r(j, "corpus");
    r.read("num_classes", c.sequence.num_classes);
    r.read("channels", c.sequence.channels);
    r.read("length", c.sequence.length);
    r.read("min_segment", c.sequence.min_segment);
    r.read("max_segment", c.sequence.max_segment);
    r.read("noise_sigma", c.sequence.noise_sigma);
    r.read("sample_rate_hz", c.sequence.sample_rate_hz);
    r.read("separation", c.separation);
    r.read("means_seed", c.means_seed);
    r.read("train_sequences", c.train_sequences);
    r.read("test_sequences", c.test_sequences);
    r.finish();
}

} // namespace

ConfigFile parse_config(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // nlohmann reports a byte offset; convert it to a line number.
        const auto upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + upto, '\n'));
        throw ParseError(origin, line, "malformed JSON");
    }
    ConfigFile cfg;
    ObjectReader r(doc, "config");
    if (const json* t = r.child("train")) read_train(*t, cfg.train);
    if (const json* c = r.child("corpus")) read_corpus(*c, cfg.corpus);
    r.finish();
    cfg.train.validate();
    cfg.corpus.validate();
    return cfg;
}

ConfigFile load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.string());
}

std::string to_json(const ConfigFile& config) {
    const TrainConfig& t = config.train;
    const CorpusConfig& c = config.corpus;
    json doc;
    doc["train"] = {
        {"max_epochs", t.max_epochs},
        {"init_epochs", t.init_epochs},
        {"first_phase", to_string(t.first_phase)},
        {"lr", t.lr},
        {"lr_factor", t.lr_factor},
        {"lr_period", t.lr_period},
        {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
        {"batch_size", t.batch_size},
        {"crop_length", t.crop_length},
        {"seed", t.seed},
        {"net",
         {{"input_dim", t.net.input_dim},
          {"num_classes", t.net.num_classes},
          {"stages", t.net.stages},
          {"layers_per_stage", t.net.layers_per_stage},
          {"feature_dim", t.net.feature_dim},
          {"kernel_width", t.net.kernel_width},
          {"projector_dim", t.net.projector_dim}}},
        {"weights",
         {{"con", t.weights.con},
          {"smooth", t.weights.smooth},
          {"conf", t.weights.conf},
          {"truncation", t.weights.truncation},
          {"temperature", t.weights.temperature}}},
        {"ot", {{"rho", t.ot.rho}, {"sigma", t.ot.sigma}, {"tol", t.ot.tol}, {"max_iters", t.ot.max_iters}}},
        {"mining",
         {{"anchor_count", t.mining.anchor_count},
          {"hard_negative_fraction", t.mining.hard_negative_fraction},
          {"negative_keep_fraction", t.mining.negative_keep_fraction},
          {"random_anchor_fraction", t.mining.random_anchor_fraction}}},
        {"hard_scale", t.hard_scale},
        {"top_k", t.top_k},
        {"momentum", t.momentum},
        {"normalize_cams", t.normalize_cams},
        {"cls_include_background", t.cls_include_background},
        {"mix_fraction", t.mix_fraction},
        {"pseudo_per_batch", t.pseudo_per_batch},
        {"patience", t.patience},
    };
    doc["corpus"] = {
        {"num_classes", c.sequence.num_classes},
        {"channels", c.sequence.channels},
        {"length", c.sequence.length},
        {"min_segment", c.sequence.min_segment},
        {"max_segment", c.sequence.max_segment},
        {"noise_sigma", c.sequence.noise_sigma},
        {"sample_rate_hz", c.sequence.sample_rate_hz},
        {"separation", c.separation},
        {"means_seed", c.means_seed},
        {"train_sequences", c.train_sequences},
        {"test_sequences", c.test_sequences},
    };
    return doc.dump(2) + "\n";
}

} // namespace wsseg
