#include "wsseg/trainer.hpp"

#include "wsseg/cam.hpp"
#include "wsseg/contrast.hpp"
#include "wsseg/losses.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace wsseg {

namespace {

constexpr std::uint64_t kInitTag = 0x1000000001ULL;
constexpr std::uint64_t kMixTag = 0x2000000000ULL;

std::string fmt(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

// Everything the per-crop worker needs, built once per run.
struct CropData {
    Crop crop;
    std::string sequence_id;
    Matrix x;
    TimestampAnnotations timestamps;
    TimestampAnnotations labeled;
    PseudoLabels pseudo;
};

struct CropResult {
    NetworkParams grads;
    LossParts parts;
    double loss = 0.0;
    Matrix embeddings;
    Matrix cams;
};

LossParts add(const LossParts& a, const LossParts& b) {
    return {a.cls + b.cls, a.seg + b.seg, a.seg_all + b.seg_all, a.con + b.con, a.smooth + b.smooth, a.conf + b.conf};
}

LossParts scale(const LossParts& a, double s) {
    return {a.cls * s, a.seg * s, a.seg_all * s, a.con * s, a.smooth * s, a.conf * s};
}

Matrix crop_cams(const NetworkOutputs& out, const NetworkParams& params, bool normalize) {
    Matrix cams = compute_cams(out.features, params.ml_w);
    return normalize ? normalize_cams(cams) : cams;
}

CropResult run_crop(const Network& net, const CropData& cd, Phase phase, const PrototypeBank& bank,
                    const TrainConfig& cfg, std::uint64_t seed) {
    const LossParts k = phase_coefficients(phase, cfg.weights);
    const ForwardPass pass = net.forward(cd.x);
    const NetworkOutputs& out = pass.outputs;
    const int num_classes = cfg.net.num_classes;
    const Index length = cd.x.cols();

    CropResult r;
    OutputGradients g;
    g.stage_probs.reserve(out.stage_probs.size());
    for (const Matrix& probs : out.stage_probs) {
        Matrix grad = Matrix::Zero(num_classes, length);
        if (k.seg > 0.0) {
            const LossValue v = l_seg_timestamps(probs, cd.labeled);
            r.parts.seg += v.value;
            grad += k.seg * v.grad;
        }
        if (k.seg_all > 0.0) {
            const LossValue v = l_seg_all(probs, cd.pseudo);
            r.parts.seg_all += v.value;
            grad += k.seg_all * v.grad;
        }
        if (k.smooth > 0.0 && length >= 2) {
            const LossValue v = l_smooth(probs, cfg.weights.truncation);
            r.parts.smooth += v.value;
            grad += k.smooth * v.grad;
        }
        if (k.conf > 0.0) {
            const ConfidenceLoss c = l_conf(probs, cd.timestamps);
            r.parts.conf += c.loss.value;
            if (!c.degenerate) grad += k.conf * c.loss.grad;
        }
        g.stage_probs.push_back(std::move(grad));
    }

    if (k.cls > 0.0) {
        const LossValue v = l_cls(out.ml_logits, sequence_multilabel(cd.timestamps, num_classes),
                                  cfg.cls_include_background);
        r.parts.cls = v.value;
        g.ml_logits = k.cls * v.grad;
    }

    r.cams = crop_cams(out, net.params(), cfg.normalize_cams);
    if (k.con > 0.0) {
        const std::vector<int> mask = pseudo_mask(r.cams);
        const ContrastBatch batch = mine_pairs(out.embeddings, mask, out.probs(), cd.timestamps, bank, seed, cfg.mining);
        const ContrastLoss v = info_nce(batch, out.embeddings, bank, cfg.weights.temperature);
        r.parts.con = v.value;
        g.embeddings = k.con * v.grad_embeddings;
    }

    r.loss = k.cls * r.parts.cls + k.seg * r.parts.seg + k.seg_all * r.parts.seg_all + k.con * r.parts.con +
             k.smooth * r.parts.smooth + k.conf * r.parts.conf;
    r.grads = net.backward(pass, g);
    r.embeddings = out.embeddings;
    return r;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next++; i < n; i = next++) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& adam, double lr, const AdamConfig& cfg) {
    ++adam.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
    auto p = params.tensors();
    const auto g = grads.tensors();
    auto m = adam.m.tensors();
    auto v = adam.v.tensors();
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (Index j = 0; j < p[i].size(); ++j) {
            const double gj = g[i].data[j];
            double& mj = m[i].data[j];
            double& vj = v[i].data[j];
            mj = cfg.beta1 * mj + (1.0 - cfg.beta1) * gj;
            vj = cfg.beta2 * vj + (1.0 - cfg.beta2) * gj * gj;
            p[i].data[j] -= lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps);
        }
    }
}

void override_labeled(PseudoLabels& pseudo, const TimestampAnnotations& labeled) {
    for (const auto& e : labeled.entries) {
        pseudo.distribution.col(e.position).setZero();
        pseudo.distribution(e.label, e.position) = 1.0;
        pseudo.hard[static_cast<std::size_t>(e.position)] = 1;
    }
}

void refresh_pseudo(const Network& net, const PrototypeBank& bank, const TrainConfig& cfg, std::vector<CropData*> crops,
                    int threads) {
    parallel_for(crops.size(), threads, [&](std::size_t i) {
        CropData& cd = *crops[i];
        const NetworkOutputs out = net.predict(cd.x);
        cd.pseudo = generate_sequence_pseudo(out, bank, cd.timestamps, cfg).labels;
        override_labeled(cd.pseudo, cd.labeled);
    });
}

std::string batch_dump(int epoch, std::size_t batch, const std::vector<const CropData*>& crops,
                       const std::vector<CropResult>& results) {
    std::ostringstream out;
    out << "epoch " << epoch << " batch " << batch << '\n';
    for (std::size_t i = 0; i < crops.size(); ++i) {
        const auto& p = results[i].parts;
        out << "crop sequence=" << crops[i]->sequence_id << " begin=" << crops[i]->crop.begin
            << " end=" << crops[i]->crop.end << " loss=" << fmt(results[i].loss) << " cls=" << fmt(p.cls)
            << " seg=" << fmt(p.seg) << " seg_all=" << fmt(p.seg_all) << " con=" << fmt(p.con)
            << " smooth=" << fmt(p.smooth) << " conf=" << fmt(p.conf)
            << " grads_finite=" << (results[i].grads.all_finite() ? 1 : 0) << '\n';
    }
    return out.str();
}

} // namespace

Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed) {
    config.validate();
    Corpus corpus;
    SyntheticSpec spec = config.sequence;
    spec.class_means = random_class_means(spec.num_classes, spec.channels, config.separation, config.means_seed);
    corpus.class_means = spec.class_means;
    auto make = [&](const std::string& prefix, int count, std::uint64_t tag, std::vector<TrainSample>& out) {
        for (int i = 0; i < count; ++i) {
            const std::uint64_t s = derive_seed(derive_seed(seed, tag), static_cast<std::uint64_t>(i));
            char id[32];
            std::snprintf(id, sizeof id, "%s%03d", prefix.c_str(), i);
            auto [seq, labels] = generate_synthetic(spec, s, id);
            TrainSample sample;
            sample.timestamps = sample_timestamps(labels, derive_seed(s, 1));
            seq.labels = std::move(labels);
            sample.sequence = std::move(seq);
            out.push_back(std::move(sample));
        }
    };
    make("train", config.train_sequences, 1, corpus.train);
    make("test", config.test_sequences, 2, corpus.test);
    return corpus;
}

MixedSupervision mix_supervision(const TimestampAnnotations& timestamps, const DenseLabels& labels, double fraction,
                                 std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorKind::Parameter, "mix fraction must be in [0, 1]");
    MixedSupervision out;
    out.timestamps = timestamps;
    std::vector<int> label_at(labels.labels.size(), -1);
    for (const auto& e : timestamps.entries) label_at[static_cast<std::size_t>(e.position)] = e.label;

    std::mt19937_64 rng(seed);
    for (const Segment& s : segments_of(labels)) {
        const auto count = static_cast<Index>(std::floor(fraction * static_cast<double>(s.length()) + 1e-9));
        if (count == 0) continue;
        std::vector<Index> pos(static_cast<std::size_t>(s.length()));
        std::iota(pos.begin(), pos.end(), s.start);
        std::shuffle(pos.begin(), pos.end(), rng);
        for (Index i = 0; i < count; ++i) {
            auto& slot = label_at[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])];
            if (slot < 0) slot = s.class_index;
        }
    }
    for (std::size_t t = 0; t < label_at.size(); ++t) {
        if (label_at[t] >= 0) out.labeled.entries.push_back({static_cast<Index>(t), label_at[t]});
    }
    return out;
}

std::vector<Crop> make_crops(const TimestampAnnotations& ann, Index length, Index crop_length, std::size_t sample) {
    if (crop_length < 2) throw Error(ErrorKind::Parameter, "crop length must be at least 2");
    std::vector<Crop> crops;
    Index start = 0;
    while (length - start > crop_length) {
        const Index limit = start + crop_length - 1;
        Index cut = -1;
        for (const auto& e : ann.entries) {
            if (e.position > start && e.position <= limit) cut = e.position;
        }
        if (cut < 0) cut = limit;  // a gap wider than a crop; no timestamp to share
        crops.push_back({sample, start, cut + 1});
        start = cut;
    }
    if (length > 0) crops.push_back({sample, start, length});
    return crops;
}

TimestampAnnotations slice_annotations(const TimestampAnnotations& ann, Index begin, Index end) {
    TimestampAnnotations out;
    for (const auto& e : ann.entries) {
        if (e.position >= begin && e.position < end) out.entries.push_back({e.position - begin, e.label});
    }
    return out;
}

TrainState TrainState::fresh(const TrainConfig& config) {
    config.validate();
    TrainState s;
    s.lr = config.lr;
    s.params = NetworkParams::initialize(config.net, derive_seed(config.seed, kInitTag));
    s.bank = PrototypeBank(config.net.num_classes, config.net.projector_dim, config.momentum);
    s.adam.m = NetworkParams::zeros(config.net);
    s.adam.v = NetworkParams::zeros(config.net);
    return s;
}

int resolve_threads(int requested) {
    int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
    n = std::max(1, n);
    if (const char* env = std::getenv("WSSEG_THREADS")) {
        int cap = 0;
        const char* end = env + std::char_traits<char>::length(env);
        if (std::from_chars(env, end, cap).ec == std::errc() && cap > 0) n = std::min(n, cap);
    }
    return n;
}

SequencePseudo generate_sequence_pseudo(const NetworkOutputs& outputs, const PrototypeBank& bank,
                                        const TimestampAnnotations& ann, const TrainConfig& config) {
    const Index length = outputs.embeddings.cols();
    const int num_classes = config.net.num_classes;
    SequencePseudo result;
    bool ready = !ann.empty();
    for (const auto& e : ann.entries) ready = ready && bank.initialized(e.label);

    if (ready) {
        Matrix columns(bank.dim(), static_cast<Index>(ann.size()));
        for (std::size_t n = 0; n < ann.size(); ++n) columns.col(static_cast<Index>(n)) = bank.prototype(ann.entries[n].label);
        SinkhornOptions opts;
        opts.tol = config.ot.tol;
        opts.max_iters = config.ot.max_iters;
        const TransportPlan tp = solve_order_preserving(outputs.embeddings, columns, config.ot.rho, config.ot.sigma, opts);
        result.plan = Matrix::Zero(length, num_classes);
        for (std::size_t n = 0; n < ann.size(); ++n) {
            result.plan.col(ann.entries[n].label) += tp.plan.col(static_cast<Index>(n));
        }
    } else {
        result.used_transport = false;
        result.plan = outputs.probs().transpose() / static_cast<double>(std::max<Index>(1, length));
    }

    if (ann.empty()) {
        result.labels.distribution = outputs.probs();
        result.labels.hard.assign(static_cast<std::size_t>(length), 0);
    } else {
        result.labels = generate_pseudo_labels(result.plan, ann, config.hard_scale);
    }
    return result;
}

std::vector<int> predict_labels(const Network& network, const SensorSequence& sequence) {
    const NetworkOutputs out = network.predict(sequence.data);
    const Matrix& probs = out.probs();
    std::vector<int> labels(static_cast<std::size_t>(probs.cols()));
    for (Index t = 0; t < probs.cols(); ++t) {
        Index best = 0;
        probs.col(t).maxCoeff(&best);
        labels[static_cast<std::size_t>(t)] = static_cast<int>(best);
    }
    return labels;
}

EvalReport evaluate(const Network& network, const std::vector<TrainSample>& data, const EvalOptions& options) {
    const int num_classes = network.config().num_classes;
    std::vector<std::vector<int>> preds;
    std::vector<std::vector<int>> truths;
    for (const auto& s : data) {
        if (!s.sequence.labels) throw Error(ErrorKind::Structural, "sequence " + s.sequence.id + " has no dense labels");
        if (s.sequence.labels->num_classes != num_classes) {
            throw Error(ErrorKind::Structural, "sequence " + s.sequence.id + " has " +
                                                   std::to_string(s.sequence.labels->num_classes) +
                                                   " classes, network predicts " + std::to_string(num_classes));
        }
        if (s.sequence.channels() != network.config().input_dim) {
            throw Error(ErrorKind::Structural, "sequence " + s.sequence.id + " channel count differs from the network");
        }
        preds.push_back(predict_labels(network, s.sequence));
        truths.push_back(s.sequence.labels->labels);
    }
    return evaluate_labels(preds, truths, num_classes, options);
}

EvalReport evaluate(const TrainConfig& config, const TrainState& state, const std::vector<TrainSample>& data,
                    const EvalOptions& options) {
    return evaluate(Network(config.net, state.params), data, options);
}

TrainResult train(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& validation,
                  const TrainConfig& config, const TrainOptions& options) {
    return train(train_set, validation, config, TrainState::fresh(config), options);
}

TrainResult train(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& validation,
                  const TrainConfig& config, TrainState state, const TrainOptions& options) {
    config.validate();
    if (train_set.empty()) throw Error(ErrorKind::EmptyInput, "no training sequences");
    if (!state.params.shapes_match(config.net)) throw Error(ErrorKind::Consistency, "state does not match the network config");
    const int threads = resolve_threads(options.threads);
    const int num_classes = config.net.num_classes;

    std::vector<CropData> crops;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        const TrainSample& s = train_set[i];
        s.sequence.validate();
        if (s.sequence.channels() != config.net.input_dim) {
            throw Error(ErrorKind::Structural, "sequence " + s.sequence.id + " channel count differs from the network");
        }
        if (s.timestamps.empty()) throw Error(ErrorKind::EmptyInput, "sequence " + s.sequence.id + " has no timestamps");
        s.timestamps.validate(s.sequence.length(), num_classes);

        TimestampAnnotations labeled = s.timestamps;
        if (config.mix_fraction > 0.0) {
            if (!s.sequence.labels) {
                throw Error(ErrorKind::Structural, "mixed supervision needs dense labels on " + s.sequence.id);
            }
            labeled = mix_supervision(s.timestamps, *s.sequence.labels, config.mix_fraction,
                                      derive_seed(config.seed, kMixTag + i))
                          .labeled;
        }
        for (const Crop& c : make_crops(s.timestamps, s.sequence.length(), config.crop_length, i)) {
            CropData cd;
            cd.crop = c;
            cd.sequence_id = s.sequence.id;
            cd.x = s.sequence.data.middleCols(c.begin, c.length());
            cd.timestamps = slice_annotations(s.timestamps, c.begin, c.end);
            cd.labeled = slice_annotations(labeled, c.begin, c.end);
            crops.push_back(std::move(cd));
        }
    }

    Network net(config.net, state.params);
    TrainResult result;
    const int last_epoch = options.stop_after_epoch >= 0 ? std::min(config.max_epochs, options.stop_after_epoch)
                                                         : config.max_epochs;

    for (int epoch = state.epoch + 1; epoch <= last_epoch; ++epoch) {
        const Phase phase = epoch <= config.init_epochs ? config.first_phase : Phase::Pseudo;
        const std::uint64_t epoch_seed = derive_seed(config.seed, static_cast<std::uint64_t>(epoch));

        std::vector<std::size_t> order(crops.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 shuffle_rng(derive_seed(epoch_seed, 0));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        if (phase == Phase::Pseudo && !config.pseudo_per_batch) {
            std::vector<CropData*> all;
            for (auto& cd : crops) all.push_back(&cd);
            refresh_pseudo(net, state.bank, config, all, threads);
        }

        EpochLog log;
        log.epoch = epoch;
        log.phase = phase;
        log.lr = state.lr;

        const auto batch_size = static_cast<std::size_t>(config.batch_size);
        for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += batch_size, ++batch) {
            const std::size_t end = std::min(order.size(), begin + batch_size);
            std::vector<CropData*> members;
            for (std::size_t i = begin; i < end; ++i) members.push_back(&crops[order[i]]);
            if (phase == Phase::Pseudo && config.pseudo_per_batch) refresh_pseudo(net, state.bank, config, members, threads);

            std::vector<CropResult> results(members.size());
            parallel_for(members.size(), threads, [&](std::size_t i) {
                results[i] = run_crop(net, *members[i], phase, state.bank, config, derive_seed(epoch_seed, 1 + begin + i));
            });

            // Ordered reduction keeps the sum independent of the worker count.
            const double inv = 1.0 / static_cast<double>(members.size());
            NetworkParams grads = NetworkParams::zeros(config.net);
            double batch_loss = 0.0;
            for (const auto& r : results) {
                grads += r.grads;
                batch_loss += r.loss;
                log.parts = add(log.parts, r.parts);
            }
            grads *= inv;
            batch_loss *= inv;
            if (!std::isfinite(batch_loss) || !grads.all_finite()) {
                std::vector<const CropData*> view(members.begin(), members.end());
                throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                             std::to_string(batch),
                                         batch_dump(epoch, batch, view, results));
            }
            log.loss += batch_loss * static_cast<double>(members.size());
            log.crops += static_cast<int>(members.size());

            // Prototype estimates pool the whole batch; applied after the batch so every crop saw the same bank.
            Index total = 0;
            for (const auto& r : results) total += r.embeddings.cols();
            Matrix v_all(config.net.projector_dim, total);
            Matrix cams_all(num_classes, total);
            TimestampAnnotations ann_all;
            Index offset = 0;
            for (std::size_t i = 0; i < results.size(); ++i) {
                const Index len = results[i].embeddings.cols();
                v_all.middleCols(offset, len) = results[i].embeddings;
                cams_all.middleCols(offset, len) = results[i].cams;
                for (const auto& e : members[i]->timestamps.entries) ann_all.entries.push_back({e.position + offset, e.label});
                offset += len;
            }
            update_prototypes_from_sequence(state.bank, v_all, cams_all, ann_all, config.top_k);

            adam_step(net.mutable_params(), grads, state.adam, state.lr, config.adam);
        }

        log.parts = scale(log.parts, 1.0 / std::max(1, log.crops));
        log.loss /= std::max(1, log.crops);
        state.epoch = epoch;
        if (epoch % config.lr_period == 0) state.lr *= config.lr_factor;
        state.params = net.params();

        bool stop = false;
        if (!validation.empty()) {
            log.validation = evaluate(net, validation);
            if (log.validation->f_m > state.best_f_m) {
                state.best_f_m = log.validation->f_m;
                state.best_epoch = epoch;
                state.stale_epochs = 0;
            } else {
                ++state.stale_epochs;
            }
            stop = config.patience > 0 && state.stale_epochs >= config.patience;
        }
        result.log.push_back(log);
        if (options.on_epoch) options.on_epoch(log, state);
        if (stop) {
            result.early_stopped = true;
            break;
        }
    }
    result.state = std::move(state);
    return result;
}

void write_epoch_log_csv(std::ostream& out, const std::vector<EpochLog>& log) {
    out << "epoch,phase,lr,crops,loss,cls,seg,seg_all,con,smooth,conf,val_acc,val_f_m,val_ji,val_iou,val_o_u\n";
    for (const auto& e : log) {
        out << e.epoch << ',' << to_string(e.phase) << ',' << fmt(e.lr) << ',' << e.crops << ',' << fmt(e.loss) << ','
            << fmt(e.parts.cls) << ',' << fmt(e.parts.seg) << ',' << fmt(e.parts.seg_all) << ',' << fmt(e.parts.con)
            << ',' << fmt(e.parts.smooth) << ',' << fmt(e.parts.conf);
        if (e.validation) {
            const auto& v = *e.validation;
            out << ',' << fmt(v.acc) << ',' << fmt(v.f_m) << ',' << fmt(v.ji) << ',' << fmt(v.iou) << ',' << fmt(v.o_u);
        } else {
            out << ",,,,,";
        }
        out << '\n';
    }
}

} // namespace wsseg
