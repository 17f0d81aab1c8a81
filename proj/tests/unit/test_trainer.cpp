#include "testing.hpp"

#include "wsseg/checkpoint.hpp"
#include "wsseg/config.hpp"
#include "wsseg/error.hpp"
#include "wsseg/trainer.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

using namespace wsseg;

namespace {

CorpusConfig small_corpus(double sigma) {
    CorpusConfig c;
    c.sequence.num_classes = 3;
    c.sequence.channels = 4;
    c.sequence.length = 160;
    c.sequence.min_segment = 20;
    c.sequence.max_segment = 50;
    c.sequence.noise_sigma = sigma;
    c.separation = 1.0;
    c.train_sequences = 6;
    c.test_sequences = 3;
    return c;
}

TrainConfig small_train(int epochs) {
    TrainConfig t;
    t.net.input_dim = 4;
    t.net.num_classes = 3;
    t.net.stages = 2;
    t.net.layers_per_stage = 4;
    t.net.feature_dim = 8;
    t.net.projector_dim = 8;
    t.max_epochs = epochs;
    t.init_epochs = epochs / 2;
    t.batch_size = 4;
    t.crop_length = 64;
    t.lr = 5e-3;
    t.lr_period = 1;
    t.lr_factor = 0.97;
    t.top_k = 4;
    t.seed = 3;
    t.cls_include_background = true;
    return t;
}

bool same_params(const NetworkParams& a, const NetworkParams& b) {
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i].size() != tb[i].size()) return false;
        for (Index k = 0; k < ta[i].size(); ++k) {
            if (ta[i].data[k] != tb[i].data[k]) return false;
        }
    }
    return true;
}

std::string log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    write_epoch_log_csv(out, log);
    return out.str();
}

} // namespace

TEST(Crops, ShortSequenceIsOneCrop) {
    const TimestampAnnotations ann{{{3, 0}, {40, 1}}};
    EXPECT_EQ(make_crops(ann, 50, 64), (std::vector<Crop>{{0, 0, 50}}));
    EXPECT_THROW(make_crops(ann, 50, 1), Error);
}

TEST(Crops, PropertyCoverAndShareTimestamps) {
    tk::Rng rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        const Index T = tk::uniform_int(rng, 1, 400);
        const Index L = tk::uniform_int(rng, 2, 80);
        const auto ann = tk::random_annotations(rng, T, 3, tk::uniform_int(rng, 1, 20));
        const auto crops = make_crops(ann, T, L, 7);
        ASSERT_FALSE(crops.empty());
        EXPECT_EQ(crops.front().begin, 0);
        EXPECT_EQ(crops.back().end, T);
        for (std::size_t i = 0; i < crops.size(); ++i) {
            EXPECT_EQ(crops[i].sample, 7u);
            EXPECT_GE(crops[i].length(), 1);
            EXPECT_LE(crops[i].length(), L);
            if (i + 1 < crops.size()) {
                // Neighbours overlap in exactly one sample.
                EXPECT_EQ(crops[i + 1].begin, crops[i].end - 1);
            }
        }
    }
}

TEST(Crops, BoundariesPreferTimestamps) {
    const TimestampAnnotations ann{{{10, 0}, {25, 1}, {55, 2}, {70, 0}}};
    const auto crops = make_crops(ann, 100, 40);
    ASSERT_EQ(crops.size(), 4u);
    EXPECT_EQ(crops[0], (Crop{0, 0, 26}));
    EXPECT_EQ(crops[1], (Crop{0, 25, 56}));
    EXPECT_EQ(crops[2], (Crop{0, 55, 71}));
    EXPECT_EQ(crops[3], (Crop{0, 70, 100}));
    // Without a timestamp in reach the crop is cut at full length.
    EXPECT_EQ(make_crops({{{90, 0}}}, 100, 40)[0], (Crop{0, 0, 40}));
}

TEST(Crops, SliceShiftsIntoCropCoordinates) {
    const TimestampAnnotations ann{{{10, 0}, {25, 1}, {55, 2}}};
    const auto s = slice_annotations(ann, 25, 56);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s.entries[0].position, 0);
    EXPECT_EQ(s.entries[0].label, 1);
    EXPECT_EQ(s.entries[1].position, 30);
    EXPECT_TRUE(slice_annotations(ann, 11, 25).entries.empty());
}

TEST(Mix, HalfOfTenSampleSegment) {
    const DenseLabels labels{std::vector<int>(10, 1), 2};
    const TimestampAnnotations ann{{{4, 1}}};
    const auto mixed = mix_supervision(ann, labels, 0.5, 9);
    // The timestamp may or may not be among the five drawn positions.
    EXPECT_GE(mixed.labeled.size(), 5u);
    EXPECT_LE(mixed.labeled.size(), 6u);
    EXPECT_EQ(mixed.timestamps.entries, ann.entries);
    for (const auto& e : mixed.labeled.entries) EXPECT_EQ(e.label, 1);
}

TEST(Mix, ExtremesAndRange) {
    tk::Rng rng(32);
    for (int trial = 0; trial < 100; ++trial) {
        const Index T = tk::uniform_int(rng, 1, 80);
        const DenseLabels labels{tk::random_labels(rng, T, 4, 12), 4};
        const auto ann = sample_timestamps(labels, rng());
        const auto none = mix_supervision(ann, labels, 0.0, rng());
        EXPECT_EQ(none.labeled.entries, ann.entries);
        const auto all = mix_supervision(ann, labels, 1.0, rng());
        ASSERT_EQ(static_cast<Index>(all.labeled.size()), T);
        for (const auto& e : all.labeled.entries) EXPECT_EQ(e.label, labels[e.position]);
        EXPECT_NO_THROW(all.labeled.validate(T, 4));
    }
    const DenseLabels labels{{0, 0}, 1};
    EXPECT_THROW(mix_supervision({{{0, 0}}}, labels, 1.5, 0), Error);
}

TEST(Config, DefaultsValidateAndRejectBadValues) {
    EXPECT_NO_THROW(TrainConfig{}.validate());
    TrainConfig t;
    t.init_epochs = t.max_epochs + 1;
    EXPECT_THROW(t.validate(), Error);
    t = TrainConfig{};
    t.lr_factor = 0.0;
    EXPECT_THROW(t.validate(), Error);
    t = TrainConfig{};
    t.mix_fraction = -0.1;
    EXPECT_THROW(t.validate(), Error);
}

TEST(Config, ParseErrorsCarryLine) {
    try {
        parse_config("{\n\"train\": {\n\"lr\": ,\n}}", "x.json");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(Config, UnknownKeyAndWrongTypeAreSchema) {
    for (const char* text : {R"({"train": {"lr_typo": 1}})", R"({"train": {"max_epochs": 1.5}})",
                             R"({"extra": {}})", R"({"train": {"first_phase": "pseudo"}})"}) {
        try {
            parse_config(text);
            FAIL() << text;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Schema) << text;
        }
    }
}

TEST(Config, JsonRoundTrip) {
    ConfigFile cfg;
    cfg.train = small_train(7);
    cfg.train.first_phase = Phase::Warmup;
    cfg.train.mix_fraction = 0.25;
    cfg.corpus = small_corpus(0.5);
    const std::string text = to_json(cfg);
    const ConfigFile back = parse_config(text);
    EXPECT_EQ(to_json(back), text);
    EXPECT_EQ(back.train.net, cfg.train.net);
    EXPECT_EQ(back.train.first_phase, Phase::Warmup);
    EXPECT_EQ(back.corpus.sequence.noise_sigma, 0.5);
}

TEST(Checkpoint, RoundTripIsExact) {
    const TrainConfig cfg = small_train(2);
    TrainState s = TrainState::fresh(cfg);
    s.epoch = 4;
    s.lr = 0.1 + 0.2;
    s.adam.step = 17;
    std::stringstream buf;
    write_checkpoint(buf, {cfg.net, s});
    const Checkpoint back = read_checkpoint(buf);
    EXPECT_EQ(back.net, cfg.net);
    EXPECT_EQ(back.state.epoch, 4);
    EXPECT_EQ(back.state.lr, s.lr);
    EXPECT_EQ(back.state.adam.step, 17);
    EXPECT_TRUE(same_params(back.state.params, s.params));
    EXPECT_TRUE(same_params(back.state.adam.m, s.adam.m));
}

TEST(Checkpoint, MalformedInputIsParseError) {
    for (const char* text : {"", "not-a-checkpoint 1\n", "wsseg-checkpoint 9\n", "wsseg-checkpoint 1\nnet 1 2\n"}) {
        std::istringstream in(text);
        EXPECT_THROW(read_checkpoint(in, "ck"), ParseError) << text;
    }
    const TrainConfig cfg = small_train(2);
    std::stringstream buf;
    write_checkpoint(buf, {cfg.net, TrainState::fresh(cfg)});
    std::string text = buf.str();
    text.resize(text.size() / 2);
    std::istringstream cut(text);
    EXPECT_THROW(read_checkpoint(cut, "ck"), ParseError);
}

TEST(Trainer, ResolveThreadsHonoursCap) {
    EXPECT_EQ(resolve_threads(3), std::getenv("WSSEG_THREADS") ? resolve_threads(3) : 3);
    ::setenv("WSSEG_THREADS", "2", 1);
    EXPECT_EQ(resolve_threads(8), 2);
    EXPECT_EQ(resolve_threads(1), 1);
    ::setenv("WSSEG_THREADS", "junk", 1);
    EXPECT_EQ(resolve_threads(5), 5);
    ::unsetenv("WSSEG_THREADS");
    EXPECT_GE(resolve_threads(0), 1);
}

TEST(Trainer, UntrainedAccuracyNearChance) {
    CorpusConfig cc = small_corpus(1.0);
    cc.test_sequences = 20;
    const Corpus corpus = generate_corpus(cc, 5);
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        TrainConfig cfg = small_train(1);
        cfg.seed = seed;
        mean += evaluate(cfg, TrainState::fresh(cfg), corpus.test).acc / 8.0;
    }
    EXPECT_NEAR(mean, 1.0 / 3.0, 0.1);
}

TEST(Trainer, EvaluateRejectsClassCountMismatch) {
    const Corpus corpus = generate_corpus(small_corpus(1.0), 5);
    TrainConfig cfg = small_train(1);
    cfg.net.num_classes = 4;
    try {
        evaluate(cfg, TrainState::fresh(cfg), corpus.test);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Structural);
    }
}

TEST(Trainer, ConstantLearningRateAndPhaseSchedule) {
    const Corpus corpus = generate_corpus(small_corpus(0.5), 5);
    TrainConfig cfg = small_train(4);
    cfg.init_epochs = 2;
    cfg.lr_factor = 1.0;
    const auto r = train(corpus.train, {}, cfg);
    ASSERT_EQ(r.log.size(), 4u);
    for (const auto& e : r.log) EXPECT_EQ(e.lr, cfg.lr);
    EXPECT_EQ(r.log[1].phase, Phase::Timestamp);
    EXPECT_EQ(r.log[2].phase, Phase::Pseudo);

    // init_epochs == max_epochs never reaches the pseudo-label phase.
    cfg.init_epochs = cfg.max_epochs = 2;
    cfg.lr_factor = 0.5;
    const auto ts = train(corpus.train, {}, cfg);
    for (const auto& e : ts.log) EXPECT_EQ(e.phase, Phase::Timestamp);
    EXPECT_EQ(ts.log[1].lr, cfg.lr * 0.5);
}

TEST(Trainer, DeterministicForFixedSeed) {
    const Corpus corpus = generate_corpus(small_corpus(0.5), 5);
    const TrainConfig cfg = small_train(3);
    const auto a = train(corpus.train, corpus.test, cfg);
    const auto b = train(corpus.train, corpus.test, cfg);
    EXPECT_EQ(log_csv(a.log), log_csv(b.log));
    EXPECT_TRUE(same_params(a.state.params, b.state.params));
}

TEST(Trainer, ThreadCountDoesNotChangeResults) {
    const Corpus corpus = generate_corpus(small_corpus(0.5), 5);
    const TrainConfig cfg = small_train(2);
    TrainOptions one, three;
    one.threads = 1;
    three.threads = 3;
    const auto a = train(corpus.train, corpus.test, cfg, one);
    const auto b = train(corpus.train, corpus.test, cfg, three);
    EXPECT_EQ(log_csv(a.log), log_csv(b.log));
    EXPECT_TRUE(same_params(a.state.params, b.state.params));
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
    const Corpus corpus = generate_corpus(small_corpus(0.5), 5);
    TrainConfig cfg = small_train(4);
    cfg.init_epochs = 2;
    const auto whole = train(corpus.train, corpus.test, cfg);

    TrainOptions first;
    first.stop_after_epoch = 2;
    const auto head = train(corpus.train, corpus.test, cfg, first);
    ASSERT_EQ(head.state.epoch, 2);
    std::stringstream buf;
    write_checkpoint(buf, {cfg.net, head.state});
    const auto tail = train(corpus.train, corpus.test, cfg, read_checkpoint(buf).state);

    auto joined = head.log;
    joined.insert(joined.end(), tail.log.begin(), tail.log.end());
    EXPECT_EQ(log_csv(joined), log_csv(whole.log));
    EXPECT_TRUE(same_params(tail.state.params, whole.state.params));
}

TEST(Trainer, FitsNoiselessCorpus) {
    CorpusConfig cc = small_corpus(0.0);
    cc.train_sequences = 10;
    const Corpus corpus = generate_corpus(cc, 5);
    const TrainConfig cfg = small_train(60);
    const auto r = train(corpus.train, {}, cfg);
    EXPECT_GE(evaluate(cfg, r.state, corpus.test).f_m, 0.95);
}

TEST(Trainer, PseudoLabelsAreDistributions) {
    const Corpus corpus = generate_corpus(small_corpus(0.5), 5);
    const TrainConfig cfg = small_train(2);
    const auto r = train(corpus.train, {}, cfg);
    const Network net(cfg.net, r.state.params);
    const auto& sample = corpus.train.front();
    const auto pseudo = generate_sequence_pseudo(net.predict(sample.sequence.data), r.state.bank, sample.timestamps, cfg);
    ASSERT_EQ(pseudo.plan.rows(), sample.sequence.length());
    for (Index t = 0; t < pseudo.labels.distribution.cols(); ++t) {
        EXPECT_NEAR(pseudo.labels.distribution.col(t).sum(), 1.0, 1e-9);
    }
}
