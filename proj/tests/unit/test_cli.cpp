#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;

#ifdef WSSEG_CLI_PATH

namespace {

const char* kConfig = R"({
  "corpus": {"num_classes": 3, "channels": 4, "length": 160, "min_segment": 20, "max_segment": 50,
             "noise_sigma": 0.0, "train_sequences": 10, "test_sequences": 3},
  "train": {"max_epochs": 60, "init_epochs": 30, "batch_size": 4, "crop_length": 64, "lr": 0.005,
            "lr_period": 1, "lr_factor": 0.97, "top_k": 4, "seed": 3, "cls_include_background": true,
            "net": {"input_dim": 4, "num_classes": 3, "stages": 2, "layers_per_stage": 4, "feature_dim": 8,
                    "projector_dim": 8}}
})";

struct Outcome {
    int code;
    std::string err;
};

fs::path scratch() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "wsseg_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        std::ofstream(d / "config.json") << kConfig;
        return d;
    }();
    return dir;
}

Outcome run(const std::string& args) {
    const fs::path err = scratch() / "stderr.txt";
    const std::string cmd = std::string(WSSEG_CLI_PATH) + " " + args + " >/dev/null 2>" + err.string();
    const int status = std::system(cmd.c_str());
    std::ifstream in(err);
    std::stringstream text;
    text << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, text.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string tree_bytes(const fs::path& root) {
    std::string all;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) all += fs::relative(f, root).string() + "\n" + slurp(f);
    return all;
}

double report_f_m(const fs::path& csv) {
    std::ifstream in(csv);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    std::stringstream cells(row);
    std::string cell;
    for (int i = 0; i < 3; ++i) std::getline(cells, cell, ',');
    return std::stod(cell);
}

} // namespace

TEST(Cli, PipelineOnNoiselessCorpus) {
    const fs::path d = scratch();
    const std::string cfg = " --config " + (d / "config.json").string();
    ASSERT_EQ(run("synth" + cfg + " --out " + (d / "data").string()).code, 0);
    const std::string before = tree_bytes(d / "data");
    ASSERT_EQ(run("train" + cfg + " --data " + (d / "data").string() + " --out " + (d / "run").string()).code, 0);
    const std::string ckpt = " --checkpoint " + (d / "run" / "checkpoint.txt").string();
    const std::string data = " --data " + (d / "data").string();
    ASSERT_EQ(run("eval" + cfg + data + ckpt + " --out " + (d / "eval").string()).code, 0);
    EXPECT_GE(report_f_m(d / "eval" / "report.csv"), 0.95);
    EXPECT_EQ(run("pseudo" + cfg + data + ckpt + " --out " + (d / "pseudo").string()).code, 0);
    EXPECT_EQ(run("cams" + cfg + data + ckpt + " --out " + (d / "cams").string()).code, 0);
    EXPECT_EQ(run("report " + (d / "eval").string() + " --out " + (d / "summary").string()).code, 0);
    EXPECT_TRUE(fs::exists(d / "summary" / "summary.csv"));
    // Nothing above writes into the dataset.
    EXPECT_EQ(tree_bytes(d / "data"), before);

    // Same seed, same bytes.
    ASSERT_EQ(run("synth" + cfg + " --out " + (d / "data2").string()).code, 0);
    EXPECT_EQ(tree_bytes(d / "data2"), before);
    ASSERT_EQ(run("train" + cfg + data + " --out " + (d / "run2").string()).code, 0);
    EXPECT_EQ(slurp(d / "run2" / "checkpoint.txt"), slurp(d / "run" / "checkpoint.txt"));
    EXPECT_EQ(slurp(d / "run2" / "epoch_log.csv"), slurp(d / "run" / "epoch_log.csv"));
}

TEST(Cli, MissingCheckpointNamesPath) {
    const fs::path d = scratch();
    const std::string missing = (d / "nowhere" / "checkpoint.txt").string();
    const Outcome r = run("eval --data " + d.string() + " --checkpoint " + missing + " --out " + (d / "x").string());
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST(Cli, HelpExitsZero) {
    EXPECT_EQ(run("--help").code, 0);
    for (const char* sub : {"synth", "train", "eval", "pseudo", "cams", "report"}) {
        EXPECT_EQ(run(std::string(sub) + " --help").code, 0) << sub;
    }
    EXPECT_NE(run("").code, 0);
    EXPECT_NE(run("bogus").code, 0);
}

#else

TEST(Cli, NotBuilt) { GTEST_SKIP() << "wsseg tool not built"; }

#endif
