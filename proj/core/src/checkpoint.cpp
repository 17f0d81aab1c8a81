#include "wsseg/checkpoint.hpp"

#include "wsseg/error.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

namespace wsseg {

namespace {

constexpr const char* kMagic = "wsseg-checkpoint 1";

void put(std::ostream& out, double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    out.write(buf, res.ptr - buf);
}

void write_tensors(std::ostream& out, const std::string& prefix, const NetworkParams& params) {
    for (const auto& t : params.tensors()) {
        out << "tensor " << prefix << '.' << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
        // Column-major, one column per line.
        for (Index c = 0; c < t.cols; ++c) {
            for (Index r = 0; r < t.rows; ++r) {
                if (r) out << ' ';
                put(out, t.data[c * t.rows + r]);
            }
            out << '\n';
        }
    }
}

class LineReader {
public:
    LineReader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

    std::vector<std::string_view> next() {
        if (!std::getline(in_, line_)) fail("unexpected end of file");
        ++number_;
        if (!line_.empty() && line_.back() == '\r') line_.pop_back();
        std::vector<std::string_view> fields;
        std::string_view rest(line_);
        while (!rest.empty()) {
            const auto sp = rest.find(' ');
            fields.push_back(rest.substr(0, sp));
            if (sp == std::string_view::npos) break;
            rest.remove_prefix(sp + 1);
        }
        return fields;
    }

    std::vector<std::string_view> expect(std::string_view key, std::size_t count) {
        auto f = next();
        if (f.empty() || f[0] != key || f.size() != count + 1) {
            fail("expected '" + std::string(key) + "' with " + std::to_string(count) + " values");
        }
        return f;
    }

    template <class T>
    T number(std::string_view s) {
        T value{};
        auto res = std::from_chars(s.data(), s.data() + s.size(), value);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail("bad number '" + std::string(s) + "'");
        return value;
    }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(origin_, number_, what); }

private:
    std::istream& in_;
    std::string origin_;
    std::string line_;
    std::size_t number_ = 0;
};

void read_tensors(LineReader& r, const std::string& prefix, NetworkParams& params) {
    for (auto& t : params.tensors()) {
        const auto head = r.expect("tensor", 3);
        if (head[1] != prefix + "." + t.name) r.fail("expected tensor " + prefix + "." + t.name);
        if (r.number<Index>(head[2]) != t.rows || r.number<Index>(head[3]) != t.cols) {
            r.fail("shape mismatch for " + t.name);
        }
        for (Index c = 0; c < t.cols; ++c) {
            const auto vals = r.next();
            if (static_cast<Index>(vals.size()) != t.rows) r.fail("wrong value count in " + t.name);
            for (Index row = 0; row < t.rows; ++row) t.data[c * t.rows + row] = r.number<double>(vals[static_cast<std::size_t>(row)]);
        }
    }
}

} // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    const TcnConfig& n = ckpt.net;
    const TrainState& s = ckpt.state;
    out << kMagic << '\n';
    out << "net " << n.input_dim << ' ' << n.num_classes << ' ' << n.stages << ' ' << n.layers_per_stage << ' '
        << n.feature_dim << ' ' << n.kernel_width << ' ' << n.projector_dim << '\n';
    out << "epoch " << s.epoch << '\n';
    out << "lr ";
    put(out, s.lr);
    out << "\nbest ";
    put(out, s.best_f_m);
    out << ' ' << s.best_epoch << ' ' << s.stale_epochs << '\n';
    out << "adam_step " << s.adam.step << '\n';
    write_tensors(out, "params", s.params);
    write_tensors(out, "adam_m", s.adam.m);
    write_tensors(out, "adam_v", s.adam.v);

    const PrototypeBank& b = s.bank;
    out << "bank " << b.num_classes() << ' ' << b.dim() << ' ';
    put(out, b.momentum());
    out << '\n';
    for (int c = 0; c < b.num_classes(); ++c) {
        out << (b.initialized(c) ? 1 : 0);
        for (int d = 0; d < b.dim(); ++d) {
            out << ' ';
            put(out, b.prototypes()(c, d));
        }
        out << '\n';
    }
    out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in, const std::string& origin) {
    LineReader r(in, origin);
    {
        const auto magic = r.next();
        if (magic.size() != 2 || magic[0] != "wsseg-checkpoint") r.fail("not a checkpoint file");
        if (magic[1] != "1") r.fail("unsupported checkpoint version " + std::string(magic[1]));
    }
    Checkpoint ck;
    const auto net = r.expect("net", 7);
    ck.net.input_dim = r.number<int>(net[1]);
    ck.net.num_classes = r.number<int>(net[2]);
    ck.net.stages = r.number<int>(net[3]);
    ck.net.layers_per_stage = r.number<int>(net[4]);
    ck.net.feature_dim = r.number<int>(net[5]);
    ck.net.kernel_width = r.number<int>(net[6]);
    ck.net.projector_dim = r.number<int>(net[7]);
    try {
        ck.net.validate();
    } catch (const Error& e) {
        r.fail(e.what());
    }

    TrainState& s = ck.state;
    s.epoch = r.number<int>(r.expect("epoch", 1)[1]);
    s.lr = r.number<double>(r.expect("lr", 1)[1]);
    const auto best = r.expect("best", 3);
    s.best_f_m = r.number<double>(best[1]);
    s.best_epoch = r.number<int>(best[2]);
    s.stale_epochs = r.number<int>(best[3]);
    s.adam.step = r.number<std::int64_t>(r.expect("adam_step", 1)[1]);

    s.params = NetworkParams::zeros(ck.net);
    s.adam.m = NetworkParams::zeros(ck.net);
    s.adam.v = NetworkParams::zeros(ck.net);
    read_tensors(r, "params", s.params);
    read_tensors(r, "adam_m", s.adam.m);
    read_tensors(r, "adam_v", s.adam.v);

    const auto bank = r.expect("bank", 3);
    const int classes = r.number<int>(bank[1]);
    const int dim = r.number<int>(bank[2]);
    const double momentum = r.number<double>(bank[3]);
    if (classes != ck.net.num_classes || dim != ck.net.projector_dim) r.fail("bank shape differs from the network");
    Matrix rows(classes, dim);
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        const auto vals = r.next();
        if (static_cast<int>(vals.size()) != dim + 1) r.fail("wrong value count in bank row");
        const int flag = r.number<int>(vals[0]);
        if (flag != 0 && flag != 1) r.fail("bank flag must be 0 or 1");
        flags[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(flag);
        for (int d = 0; d < dim; ++d) rows(c, d) = r.number<double>(vals[static_cast<std::size_t>(d + 1)]);
    }
    s.bank = PrototypeBank::restore(std::move(rows), std::move(flags), momentum);
    r.expect("end", 0);
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
    write_checkpoint(out, ckpt);
    if (!out) throw Error(ErrorKind::Io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
    return read_checkpoint(in, path.string());
}

} // namespace wsseg
