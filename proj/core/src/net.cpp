#include "wsseg/net.hpp"

#include "wsseg/error.hpp"

#include <atomic>
#include <cmath>
#include <random>

namespace wsseg {

namespace {

std::uint64_t next_generation() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

constexpr double kNormFloor = 1e-12;

// Column range [dst, dst + n) of the output reads input columns [dst + offset, ...).
struct TapRange {
    Index dst;
    Index n;
};

TapRange tap_range(Index length, Index offset) {
    const Index begin = std::max<Index>(0, -offset);
    const Index end = std::min<Index>(length, length - offset);
    return {begin, std::max<Index>(0, end - begin)};
}

void conv_backward(const Matrix& input, const std::vector<Matrix>& taps, int dilation, const Matrix& d_out,
                   std::vector<Matrix>& d_taps, Vector& d_bias, Matrix& d_input) {
    const Index length = input.cols();
    const Index half = static_cast<Index>(taps.size() / 2);
    d_bias += d_out.rowwise().sum();
    for (std::size_t k = 0; k < taps.size(); ++k) {
        const Index offset = (static_cast<Index>(k) - half) * dilation;
        const auto r = tap_range(length, offset);
        if (r.n == 0) continue;
        d_taps[k].noalias() += d_out.middleCols(r.dst, r.n) * input.middleCols(r.dst + offset, r.n).transpose();
        d_input.middleCols(r.dst + offset, r.n).noalias() += taps[k].transpose() * d_out.middleCols(r.dst, r.n);
    }
}

void fill_uniform(Matrix& m, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
}

void fill_uniform(Vector& v, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index i = 0; i < v.size(); ++i) v(i) = u(rng);
}

template <class Params, class Ref, class Visit>
void visit_tensors(Params& p, Visit&& visit) {
    auto mat = [&](const std::string& name, auto& m) { visit(Ref{name, m.data(), m.rows(), m.cols()}); };
    for (std::size_t s = 0; s < p.stages.size(); ++s) {
        auto& st = p.stages[s];
        const std::string pre = "stage" + std::to_string(s) + ".";
        mat(pre + "in.w", st.in_w);
        mat(pre + "in.b", st.in_b);
        for (std::size_t l = 0; l < st.layers.size(); ++l) {
            auto& layer = st.layers[l];
            const std::string lp = pre + "layer" + std::to_string(l) + ".";
            for (std::size_t k = 0; k < layer.conv_w.size(); ++k) {
                mat(lp + "conv" + std::to_string(k) + ".w", layer.conv_w[k]);
            }
            mat(lp + "conv.b", layer.conv_b);
            mat(lp + "res.w", layer.res_w);
            mat(lp + "res.b", layer.res_b);
        }
        mat(pre + "out.w", st.out_w);
        mat(pre + "out.b", st.out_b);
    }
    mat("ml.w", p.ml_w);
    mat("ml.b", p.ml_b);
    mat("proj.w1", p.proj_w1);
    mat("proj.b1", p.proj_b1);
    mat("proj.w2", p.proj_w2);
    mat("proj.b2", p.proj_b2);
}

} // namespace

void TcnConfig::validate() const {
    if (input_dim < 1 || num_classes < 1 || feature_dim < 1 || projector_dim < 1) {
        throw Error(ErrorKind::Parameter, "network dimensions must be positive");
    }
    if (stages < 1 || layers_per_stage < 1) {
        throw Error(ErrorKind::Parameter, "network needs at least one stage and one layer");
    }
    if (kernel_width < 1 || kernel_width % 2 == 0) {
        throw Error(ErrorKind::Parameter, "kernel width must be odd for symmetric padding");
    }
    if (layers_per_stage > 30) {
        throw Error(ErrorKind::Parameter, "layers_per_stage too large for 2^l dilation");
    }
}

NetworkParams NetworkParams::zeros(const TcnConfig& cfg) {
    cfg.validate();
    const Index f = cfg.feature_dim;
    const Index c = cfg.num_classes;
    NetworkParams p;
    p.stages.resize(static_cast<std::size_t>(cfg.stages));
    for (int s = 0; s < cfg.stages; ++s) {
        auto& st = p.stages[static_cast<std::size_t>(s)];
        st.in_w = Matrix::Zero(f, s == 0 ? cfg.input_dim : c);
        st.in_b = Vector::Zero(f);
        st.layers.resize(static_cast<std::size_t>(cfg.layers_per_stage));
        for (auto& layer : st.layers) {
            layer.conv_w.assign(static_cast<std::size_t>(cfg.kernel_width), Matrix::Zero(f, f));
            layer.conv_b = Vector::Zero(f);
            layer.res_w = Matrix::Zero(f, f);
            layer.res_b = Vector::Zero(f);
        }
        st.out_w = Matrix::Zero(c, f);
        st.out_b = Vector::Zero(c);
    }
    p.ml_w = Matrix::Zero(c, f);
    p.ml_b = Vector::Zero(c);
    p.proj_w1 = Matrix::Zero(f, f);
    p.proj_b1 = Vector::Zero(f);
    p.proj_w2 = Matrix::Zero(cfg.projector_dim, f);
    p.proj_b2 = Vector::Zero(cfg.projector_dim);
    return p;
}

NetworkParams NetworkParams::initialize(const TcnConfig& cfg, std::uint64_t seed) {
    NetworkParams p = zeros(cfg);
    std::mt19937_64 rng(seed);
    auto bound = [](Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
    for (auto& st : p.stages) {
        fill_uniform(st.in_w, bound(st.in_w.cols()), rng);
        fill_uniform(st.in_b, bound(st.in_w.cols()), rng);
        for (auto& layer : st.layers) {
            const Index fan_in = layer.conv_w.front().cols() * static_cast<Index>(layer.conv_w.size());
            for (auto& w : layer.conv_w) fill_uniform(w, bound(fan_in), rng);
            fill_uniform(layer.conv_b, bound(fan_in), rng);
            fill_uniform(layer.res_w, bound(layer.res_w.cols()), rng);
            fill_uniform(layer.res_b, bound(layer.res_w.cols()), rng);
        }
        fill_uniform(st.out_w, bound(st.out_w.cols()), rng);
        fill_uniform(st.out_b, bound(st.out_w.cols()), rng);
    }
    fill_uniform(p.ml_w, bound(p.ml_w.cols()), rng);
    fill_uniform(p.ml_b, bound(p.ml_w.cols()), rng);
    fill_uniform(p.proj_w1, bound(p.proj_w1.cols()), rng);
    fill_uniform(p.proj_b1, bound(p.proj_w1.cols()), rng);
    fill_uniform(p.proj_w2, bound(p.proj_w2.cols()), rng);
    fill_uniform(p.proj_b2, bound(p.proj_w2.cols()), rng);
    return p;
}

std::vector<TensorRef> NetworkParams::tensors() {
    std::vector<TensorRef> out;
    visit_tensors<NetworkParams, TensorRef>(*this, [&](TensorRef r) { out.push_back(std::move(r)); });
    return out;
}

std::vector<ConstTensorRef> NetworkParams::tensors() const {
    std::vector<ConstTensorRef> out;
    visit_tensors<const NetworkParams, ConstTensorRef>(*this, [&](ConstTensorRef r) { out.push_back(std::move(r)); });
    return out;
}

bool NetworkParams::shapes_match(const TcnConfig& cfg) const {
    const NetworkParams ref = zeros(cfg);
    const auto mine = tensors();
    const auto theirs = ref.tensors();
    if (mine.size() != theirs.size()) return false;
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i].rows != theirs[i].rows || mine[i].cols != theirs[i].cols) return false;
    }
    return true;
}

bool NetworkParams::all_finite() const {
    for (const auto& t : tensors()) {
        for (Index i = 0; i < t.size(); ++i)
            if (!std::isfinite(t.data[i])) return false;
    }
    return true;
}

void NetworkParams::set_zero() {
    for (auto& t : tensors()) std::fill(t.data, t.data + t.size(), 0.0);
}

NetworkParams& NetworkParams::operator+=(const NetworkParams& other) {
    auto mine = tensors();
    const auto theirs = other.tensors();
    if (mine.size() != theirs.size()) throw Error(ErrorKind::Structural, "parameter layouts differ");
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i].size() != theirs[i].size()) throw Error(ErrorKind::Structural, "parameter shapes differ");
        for (Index j = 0; j < mine[i].size(); ++j) mine[i].data[j] += theirs[i].data[j];
    }
    return *this;
}

NetworkParams& NetworkParams::operator*=(double scale) {
    for (auto& t : tensors())
        for (Index j = 0; j < t.size(); ++j) t.data[j] *= scale;
    return *this;
}

Matrix dilated_conv(const Matrix& input, const std::vector<Matrix>& taps, const Vector& bias, int dilation) {
    if (dilation < 1) throw Error(ErrorKind::Structural, "dilation must be >= 1");
    if (taps.empty() || taps.size() % 2 == 0) throw Error(ErrorKind::Structural, "kernel width must be odd");
    for (const auto& w : taps) {
        if (w.cols() != input.rows() || w.rows() != bias.size()) {
            throw Error(ErrorKind::Structural, "convolution weight shape does not match input");
        }
    }
    const Index length = input.cols();
    const Index half = static_cast<Index>(taps.size() / 2);
    Matrix out = bias.replicate(1, length);
    for (std::size_t k = 0; k < taps.size(); ++k) {
        const Index offset = (static_cast<Index>(k) - half) * dilation;
        const auto r = tap_range(length, offset);
        if (r.n == 0) continue;
        out.middleCols(r.dst, r.n).noalias() += taps[k] * input.middleCols(r.dst + offset, r.n);
    }
    return out;
}

Matrix dilated_residual_layer(const Matrix& input, const ResidualLayerParams& params, int dilation) {
    if (params.res_w.rows() != input.rows() || params.res_w.cols() != params.conv_b.size()) {
        throw Error(ErrorKind::Structural, "residual weight shape does not match input");
    }
    const Matrix act = dilated_conv(input, params.conv_w, params.conv_b, dilation).cwiseMax(0.0);
    Matrix out = input + params.res_w * act;
    out.colwise() += params.res_b;
    return out;
}

Vector global_average_pool(const Matrix& features) {
    if (features.cols() < 1) throw Error(ErrorKind::Structural, "global average pool needs T >= 1");
    return features.rowwise().mean();
}

Matrix softmax_columns(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Index t = 0; t < logits.cols(); ++t) {
        const double m = logits.col(t).maxCoeff();
        out.col(t) = (logits.col(t).array() - m).exp().matrix();
        out.col(t) /= out.col(t).sum();
    }
    return out;
}

Network::Network(TcnConfig config, NetworkParams params)
    : config_(config), params_(std::move(params)), generation_(next_generation()) {
    config_.validate();
    if (!params_.shapes_match(config_)) {
        throw Error(ErrorKind::Structural, "parameter shapes do not match the network configuration");
    }
}

Network::Network(TcnConfig config, std::uint64_t seed)
    : Network(config, NetworkParams::initialize(config, seed)) {}

NetworkParams& Network::mutable_params() {
    generation_ = next_generation();
    return params_;
}

ForwardPass Network::forward(const Matrix& x) const {
    if (x.rows() != config_.input_dim) {
        throw Error(ErrorKind::Structural, "input has " + std::to_string(x.rows()) + " channels, network expects " +
                                               std::to_string(config_.input_dim));
    }
    if (x.cols() < 1) throw Error(ErrorKind::Structural, "input sequence is empty");

    ForwardPass pass;
    auto& cache = pass.cache;
    auto& out = pass.outputs;
    cache.generation = generation_;
    cache.stages.resize(params_.stages.size());

    Matrix stage_input = x;
    for (std::size_t s = 0; s < params_.stages.size(); ++s) {
        const auto& st = params_.stages[s];
        auto& sc = cache.stages[s];
        Matrix h = st.in_w * stage_input;
        h.colwise() += st.in_b;
        sc.input = std::move(stage_input);
        sc.layers.resize(st.layers.size());
        for (std::size_t l = 0; l < st.layers.size(); ++l) {
            const auto& layer = st.layers[l];
            auto& lc = sc.layers[l];
            lc.activation = dilated_conv(h, layer.conv_w, layer.conv_b, config_.dilation(static_cast<int>(l))).cwiseMax(0.0);
            Matrix next = h;
            next.noalias() += layer.res_w * lc.activation;
            next.colwise() += layer.res_b;
            lc.input = std::move(h);
            h = std::move(next);
        }
        Matrix logits = st.out_w * h;
        logits.colwise() += st.out_b;
        out.stage_probs.push_back(softmax_columns(logits));
        sc.output = std::move(h);
        stage_input = out.stage_probs.back();
    }

    out.features = cache.stages.back().output;
    out.ml_logits = params_.ml_w * global_average_pool(out.features) + params_.ml_b;

    cache.proj_pre = params_.proj_w1 * out.features;
    cache.proj_pre.colwise() += params_.proj_b1;
    cache.proj_raw = params_.proj_w2 * cache.proj_pre.cwiseMax(0.0);
    cache.proj_raw.colwise() += params_.proj_b2;
    cache.proj_norm = cache.proj_raw.colwise().norm().transpose();
    out.embeddings.resize(cache.proj_raw.rows(), cache.proj_raw.cols());
    for (Index t = 0; t < cache.proj_raw.cols(); ++t) {
        out.embeddings.col(t) = cache.proj_raw.col(t) / std::max(cache.proj_norm(t), kNormFloor);
    }
    return pass;
}

NetworkParams Network::backward(const ForwardPass& pass, const OutputGradients& grads) const {
    const auto& cache = pass.cache;
    if (cache.generation != generation_) {
        throw Error(ErrorKind::Consistency, "forward cache is stale: parameters changed after the forward pass");
    }
    const auto& out = pass.outputs;
    const Index length = out.features.cols();
    const Index f = config_.feature_dim;
    const std::size_t n_stages = params_.stages.size();

    if (!grads.stage_probs.empty() && grads.stage_probs.size() != n_stages) {
        throw Error(ErrorKind::Structural, "one probability gradient per stage expected");
    }

    NetworkParams g = NetworkParams::zeros(config_);
    Matrix d_features = grads.features.size() ? grads.features : Matrix::Zero(f, length);
    if (d_features.rows() != f || d_features.cols() != length) {
        throw Error(ErrorKind::Structural, "feature gradient shape mismatch");
    }

    if (grads.ml_logits.size()) {
        const Vector pooled = global_average_pool(out.features);
        g.ml_w.noalias() += grads.ml_logits * pooled.transpose();
        g.ml_b += grads.ml_logits;
        const Vector d_pooled = params_.ml_w.transpose() * grads.ml_logits;
        d_features.colwise() += d_pooled / static_cast<double>(length);
    }

    if (grads.embeddings.size()) {
        const Matrix& v = out.embeddings;
        Matrix d_raw(v.rows(), v.cols());
        for (Index t = 0; t < length; ++t) {
            const double n = cache.proj_norm(t);
            if (n > kNormFloor) {
                const double proj = v.col(t).dot(grads.embeddings.col(t));
                d_raw.col(t) = (grads.embeddings.col(t) - proj * v.col(t)) / n;
            } else {
                d_raw.col(t) = grads.embeddings.col(t) / kNormFloor;
            }
        }
        const Matrix hidden = cache.proj_pre.cwiseMax(0.0);
        g.proj_w2.noalias() += d_raw * hidden.transpose();
        g.proj_b2 += d_raw.rowwise().sum();
        Matrix d_pre = params_.proj_w2.transpose() * d_raw;
        d_pre = (cache.proj_pre.array() > 0.0).select(d_pre, 0.0);
        g.proj_w1.noalias() += d_pre * out.features.transpose();
        g.proj_b1 += d_pre.rowwise().sum();
        d_features.noalias() += params_.proj_w1.transpose() * d_pre;
    }

    // Gradient wrt the probabilities a stage emitted (from losses plus the next stage's input).
    Matrix d_probs_carry;
    for (std::size_t si = n_stages; si-- > 0;) {
        const auto& st = params_.stages[si];
        const auto& sc = cache.stages[si];
        auto& gs = g.stages[si];
        const Matrix& probs = out.stage_probs[si];

        Matrix d_probs = Matrix::Zero(probs.rows(), probs.cols());
        if (!grads.stage_probs.empty() && grads.stage_probs[si].size()) d_probs += grads.stage_probs[si];
        if (d_probs_carry.size()) d_probs += d_probs_carry;

        // Softmax Jacobian, column-wise: dz = p * (dp - <p, dp>).
        const Eigen::RowVectorXd inner = (probs.array() * d_probs.array()).colwise().sum();
        Matrix d_logits = (probs.array() * (d_probs.rowwise() - inner).array()).matrix();

        gs.out_w.noalias() += d_logits * sc.output.transpose();
        gs.out_b += d_logits.rowwise().sum();
        Matrix d_h = st.out_w.transpose() * d_logits;
        if (si + 1 == n_stages) d_h += d_features;

        for (std::size_t l = st.layers.size(); l-- > 0;) {
            const auto& layer = st.layers[l];
            const auto& lc = sc.layers[l];
            auto& gl = gs.layers[l];
            gl.res_w.noalias() += d_h * lc.activation.transpose();
            gl.res_b += d_h.rowwise().sum();
            Matrix d_act = layer.res_w.transpose() * d_h;
            d_act = (lc.activation.array() > 0.0).select(d_act, 0.0);
            conv_backward(lc.input, layer.conv_w, config_.dilation(static_cast<int>(l)), d_act, gl.conv_w, gl.conv_b, d_h);
        }

        gs.in_w.noalias() += d_h * sc.input.transpose();
        gs.in_b += d_h.rowwise().sum();
        if (si > 0) d_probs_carry = st.in_w.transpose() * d_h;
    }
    return g;
}

} // namespace wsseg
