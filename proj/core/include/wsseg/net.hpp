#pragma once

#include "wsseg/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace wsseg {

struct TcnConfig {
    int input_dim = 6;
    int num_classes = 5;
    int stages = 2;
    int layers_per_stage = 10;
    int feature_dim = 64;
    int kernel_width = 3;
    int projector_dim = 32;

    // Layer l (0-based) of every stage uses dilation 2^l.
    int dilation(int layer) const { return 1 << layer; }
    void validate() const;
    bool operator==(const TcnConfig&) const = default;
};

// Dilated convolution + ReLU followed by a 1x1 residual projection.
// conv_w holds one F x F tap matrix per kernel position.
struct ResidualLayerParams {
    std::vector<Matrix> conv_w;  // kernel_width matrices, F x F
    Vector conv_b;
    Matrix res_w;                // F x F (1x1 convolution)
    Vector res_b;
};

struct StageParams {
    Matrix in_w;  // F x input channels (D for stage 0, C afterwards)
    Vector in_b;
    std::vector<ResidualLayerParams> layers;
    Matrix out_w;  // C x F sample classifier
    Vector out_b;
};

// View onto one parameter tensor; used by the optimizer and checkpoints.
template <class T>
struct BasicTensorRef {
    std::string name;
    T* data;
    Index rows;
    Index cols;

    Index size() const { return rows * cols; }
};
using TensorRef = BasicTensorRef<double>;
using ConstTensorRef = BasicTensorRef<const double>;

struct NetworkParams {
    std::vector<StageParams> stages;
    Matrix ml_w;  // C x F multi-label head; also the CAM weights
    Vector ml_b;
    Matrix proj_w1;  // F x F
    Vector proj_b1;
    Matrix proj_w2;  // projector_dim x F
    Vector proj_b2;

    static NetworkParams zeros(const TcnConfig& cfg);
    // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    static NetworkParams initialize(const TcnConfig& cfg, std::uint64_t seed);

    // Stable order: stages, layers, heads. Names are unique.
    std::vector<TensorRef> tensors();
    std::vector<ConstTensorRef> tensors() const;

    bool shapes_match(const TcnConfig& cfg) const;
    bool all_finite() const;
    void set_zero();
    NetworkParams& operator+=(const NetworkParams& other);
    NetworkParams& operator*=(double scale);
};

struct NetworkOutputs {
    Matrix features;                // Z_S, F x T (final stage)
    std::vector<Matrix> stage_probs;  // C x T per stage; the last entry is canonical
    Vector ml_logits;               // length C
    Matrix embeddings;              // V, projector_dim x T, unit columns

    const Matrix& probs() const { return stage_probs.back(); }
};

// Upstream gradients; empty members are treated as zero.
struct OutputGradients {
    std::vector<Matrix> stage_probs;
    Vector ml_logits;
    Matrix features;
    Matrix embeddings;
};

// Everything backward() needs from the forward pass.
struct ForwardCache {
    struct Layer {
        Matrix input;        // H_{l-1}
        Matrix activation;   // H^_l after ReLU
    };
    struct Stage {
        Matrix input;
        std::vector<Layer> layers;
        Matrix output;       // H_L
    };
    std::vector<Stage> stages;
    Matrix proj_pre;         // W1 Z + b1 before ReLU
    Matrix proj_raw;         // unnormalized embeddings
    Vector proj_norm;
    std::uint64_t generation = 0;
};

struct ForwardPass {
    NetworkOutputs outputs;
    ForwardCache cache;
};

// Same-length dilated convolution with symmetric zero padding of dilation*(K-1)/2.
Matrix dilated_conv(const Matrix& input, const std::vector<Matrix>& taps, const Vector& bias, int dilation);

Matrix dilated_residual_layer(const Matrix& input, const ResidualLayerParams& params, int dilation);

Vector global_average_pool(const Matrix& features);

// Column-wise softmax.
Matrix softmax_columns(const Matrix& logits);

class Network {
public:
    Network(TcnConfig config, NetworkParams params);
    Network(TcnConfig config, std::uint64_t seed);

    const TcnConfig& config() const { return config_; }
    const NetworkParams& params() const { return params_; }
    // Any mutable access invalidates outstanding forward caches.
    NetworkParams& mutable_params();
    std::uint64_t generation() const { return generation_; }

    // x is D x T.
    ForwardPass forward(const Matrix& x) const;
    NetworkOutputs predict(const Matrix& x) const { return forward(x).outputs; }

    // Gradients for every parameter tensor (same layout as params()).
    NetworkParams backward(const ForwardPass& pass, const OutputGradients& grads) const;

private:
    TcnConfig config_;
    NetworkParams params_;
    std::uint64_t generation_ = 1;
};

} // namespace wsseg
