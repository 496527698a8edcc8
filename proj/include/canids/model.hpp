#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "canids/framing.hpp"
#include "canids/rng.hpp"
#include "canids/tensor.hpp"

namespace canids {

// Compact residual encoder over 29x29 binary frames, with a projection head
// for contrastive training and a linear classifier head. All math is 32-bit
// float; forward and backward are written per sample on top of the simd GEMM
// kernels, so eval outputs do not depend on batch composition.

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;  // null for buffers (running statistics)
    bool trainable = true;
};

// Shared scratch for im2col/col2im and per-sample GEMM staging.
struct Workspace {
    std::vector<float> col;
    std::vector<float> col2;
    void ensure(size_t n) {
        if (col.size() < n) col.resize(n);
        if (col2.size() < n) col2.resize(n);
    }
};

class Conv2d {
public:
    Conv2d(int in_c, int out_c, int ksize, int stride, int pad);

    void forward(const Tensor& x, Tensor& y, Workspace& ws) const;
    // Accumulates the weight gradient; writes dx (overwriting) unless null.
    void backward(const Tensor& x, const Tensor& dy, Tensor* dx, Workspace& ws);

    int out_size(int in) const { return (in + 2 * pad - ksize) / stride + 1; }
    void init(Rng& rng);
    int64_t param_count() const { return w.numel(); }

    int in_c, out_c, ksize, stride, pad;
    Tensor w;   // (out_c, in_c*ksize*ksize), no bias
    Tensor gw;
};

class BatchNorm2d {
public:
    explicit BatchNorm2d(int channels);

    // Train mode normalizes with batch statistics and updates the running
    // estimates; eval mode is a fixed affine map from the running estimates.
    void forward(const Tensor& x, Tensor& y, bool train);
    void backward(const Tensor& x, const Tensor& dy, Tensor& dx);

    void init();
    int64_t param_count() const { return gamma.numel() + beta.numel(); }

    int channels;
    float eps = 1e-5f;
    float momentum = 0.1f;  // a 1/t schedule turns the update into a plain average
    Tensor gamma, beta, g_gamma, g_beta;
    Tensor running_mean, running_var;

private:
    Tensor mean_, invstd_;  // batch statistics cached for backward
};

class Linear {
public:
    Linear(int in_f, int out_f, bool bias = true);

    void forward(const Tensor& x, Tensor& y) const;  // x (B,in) -> y (B,out)
    void backward(const Tensor& x, const Tensor& dy, Tensor* dx);

    void init(Rng& rng);
    int64_t param_count() const { return w.numel() + b.numel(); }

    int in_f, out_f;
    bool has_bias;
    Tensor w;  // (out_f, in_f)
    Tensor b;
    Tensor gw, gb;
};

class ResidualBlock {
public:
    ResidualBlock(int in_c, int out_c, int stride);

    const Tensor& forward(const Tensor& x, bool train, Workspace& ws);
    void backward(const Tensor& x, const Tensor& dy, Tensor& dx, Workspace& ws);
    const Tensor& output() const { return y_; }

    void init(Rng& rng);
    void collect(std::vector<ParamRef>& params, std::vector<ParamRef>& buffers,
                 const std::string& prefix);

    Conv2d conv1, conv2;
    BatchNorm2d bn1, bn2;
    std::optional<Conv2d> proj;
    std::optional<BatchNorm2d> proj_bn;

private:
    Tensor c1_, a1_, c2_, p_, y_;  // forward caches
    Tensor g1_, g2_, g3_;          // backward scratch
};

// Stem 1->16 then stages of two blocks at widths 16/32/64/128, stride 2 at
// each stage entry, global average pool to a 128-d representation.
class Encoder {
public:
    Encoder();

    const Tensor& forward(const Tensor& x, bool train, Workspace& ws);
    // dr is (B,128); gradients are accumulated into the layer grads. The
    // gradient w.r.t. the input frame is not materialized.
    void backward(const Tensor& x, const Tensor& dr, Workspace& ws);

    void init(Rng& rng);
    void collect(std::vector<ParamRef>& params, std::vector<ParamRef>& buffers,
                 const std::string& prefix);
    int64_t param_count() const;
    std::vector<BatchNorm2d*> batchnorms();

    static std::string arch_string();
    // (channels, height, width) after the stem and after each stage
    static std::array<std::array<int, 3>, 5> shape_chain();

    static constexpr int kReprDim = 128;
    static constexpr int kNumBlocks = 8;

    Conv2d stem;
    BatchNorm2d stem_bn;
    std::vector<ResidualBlock> blocks;

private:
    Tensor stem_c_, stem_a_, r_;
    Tensor gstem_, gpool_;
};

// r -> safe L2 normalize -> 128 -> ReLU -> 128 -> L2 normalize -> z.
// A zero representation stays zero after the input normalize.
class Projector {
public:
    Projector();

    const Tensor& forward(const Tensor& r);
    void backward(const Tensor& r, const Tensor& dz, Tensor& dr);

    void init(Rng& rng);
    void collect(std::vector<ParamRef>& params, const std::string& prefix);
    int64_t param_count() const { return fc1.param_count() + fc2.param_count(); }

    Linear fc1, fc2;

private:
    Tensor rn_, h1_, a1_, v_, z_;
    Tensor norms_in_, norms_out_;
    Tensor dv_, da_, dh_, drn_;
};

// Row-wise L2 normalization helpers shared by projector and training code.
// The safe variant maps rows with norm <= eps to zero instead of dividing.
void l2_normalize_rows(const Tensor& x, Tensor& y, Tensor& norms, bool safe, float eps = 1e-12f);
void l2_normalize_rows_backward(const Tensor& y, const Tensor& norms, const Tensor& dy, Tensor& dx);

class Network {
public:
    Network(const LabelSpace& labels);

    Encoder encoder;
    Projector projector;
    Linear classifier;  // kReprDim -> labels.size()
    LabelSpace labels;

    // Forward entry points; results stay valid until the next call.
    const Tensor& forward_repr(const Tensor& x, bool train);      // (B,128)
    const Tensor& forward_logits(const Tensor& x, bool train);    // (B,C), un-normalized r
    const Tensor& forward_embedding(const Tensor& x, bool train); // (B,128) unit rows

    void backward_from_logits(const Tensor& x, const Tensor& dlogits, bool through_encoder);
    void backward_from_embedding(const Tensor& x, const Tensor& dz);

    void zero_grads();
    std::vector<ParamRef> parameters();
    std::vector<ParamRef> buffers();
    int64_t count_parameters();  // trainable elements only, all components

    const Tensor& repr() const { return r_; }

    Workspace ws;

private:
    Tensor r_, logits_, dr_;
};

void init_network(Network& net, uint64_t seed);

// Builds a (B,1,29,29) input tensor from frames picked by index.
void frames_to_input(const FrameSet& set, const int64_t* indices, int count, Tensor& x);
void labels_to_vector(const FrameSet& set, const int64_t* indices, int count,
                      std::vector<int>& out);

// Checkpoint container. Layout, little-endian:
//   "CANW" | u16 version | u64 arch fingerprint | u64 payload hash
//   | u32 entry_count
//   | entries: u16 name_len + name | u8 dtype (0=f32, 1=u8) | u8 kind
//   |          (0=param, 1=buffer) | u32 ndim | u32 dims[] | u64 byte offset
//   | payload bytes
// The fingerprint hashes the encoder architecture string; label names ride
// along as a u8 buffer entry so a checkpoint knows its own class names.
enum CheckpointPart : int {
    kPartEncoder = 1,
    kPartProjector = 2,
    kPartClassifier = 4,
};

// Trainable parameters of the selected components only.
std::vector<ParamRef> select_parameters(Network& net, int parts);

void save_checkpoint(Network& net, const std::string& path, int parts);
// Fills the tensors of the requested parts from the file. In strict mode
// every requested tensor must be present; extra file entries outside the
// requested parts are ignored. Returns the label space stored in the file,
// when present.
std::optional<LabelSpace> load_checkpoint(Network& net, const std::string& path, int parts,
                                          bool strict = true);
uint64_t checkpoint_fingerprint(const std::string& path);

// Label space stored in a checkpoint, without touching any model. Empty when
// the file was saved without its classifier.
std::optional<LabelSpace> checkpoint_labels(const std::string& path);

}  // namespace canids
