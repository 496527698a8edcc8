#include "canids/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "canids/serialize.hpp"
#include "canids/simd/kernels.hpp"

namespace canids {
namespace {

void ensure(Tensor& t, std::vector<int> shape) {
    if (t.shape() != shape) t.resize(std::move(shape));
}

void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            float* col) {
    int N = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                float* dst = col + static_cast<size_t>((c * k + ki) * k + kj) * N;
                for (int ho = 0; ho < Ho; ++ho) {
                    int h = ho * stride - pad + ki;
                    if (h < 0 || h >= H) {
                        for (int wo = 0; wo < Wo; ++wo) dst[ho * Wo + wo] = 0.0f;
                        continue;
                    }
                    const float* src = x + static_cast<size_t>(c) * H * W + static_cast<size_t>(h) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        int w = wo * stride - pad + kj;
                        dst[ho * Wo + wo] = (w >= 0 && w < W) ? src[w] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_add(const float* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
                float* x) {
    int N = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const float* src = col + static_cast<size_t>((c * k + ki) * k + kj) * N;
                for (int ho = 0; ho < Ho; ++ho) {
                    int h = ho * stride - pad + ki;
                    if (h < 0 || h >= H) continue;
                    float* dst = x + static_cast<size_t>(c) * H * W + static_cast<size_t>(h) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        int w = wo * stride - pad + kj;
                        if (w >= 0 && w < W) dst[w] += src[ho * Wo + wo];
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_c_, int out_c_, int ksize_, int stride_, int pad_)
    : in_c(in_c_), out_c(out_c_), ksize(ksize_), stride(stride_), pad(pad_) {
    w.resize({out_c, in_c * ksize * ksize});
    gw.resize({out_c, in_c * ksize * ksize});
}

void Conv2d::forward(const Tensor& x, Tensor& y, Workspace& ws) const {
    const auto& k = simd::kernels();
    int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    if (x.dim(1) != in_c) throw ModelError("conv input channels mismatch");
    int Ho = out_size(H), Wo = out_size(W);
    ensure(y, {B, out_c, Ho, Wo});

    int K = in_c * ksize * ksize;
    int N = Ho * Wo;
    ws.ensure(static_cast<size_t>(K) * N);
    size_t in_stride = static_cast<size_t>(in_c) * H * W;
    size_t out_stride = static_cast<size_t>(out_c) * N;
    for (int b = 0; b < B; ++b) {
        im2col(x.data() + b * in_stride, in_c, H, W, ksize, stride, pad, Ho, Wo, ws.col.data());
        k.gemm_nn(out_c, N, K, w.data(), ws.col.data(), y.data() + b * out_stride, false);
    }
}

void Conv2d::backward(const Tensor& x, const Tensor& dy, Tensor* dx, Workspace& ws) {
    const auto& k = simd::kernels();
    int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    int Ho = dy.dim(2), Wo = dy.dim(3);
    int K = in_c * ksize * ksize;
    int N = Ho * Wo;
    ws.ensure(static_cast<size_t>(K) * N);

    if (dx) {
        ensure(*dx, {B, in_c, H, W});
        dx->fill(0.0f);
    }
    size_t in_stride = static_cast<size_t>(in_c) * H * W;
    size_t out_stride = static_cast<size_t>(out_c) * N;
    for (int b = 0; b < B; ++b) {
        const float* dy_b = dy.data() + b * out_stride;
        im2col(x.data() + b * in_stride, in_c, H, W, ksize, stride, pad, Ho, Wo, ws.col.data());
        k.gemm_nt(out_c, K, N, dy_b, ws.col.data(), gw.data(), true);
        if (dx) {
            k.gemm_tn(K, N, out_c, w.data(), dy_b, ws.col2.data(), false);
            col2im_add(ws.col2.data(), in_c, H, W, ksize, stride, pad, Ho, Wo,
                       dx->data() + b * in_stride);
        }
    }
}

void Conv2d::init(Rng& rng) {
    float bound = std::sqrt(6.0f / static_cast<float>(in_c * ksize * ksize));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    gw.fill(0.0f);
}

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels_) : channels(channels_) {
    gamma.resize({channels});
    beta.resize({channels});
    g_gamma.resize({channels});
    g_beta.resize({channels});
    running_mean.resize({channels});
    running_var.resize({channels});
    init();
}

void BatchNorm2d::init() {
    gamma.fill(1.0f);
    beta.fill(0.0f);
    g_gamma.fill(0.0f);
    g_beta.fill(0.0f);
    running_mean.fill(0.0f);
    running_var.fill(1.0f);
}

void BatchNorm2d::forward(const Tensor& x, Tensor& y, bool train) {
    const auto& k = simd::kernels();
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != channels) throw ModelError("batchnorm channel mismatch");
    ensure(y, {B, C, H, W});
    int plane = H * W;
    int64_t n = static_cast<int64_t>(B) * plane;

    if (train) {
        if (n < 2) throw ModelError("batchnorm needs more than one value per channel");
        ensure(mean_, {C});
        ensure(invstd_, {C});
        for (int c = 0; c < C; ++c) {
            double s = 0.0, sq = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* p = x.data() + (static_cast<size_t>(b) * C + c) * plane;
                s += k.reduce_sum(p, plane);
                sq += k.dot(p, p, plane);
            }
            double m = s / static_cast<double>(n);
            double var = sq / static_cast<double>(n) - m * m;
            if (var < 0.0) var = 0.0;
            mean_[c] = static_cast<float>(m);
            invstd_[c] = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            double unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
            running_mean[c] = (1.0f - momentum) * running_mean[c] + momentum * static_cast<float>(m);
            running_var[c] =
                (1.0f - momentum) * running_var[c] + momentum * static_cast<float>(unbiased);
        }
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < C; ++c) {
                float a = gamma[c] * invstd_[c];
                float sh = beta[c] - a * mean_[c];
                size_t off = (static_cast<size_t>(b) * C + c) * plane;
                k.scale_shift(x.data() + off, a, sh, y.data() + off, plane);
            }
        }
    } else {
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < C; ++c) {
                float inv = 1.0f / std::sqrt(running_var[c] + eps);
                float a = gamma[c] * inv;
                float sh = beta[c] - a * running_mean[c];
                size_t off = (static_cast<size_t>(b) * C + c) * plane;
                k.scale_shift(x.data() + off, a, sh, y.data() + off, plane);
            }
        }
    }
}

void BatchNorm2d::backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    const auto& k = simd::kernels();
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    ensure(dx, {B, C, H, W});
    int plane = H * W;
    double n = static_cast<double>(B) * plane;

    for (int c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_x = 0.0;
        for (int b = 0; b < B; ++b) {
            size_t off = (static_cast<size_t>(b) * C + c) * plane;
            sum_dy += k.reduce_sum(dy.data() + off, plane);
            sum_dy_x += k.dot(dy.data() + off, x.data() + off, plane);
        }
        double m = mean_[c];
        double istd = invstd_[c];
        double sum_dy_xhat = istd * (sum_dy_x - m * sum_dy);

        g_gamma[c] += static_cast<float>(sum_dy_xhat);
        g_beta[c] += static_cast<float>(sum_dy);

        // dx = g*istd*dy - (g*istd/n)*(sum_dy + xhat*sum_dy_xhat)
        double g = gamma[c];
        float a = static_cast<float>(g * istd);
        float bx = static_cast<float>(-g * istd * istd * sum_dy_xhat / n);
        float cc = static_cast<float>(-(g * istd / n) * (sum_dy - sum_dy_xhat * istd * m));
        for (int b = 0; b < B; ++b) {
            size_t off = (static_cast<size_t>(b) * C + c) * plane;
            k.scale_shift(dy.data() + off, a, cc, dx.data() + off, plane);
            k.axpy(bx, x.data() + off, dx.data() + off, plane);
        }
    }
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_f_, int out_f_, bool bias) : in_f(in_f_), out_f(out_f_), has_bias(bias) {
    w.resize({out_f, in_f});
    gw.resize({out_f, in_f});
    if (has_bias) {
        b.resize({out_f});
        gb.resize({out_f});
    }
}

void Linear::forward(const Tensor& x, Tensor& y) const {
    const auto& k = simd::kernels();
    int B = x.dim(0);
    if (x.dim(1) != in_f) throw ModelError("linear input width mismatch");
    ensure(y, {B, out_f});
    k.gemm_nt(B, out_f, in_f, x.data(), w.data(), y.data(), false);
    if (has_bias)
        for (int i = 0; i < B; ++i) k.axpy(1.0f, b.data(), y.row(i), out_f);
}

void Linear::backward(const Tensor& x, const Tensor& dy, Tensor* dx) {
    const auto& k = simd::kernels();
    int B = x.dim(0);
    k.gemm_tn(out_f, in_f, B, dy.data(), x.data(), gw.data(), true);
    if (has_bias)
        for (int i = 0; i < B; ++i) k.axpy(1.0f, dy.row(i), gb.data(), out_f);
    if (dx) {
        ensure(*dx, {B, in_f});
        k.gemm_nn(B, in_f, out_f, dy.data(), w.data(), dx->data(), false);
    }
}

void Linear::init(Rng& rng) {
    float bound = std::sqrt(6.0f / static_cast<float>(in_f));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    gw.fill(0.0f);
    if (has_bias) {
        b.fill(0.0f);
        gb.fill(0.0f);
    }
}

// -------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(int in_c, int out_c, int stride)
    : conv1(in_c, out_c, 3, stride, 1),
      conv2(out_c, out_c, 3, 1, 1),
      bn1(out_c),
      bn2(out_c) {
    if (stride != 1 || in_c != out_c) {
        proj.emplace(in_c, out_c, 1, stride, 0);
        proj_bn.emplace(out_c);
    }
}

const Tensor& ResidualBlock::forward(const Tensor& x, bool train, Workspace& ws) {
    const auto& k = simd::kernels();
    conv1.forward(x, c1_, ws);
    bn1.forward(c1_, a1_, train);
    k.relu(a1_.data(), a1_.data(), static_cast<int>(a1_.numel()));
    conv2.forward(a1_, c2_, ws);
    bn2.forward(c2_, y_, train);
    if (proj) {
        proj->forward(x, p_, ws);
        proj_bn->forward(p_, g1_, train);
        k.add(y_.data(), g1_.data(), y_.data(), static_cast<int>(y_.numel()));
    } else {
        k.add(y_.data(), x.data(), y_.data(), static_cast<int>(y_.numel()));
    }
    k.relu(y_.data(), y_.data(), static_cast<int>(y_.numel()));
    return y_;
}

void ResidualBlock::backward(const Tensor& x, const Tensor& dy, Tensor& dx, Workspace& ws) {
    const auto& k = simd::kernels();
    int n_out = static_cast<int>(y_.numel());

    ensure(g2_, y_.shape());
    k.relu_bwd(y_.data(), dy.data(), g2_.data(), n_out);  // grad at the pre-relu sum

    bn2.backward(c2_, g2_, g3_);
    conv2.backward(a1_, g3_, &g1_, ws);
    k.relu_bwd(a1_.data(), g1_.data(), g1_.data(), static_cast<int>(g1_.numel()));
    bn1.backward(c1_, g1_, g3_);
    conv1.backward(x, g3_, &dx, ws);

    if (proj) {
        proj_bn->backward(p_, g2_, g3_);
        proj->backward(x, g3_, &g1_, ws);
        k.axpy(1.0f, g1_.data(), dx.data(), static_cast<int>(dx.numel()));
    } else {
        k.axpy(1.0f, g2_.data(), dx.data(), static_cast<int>(dx.numel()));
    }
}

void ResidualBlock::init(Rng& rng) {
    conv1.init(rng);
    bn1.init();
    conv2.init(rng);
    bn2.init();
    if (proj) {
        proj->init(rng);
        proj_bn->init();
    }
}

void ResidualBlock::collect(std::vector<ParamRef>& params, std::vector<ParamRef>& buffers,
                            const std::string& prefix) {
    params.push_back({prefix + "conv1.w", &conv1.w, &conv1.gw, true});
    params.push_back({prefix + "bn1.gamma", &bn1.gamma, &bn1.g_gamma, true});
    params.push_back({prefix + "bn1.beta", &bn1.beta, &bn1.g_beta, true});
    params.push_back({prefix + "conv2.w", &conv2.w, &conv2.gw, true});
    params.push_back({prefix + "bn2.gamma", &bn2.gamma, &bn2.g_gamma, true});
    params.push_back({prefix + "bn2.beta", &bn2.beta, &bn2.g_beta, true});
    buffers.push_back({prefix + "bn1.running_mean", &bn1.running_mean, nullptr, false});
    buffers.push_back({prefix + "bn1.running_var", &bn1.running_var, nullptr, false});
    buffers.push_back({prefix + "bn2.running_mean", &bn2.running_mean, nullptr, false});
    buffers.push_back({prefix + "bn2.running_var", &bn2.running_var, nullptr, false});
    if (proj) {
        params.push_back({prefix + "proj.w", &proj->w, &proj->gw, true});
        params.push_back({prefix + "projbn.gamma", &proj_bn->gamma, &proj_bn->g_gamma, true});
        params.push_back({prefix + "projbn.beta", &proj_bn->beta, &proj_bn->g_beta, true});
        buffers.push_back({prefix + "projbn.running_mean", &proj_bn->running_mean, nullptr, false});
        buffers.push_back({prefix + "projbn.running_var", &proj_bn->running_var, nullptr, false});
    }
}

// ---------------------------------------------------------------- Encoder

namespace {
constexpr std::array<int, 4> kStageWidths = {16, 32, 64, 128};
}

Encoder::Encoder() : stem(1, kStageWidths[0], 3, 1, 1), stem_bn(kStageWidths[0]) {
    blocks.reserve(kNumBlocks);
    int in_c = kStageWidths[0];
    for (int stage = 0; stage < 4; ++stage) {
        int out_c = kStageWidths[static_cast<size_t>(stage)];
        int stride = stage == 0 ? 1 : 2;
        blocks.emplace_back(in_c, out_c, stride);
        blocks.emplace_back(out_c, out_c, 1);
        in_c = out_c;
    }
}

const Tensor& Encoder::forward(const Tensor& x, bool train, Workspace& ws) {
    const auto& k = simd::kernels();
    if (x.ndim() != 4 || x.dim(1) != 1 || x.dim(2) != kWindow || x.dim(3) != kWindow)
        throw ModelError("encoder expects input shaped (B,1,29,29), got " +
                         shape_string(x.shape()));

    stem.forward(x, stem_c_, ws);
    stem_bn.forward(stem_c_, stem_a_, train);
    k.relu(stem_a_.data(), stem_a_.data(), static_cast<int>(stem_a_.numel()));

    const Tensor* cur = &stem_a_;
    for (auto& block : blocks) cur = &block.forward(*cur, train, ws);

    int B = cur->dim(0), C = cur->dim(1), plane = cur->dim(2) * cur->dim(3);
    ensure(r_, {B, C});
    float inv = 1.0f / static_cast<float>(plane);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            r_.at(b, c) = inv * k.reduce_sum(cur->data() + (static_cast<size_t>(b) * C + c) * plane,
                                             plane);
    return r_;
}

void Encoder::backward(const Tensor& x, const Tensor& dr, Workspace& ws) {
    const auto& k = simd::kernels();
    const Tensor& last = blocks.back().output();
    int B = last.dim(0), C = last.dim(1), plane = last.dim(2) * last.dim(3);
    ensure(gpool_, last.shape());
    float inv = 1.0f / static_cast<float>(plane);
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            float g = dr.at(b, c) * inv;
            float* p = gpool_.data() + (static_cast<size_t>(b) * C + c) * plane;
            for (int i = 0; i < plane; ++i) p[i] = g;
        }
    }

    Tensor* dy = &gpool_;
    Tensor* dx = &gstem_;
    for (int i = kNumBlocks - 1; i >= 0; --i) {
        const Tensor& input = i == 0 ? stem_a_ : blocks[static_cast<size_t>(i - 1)].output();
        blocks[static_cast<size_t>(i)].backward(input, *dy, *dx, ws);
        std::swap(dy, dx);
    }
    // *dy now holds the gradient at the stem activation
    k.relu_bwd(stem_a_.data(), dy->data(), dy->data(), static_cast<int>(dy->numel()));
    stem_bn.backward(stem_c_, *dy, *dx);
    stem.backward(x, *dx, nullptr, ws);
}

void Encoder::init(Rng& rng) {
    stem.init(rng);
    stem_bn.init();
    for (auto& b : blocks) b.init(rng);
}

void Encoder::collect(std::vector<ParamRef>& params, std::vector<ParamRef>& buffers,
                      const std::string& prefix) {
    params.push_back({prefix + "stem.conv.w", &stem.w, &stem.gw, true});
    params.push_back({prefix + "stem.bn.gamma", &stem_bn.gamma, &stem_bn.g_gamma, true});
    params.push_back({prefix + "stem.bn.beta", &stem_bn.beta, &stem_bn.g_beta, true});
    buffers.push_back({prefix + "stem.bn.running_mean", &stem_bn.running_mean, nullptr, false});
    buffers.push_back({prefix + "stem.bn.running_var", &stem_bn.running_var, nullptr, false});
    for (int i = 0; i < kNumBlocks; ++i) {
        std::string p = prefix + "s" + std::to_string(i / 2 + 1) + ".b" + std::to_string(i % 2) + ".";
        blocks[static_cast<size_t>(i)].collect(params, buffers, p);
    }
}

int64_t Encoder::param_count() const {
    int64_t n = stem.param_count() + stem_bn.param_count();
    for (const auto& b : blocks) {
        n += b.conv1.param_count() + b.bn1.param_count();
        n += b.conv2.param_count() + b.bn2.param_count();
        if (b.proj) n += b.proj->param_count() + b.proj_bn->param_count();
    }
    return n;
}

std::vector<BatchNorm2d*> Encoder::batchnorms() {
    std::vector<BatchNorm2d*> out{&stem_bn};
    for (auto& b : blocks) {
        out.push_back(&b.bn1);
        out.push_back(&b.bn2);
        if (b.proj_bn) out.push_back(&*b.proj_bn);
    }
    return out;
}

std::string Encoder::arch_string() {
    return "canids-enc-v1:in1x29x29;stem16k3s1p1;widths16,32,64,128;blocks2,2,2,2;repr128";
}

std::array<std::array<int, 3>, 5> Encoder::shape_chain() {
    std::array<std::array<int, 3>, 5> chain{};
    int h = kWindow;
    chain[0] = {kStageWidths[0], h, h};  // after the stride-1 stem
    for (int stage = 0; stage < 4; ++stage) {
        if (stage > 0) h = (h + 2 - 3) / 2 + 1;  // k3 s2 p1 entry block
        chain[static_cast<size_t>(stage) + 1] = {kStageWidths[static_cast<size_t>(stage)], h, h};
    }
    return chain;
}

// -------------------------------------------------------------- Projector

Projector::Projector() : fc1(Encoder::kReprDim, Encoder::kReprDim), fc2(Encoder::kReprDim, Encoder::kReprDim) {}

void l2_normalize_rows(const Tensor& x, Tensor& y, Tensor& norms, bool safe, float eps) {
    const auto& k = simd::kernels();
    int B = x.dim(0), D = x.dim(1);
    ensure(y, {B, D});
    ensure(norms, {B});
    for (int i = 0; i < B; ++i) {
        float n = std::sqrt(k.dot(x.row(i), x.row(i), D));
        norms[i] = n;
        float scale;
        if (safe)
            scale = n > eps ? 1.0f / n : 0.0f;
        else
            scale = 1.0f / (n > eps ? n : eps);
        k.scale_shift(x.row(i), scale, 0.0f, y.row(i), D);
    }
}

void l2_normalize_rows_backward(const Tensor& y, const Tensor& norms, const Tensor& dy,
                                Tensor& dx) {
    const auto& k = simd::kernels();
    int B = y.dim(0), D = y.dim(1);
    ensure(dx, {B, D});
    for (int i = 0; i < B; ++i) {
        float n = norms[i];
        if (n <= 1e-12f) {
            for (int j = 0; j < D; ++j) dx.row(i)[j] = 0.0f;
            continue;
        }
        float proj = k.dot(y.row(i), dy.row(i), D);
        k.scale_shift(dy.row(i), 1.0f / n, 0.0f, dx.row(i), D);
        k.axpy(-proj / n, y.row(i), dx.row(i), D);
    }
}

const Tensor& Projector::forward(const Tensor& r) {
    const auto& k = simd::kernels();
    l2_normalize_rows(r, rn_, norms_in_, /*safe=*/true);
    fc1.forward(rn_, h1_);
    ensure(a1_, h1_.shape());
    k.relu(h1_.data(), a1_.data(), static_cast<int>(h1_.numel()));
    fc2.forward(a1_, v_);
    l2_normalize_rows(v_, z_, norms_out_, /*safe=*/false);
    return z_;
}

void Projector::backward(const Tensor& r, const Tensor& dz, Tensor& dr) {
    const auto& k = simd::kernels();
    (void)r;
    l2_normalize_rows_backward(z_, norms_out_, dz, dv_);
    fc2.backward(a1_, dv_, &da_);
    ensure(dh_, da_.shape());
    k.relu_bwd(a1_.data(), da_.data(), dh_.data(), static_cast<int>(da_.numel()));
    fc1.backward(rn_, dh_, &drn_);
    l2_normalize_rows_backward(rn_, norms_in_, drn_, dr);
}

void Projector::init(Rng& rng) {
    fc1.init(rng);
    fc2.init(rng);
}

void Projector::collect(std::vector<ParamRef>& params, const std::string& prefix) {
    params.push_back({prefix + "fc1.w", &fc1.w, &fc1.gw, true});
    params.push_back({prefix + "fc1.b", &fc1.b, &fc1.gb, true});
    params.push_back({prefix + "fc2.w", &fc2.w, &fc2.gw, true});
    params.push_back({prefix + "fc2.b", &fc2.b, &fc2.gb, true});
}

// ---------------------------------------------------------------- Network

Network::Network(const LabelSpace& labels_)
    : classifier(Encoder::kReprDim, static_cast<int>(labels_.names.size())), labels(labels_) {
    labels.validate();
}

const Tensor& Network::forward_repr(const Tensor& x, bool train) {
    const Tensor& r = encoder.forward(x, train, ws);
    ensure(r_, r.shape());
    std::memcpy(r_.data(), r.data(), static_cast<size_t>(r.numel()) * sizeof(float));
    return r_;
}

const Tensor& Network::forward_logits(const Tensor& x, bool train) {
    forward_repr(x, train);
    classifier.forward(r_, logits_);
    return logits_;
}

const Tensor& Network::forward_embedding(const Tensor& x, bool train) {
    forward_repr(x, train);
    return projector.forward(r_);
}

void Network::backward_from_logits(const Tensor& x, const Tensor& dlogits, bool through_encoder) {
    classifier.backward(r_, dlogits, through_encoder ? &dr_ : nullptr);
    if (through_encoder) encoder.backward(x, dr_, ws);
}

void Network::backward_from_embedding(const Tensor& x, const Tensor& dz) {
    projector.backward(r_, dz, dr_);
    encoder.backward(x, dr_, ws);
}

void Network::zero_grads() {
    for (auto& p : parameters()) p.grad->fill(0.0f);
}

std::vector<ParamRef> Network::parameters() {
    std::vector<ParamRef> params, buffers;
    encoder.collect(params, buffers, "encoder.");
    projector.collect(params, "projector.");
    params.push_back({"classifier.fc.w", &classifier.w, &classifier.gw, true});
    params.push_back({"classifier.fc.b", &classifier.b, &classifier.gb, true});
    return params;
}

std::vector<ParamRef> Network::buffers() {
    std::vector<ParamRef> params, buffers;
    encoder.collect(params, buffers, "encoder.");
    return buffers;
}

int64_t Network::count_parameters() {
    int64_t n = 0;
    for (auto& p : parameters()) n += p.value->numel();
    return n;
}

std::vector<ParamRef> select_parameters(Network& net, int parts) {
    std::vector<ParamRef> out;
    for (auto& p : net.parameters()) {
        bool keep = (p.name.rfind("encoder.", 0) == 0 && (parts & kPartEncoder)) ||
                    (p.name.rfind("projector.", 0) == 0 && (parts & kPartProjector)) ||
                    (p.name.rfind("classifier.", 0) == 0 && (parts & kPartClassifier));
        if (keep) out.push_back(p);
    }
    return out;
}

void init_network(Network& net, uint64_t seed) {
    Rng rng(seed);
    net.encoder.init(rng);
    net.projector.init(rng);
    net.classifier.init(rng);
}

void frames_to_input(const FrameSet& set, const int64_t* indices, int count, Tensor& x) {
    ensure(x, {count, 1, kWindow, kWindow});
    for (int i = 0; i < count; ++i)
        frame_to_floats(set.frames[static_cast<size_t>(indices[i])],
                        x.data() + static_cast<size_t>(i) * kFrameBits);
}

void labels_to_vector(const FrameSet& set, const int64_t* indices, int count,
                      std::vector<int>& out) {
    out.resize(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i)
        out[static_cast<size_t>(i)] = set.frames[static_cast<size_t>(indices[i])].label;
}

// ------------------------------------------------------------- checkpoint

namespace {

constexpr char kCanwMagic[4] = {'C', 'A', 'N', 'W'};
constexpr uint16_t kCanwVersion = 1;
constexpr uint8_t kDtypeF32 = 0;
constexpr uint8_t kDtypeU8 = 1;
constexpr uint8_t kKindParam = 0;
constexpr uint8_t kKindBuffer = 1;

struct Entry {
    std::string name;
    uint8_t dtype = kDtypeF32;
    uint8_t kind = kKindParam;
    std::vector<uint32_t> dims;
    uint64_t offset = 0;

    uint64_t byte_size() const {
        uint64_t n = 1;
        for (uint32_t d : dims) n *= d;
        return dtype == kDtypeF32 ? n * 4 : n;
    }
};

bool part_of(const std::string& name, int parts) {
    if (name.rfind("encoder.", 0) == 0) return parts & kPartEncoder;
    if (name.rfind("projector.", 0) == 0) return parts & kPartProjector;
    if (name.rfind("classifier.", 0) == 0 || name == "meta.labels")
        return parts & kPartClassifier;
    return false;
}

std::vector<ParamRef> all_tensors(Network& net) {
    std::vector<ParamRef> out = net.parameters();
    for (auto& b : net.buffers()) out.push_back(b);
    return out;
}

}  // namespace

void save_checkpoint(Network& net, const std::string& path, int parts) {
    std::vector<Entry> entries;
    std::vector<unsigned char> payload;

    auto append_f32 = [&](const std::string& name, uint8_t kind, const Tensor& t) {
        Entry e;
        e.name = name;
        e.dtype = kDtypeF32;
        e.kind = kind;
        for (int d : t.shape()) e.dims.push_back(static_cast<uint32_t>(d));
        e.offset = payload.size();
        for (int64_t i = 0; i < t.numel(); ++i) {
            uint32_t bits;
            float v = t[i];
            std::memcpy(&bits, &v, 4);
            for (int byte = 0; byte < 4; ++byte)
                payload.push_back(static_cast<unsigned char>(bits >> (8 * byte)));
        }
        entries.push_back(std::move(e));
    };

    for (auto& p : all_tensors(net)) {
        if (!part_of(p.name, parts)) continue;
        append_f32(p.name, p.trainable ? kKindParam : kKindBuffer, *p.value);
    }

    if (parts & kPartClassifier) {
        std::string joined;
        for (size_t i = 0; i < net.labels.names.size(); ++i) {
            if (i) joined += ',';
            joined += net.labels.names[i];
        }
        Entry e;
        e.name = "meta.labels";
        e.dtype = kDtypeU8;
        e.kind = kKindBuffer;
        e.dims.push_back(static_cast<uint32_t>(joined.size()));
        e.offset = payload.size();
        payload.insert(payload.end(), joined.begin(), joined.end());
        entries.push_back(std::move(e));
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelError("cannot open " + path + " for writing");
    io::write_bytes(out, kCanwMagic, 4);
    io::write_le<uint16_t>(out, kCanwVersion);
    io::write_le<uint64_t>(out, io::fnv1a64(Encoder::arch_string()));
    io::write_le<uint64_t>(out, io::fnv1a64(payload.data(), payload.size()));
    io::write_le<uint32_t>(out, static_cast<uint32_t>(entries.size()));
    for (const Entry& e : entries) {
        io::write_str(out, e.name);
        io::write_le<uint16_t>(out, static_cast<uint16_t>(e.dtype | (e.kind << 8)));
        io::write_le<uint32_t>(out, static_cast<uint32_t>(e.dims.size()));
        for (uint32_t d : e.dims) io::write_le<uint32_t>(out, d);
        io::write_le<uint64_t>(out, e.offset);
    }
    io::write_bytes(out, payload.data(), payload.size());
    out.flush();
    if (!out) throw ModelError("write failed: " + path);
}

std::optional<LabelSpace> load_checkpoint(Network& net, const std::string& path, int parts,
                                          bool strict) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open " + path);

    char magic[4];
    io::read_bytes(in, magic, 4);
    if (std::memcmp(magic, kCanwMagic, 4) != 0)
        throw ModelError(path + ": bad magic, not a checkpoint");
    uint16_t version = io::read_le<uint16_t>(in);
    if (version != kCanwVersion)
        throw ModelError(path + ": unsupported checkpoint version " + std::to_string(version));
    uint64_t fingerprint = io::read_le<uint64_t>(in);
    if (fingerprint != io::fnv1a64(Encoder::arch_string()))
        throw ModelError(path + ": architecture fingerprint mismatch");
    uint64_t payload_hash = io::read_le<uint64_t>(in);

    uint32_t entry_count = io::read_le<uint32_t>(in);
    std::map<std::string, Entry> entries;
    uint64_t payload_size = 0;
    for (uint32_t i = 0; i < entry_count; ++i) {
        Entry e;
        e.name = io::read_str(in);
        uint16_t dk = io::read_le<uint16_t>(in);
        e.dtype = static_cast<uint8_t>(dk & 0xff);
        e.kind = static_cast<uint8_t>(dk >> 8);
        uint32_t ndim = io::read_le<uint32_t>(in);
        for (uint32_t d = 0; d < ndim; ++d) e.dims.push_back(io::read_le<uint32_t>(in));
        e.offset = io::read_le<uint64_t>(in);
        payload_size = std::max(payload_size, e.offset + e.byte_size());
        entries[e.name] = std::move(e);
    }

    std::vector<unsigned char> payload(payload_size);
    if (payload_size) io::read_bytes(in, payload.data(), payload.size());
    if (io::fnv1a64(payload.data(), payload.size()) != payload_hash)
        throw ModelError(path + ": payload checksum mismatch, file is corrupted");

    for (auto& p : all_tensors(net)) {
        if (!part_of(p.name, parts)) continue;
        auto it = entries.find(p.name);
        if (it == entries.end()) {
            if (strict) throw ModelError(path + ": missing tensor " + p.name);
            continue;
        }
        const Entry& e = it->second;
        std::vector<int> dims(e.dims.begin(), e.dims.end());
        if (e.dtype != kDtypeF32 || dims != p.value->shape())
            throw ModelError(path + ": shape mismatch for " + p.name + ", file has " +
                             shape_string(dims) + " model has " + shape_string(p.value->shape()));
        const unsigned char* src = payload.data() + e.offset;
        for (int64_t i = 0; i < p.value->numel(); ++i) {
            uint32_t bits = static_cast<uint32_t>(src[4 * i]) |
                            (static_cast<uint32_t>(src[4 * i + 1]) << 8) |
                            (static_cast<uint32_t>(src[4 * i + 2]) << 16) |
                            (static_cast<uint32_t>(src[4 * i + 3]) << 24);
            float v;
            std::memcpy(&v, &bits, 4);
            (*p.value)[i] = v;
        }
    }

    std::optional<LabelSpace> file_labels;
    auto it = entries.find("meta.labels");
    if (it != entries.end()) {
        const Entry& e = it->second;
        std::string joined(reinterpret_cast<const char*>(payload.data() + e.offset),
                           static_cast<size_t>(e.byte_size()));
        LabelSpace ls;
        size_t start = 0;
        while (start <= joined.size()) {
            size_t comma = joined.find(',', start);
            if (comma == std::string::npos) {
                ls.names.push_back(joined.substr(start));
                break;
            }
            ls.names.push_back(joined.substr(start, comma - start));
            start = comma + 1;
        }
        file_labels = ls;
        if (parts & kPartClassifier) {
            ls.validate();
            if (ls.size() != net.classifier.out_f)
                throw ModelError(path + ": label count does not match classifier width");
            net.labels = ls;
        }
    }
    return file_labels;
}

uint64_t checkpoint_fingerprint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open " + path);
    char magic[4];
    io::read_bytes(in, magic, 4);
    if (std::memcmp(magic, kCanwMagic, 4) != 0)
        throw ModelError(path + ": bad magic, not a checkpoint");
    io::read_le<uint16_t>(in);
    return io::read_le<uint64_t>(in);
}

std::optional<LabelSpace> checkpoint_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open " + path);
    char magic[4];
    io::read_bytes(in, magic, 4);
    if (std::memcmp(magic, kCanwMagic, 4) != 0)
        throw ModelError(path + ": bad magic, not a checkpoint");
    uint16_t version = io::read_le<uint16_t>(in);
    if (version != kCanwVersion)
        throw ModelError(path + ": unsupported checkpoint version " + std::to_string(version));
    io::read_le<uint64_t>(in);
    io::read_le<uint64_t>(in);

    uint32_t entry_count = io::read_le<uint32_t>(in);
    Entry meta;
    bool found = false;
    for (uint32_t i = 0; i < entry_count; ++i) {
        Entry e;
        e.name = io::read_str(in);
        uint16_t dk = io::read_le<uint16_t>(in);
        e.dtype = static_cast<uint8_t>(dk & 0xff);
        e.kind = static_cast<uint8_t>(dk >> 8);
        uint32_t ndim = io::read_le<uint32_t>(in);
        for (uint32_t d = 0; d < ndim; ++d) e.dims.push_back(io::read_le<uint32_t>(in));
        e.offset = io::read_le<uint64_t>(in);
        if (e.name == "meta.labels") {
            meta = e;
            found = true;
        }
    }
    if (!found) return std::nullopt;

    std::streampos payload_start = in.tellg();
    in.seekg(payload_start + static_cast<std::streamoff>(meta.offset));
    std::string joined(static_cast<size_t>(meta.byte_size()), '\0');
    io::read_bytes(in, joined.data(), joined.size());

    LabelSpace ls;
    size_t start = 0;
    while (start <= joined.size()) {
        size_t comma = joined.find(',', start);
        if (comma == std::string::npos) {
            ls.names.push_back(joined.substr(start));
            break;
        }
        ls.names.push_back(joined.substr(start, comma - start));
        start = comma + 1;
    }
    ls.validate();
    return ls;
}

}  // namespace canids
