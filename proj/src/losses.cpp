#include "canids/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace canids {
namespace {

void validate_batch(const Tensor& z, const std::vector<int>& labels, double tau) {
    if (z.ndim() != 2) throw LossError("embeddings must be a (N,D) matrix");
    int N = z.dim(0);
    if (N < 2) throw LossError("contrastive batch needs at least two samples");
    if (static_cast<int>(labels.size()) != N) throw LossError("label count does not match batch");
    if (!(tau > 0.0 && tau <= 10.0)) throw LossError("temperature must lie in (0, 10]");
    for (int64_t i = 0; i < z.numel(); ++i)
        if (!std::isfinite(z[i])) throw LossError("non-finite embedding value");
}

}  // namespace

SupConResult supcon_loss(const Tensor& z, const std::vector<int>& labels, double tau,
                         bool with_grad) {
    validate_batch(z, labels, tau);
    int N = z.dim(0);
    int D = z.dim(1);

    // similarity matrix in double, s[i][k] = z_i . z_k / tau
    std::vector<double> s(static_cast<size_t>(N) * N, 0.0);
    for (int i = 0; i < N; ++i) {
        const float* zi = z.row(i);
        for (int j = i + 1; j < N; ++j) {
            const float* zj = z.row(j);
            double d = 0.0;
            for (int c = 0; c < D; ++c)
                d += static_cast<double>(zi[c]) * static_cast<double>(zj[c]);
            d /= tau;
            s[static_cast<size_t>(i) * N + j] = d;
            s[static_cast<size_t>(j) * N + i] = d;
        }
    }

    SupConResult res;
    if (with_grad) res.grad.resize(z.shape());

    std::vector<double> coeff(static_cast<size_t>(N));
    std::vector<double> gr(static_cast<size_t>(D));
    for (int i = 0; i < N; ++i) {
        int positives = 0;
        for (int j = 0; j < N; ++j)
            if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
                ++positives;
        if (positives == 0) continue;  // singleton anchor contributes nothing

        const double* si = s.data() + static_cast<size_t>(i) * N;
        double m = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < N; ++k)
            if (k != i) m = std::max(m, si[k]);
        double sum = 0.0;
        for (int k = 0; k < N; ++k)
            if (k != i) sum += std::exp(si[k] - m);
        double lse = m + std::log(sum);

        double anchor = 0.0;
        for (int j = 0; j < N; ++j)
            if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
                anchor += si[j] - lse;
        res.loss += -anchor / positives;

        if (with_grad) {
            // d loss_i / d s_ik = p_ik - [k positive]/|P(i)|
            for (int k = 0; k < N; ++k) {
                if (k == i) {
                    coeff[static_cast<size_t>(k)] = 0.0;
                    continue;
                }
                double pk = std::exp(si[k] - lse);
                bool pos = labels[static_cast<size_t>(k)] == labels[static_cast<size_t>(i)];
                coeff[static_cast<size_t>(k)] = pk - (pos ? 1.0 / positives : 0.0);
            }
            std::fill(gr.begin(), gr.end(), 0.0);
            for (int k = 0; k < N; ++k) {
                double c = coeff[static_cast<size_t>(k)];
                if (c == 0.0) continue;
                const float* zk = z.row(k);
                float* gk = res.grad.row(k);
                double ci = c / tau;
                for (int d = 0; d < D; ++d) {
                    gr[static_cast<size_t>(d)] += ci * zk[d];
                    gk[d] += static_cast<float>(ci * z.row(i)[d]);
                }
            }
            float* gi = res.grad.row(i);
            for (int d = 0; d < D; ++d) gi[d] += static_cast<float>(gr[static_cast<size_t>(d)]);
        }
    }
    return res;
}

double pairwise_contrastive_loss(const float* u, const float* v, int dim, bool same_class,
                                 double margin) {
    if (dim <= 0) throw LossError("pair loss needs a positive dimension");
    if (margin < 0.0) throw LossError("margin must be non-negative");
    double d2 = 0.0;
    for (int i = 0; i < dim; ++i) {
        double diff = static_cast<double>(u[i]) - static_cast<double>(v[i]);
        d2 += diff * diff;
    }
    if (same_class) return d2;
    double gap = margin - std::sqrt(d2);
    return gap > 0.0 ? gap * gap : 0.0;
}

CeResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels, bool with_grad) {
    if (logits.ndim() != 2) throw LossError("logits must be a (N,C) matrix");
    int N = logits.dim(0);
    int C = logits.dim(1);
    if (N < 1) throw LossError("empty batch");
    if (static_cast<int>(labels.size()) != N) throw LossError("label count does not match batch");

    CeResult res;
    if (with_grad) res.grad.resize(logits.shape());

    std::vector<double> prob(static_cast<size_t>(C));
    for (int i = 0; i < N; ++i) {
        int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= C) throw LossError("label outside logit range");
        const float* row = logits.row(i);
        double m = row[0];
        for (int c = 1; c < C; ++c) m = std::max(m, static_cast<double>(row[c]));
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            prob[static_cast<size_t>(c)] = std::exp(static_cast<double>(row[c]) - m);
            sum += prob[static_cast<size_t>(c)];
        }
        res.loss += -(static_cast<double>(row[y]) - m - std::log(sum));
        if (with_grad) {
            float* g = res.grad.row(i);
            for (int c = 0; c < C; ++c) {
                double pc = prob[static_cast<size_t>(c)] / sum;
                g[c] = static_cast<float>((pc - (c == y ? 1.0 : 0.0)) / N);
            }
        }
    }
    res.loss /= N;
    return res;
}

}  // namespace canids
