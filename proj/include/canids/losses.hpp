#pragma once

#include <stdexcept>
#include <vector>

#include "canids/tensor.hpp"

namespace canids {

// Training objectives. Inputs and gradients are 32-bit tensors; every scalar
// accumulation (dot products, log-sum-exp, reductions) runs in double so the
// values are stable enough for tight finite-difference comparisons.

class LossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SupConResult {
    double loss = 0.0;  // sum over anchors
    Tensor grad;        // (N,D) d loss / d z, empty unless requested
};

// Supervised contrastive loss over a batch of unit embeddings z (N,D):
//   sum_i -1/|P(i)| * sum_{j in P(i)} log( exp(z_i.z_j / tau)
//                                          / sum_{k != i} exp(z_i.z_k / tau) )
// where P(i) are the other samples sharing anchor i's label. Anchors whose
// class appears only once contribute zero. Requires N >= 2, finite inputs
// and tau in (0, 10].
SupConResult supcon_loss(const Tensor& z, const std::vector<int>& labels, double tau,
                         bool with_grad = true);

// Classic two-sample margin loss: d^2 for a positive pair, max(0, margin-d)^2
// for a negative pair, with d the euclidean distance between u and v.
double pairwise_contrastive_loss(const float* u, const float* v, int dim, bool same_class,
                                 double margin);

struct CeResult {
    double loss = 0.0;  // mean over the batch
    Tensor grad;        // (N,C) d loss / d logits, empty unless requested
};

// Softmax cross-entropy, mean-reduced over the batch.
CeResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels,
                            bool with_grad = true);

}  // namespace canids
