#pragma once

#include <span>
#include <utility>
#include <vector>

#include "slidealign/tape.hpp"

namespace sa {

// Projector outputs for one domain view. Rows must correspond across domains:
// row b of every batch in a tuple shows the same patch location.
struct EmbeddingBatch {
    Tensor values;  // B x D
    int domain_id = 0;
};

struct TupleLossConfig {
    double lambda = 5e-3;   // off-diagonal weight
    double epsilon = 1e-9;  // standardization regularizer
};

// Number of unique unordered pairs from n views: n! / ((n-2)! 2!).
int64_t pair_count(int n);

// All (i, j) with i < j in lexicographic order.
std::vector<std::pair<int, int>> unique_pairs(int n);

// C = (1/B) zhat_a^T zhat_b where zhat are feature-standardized columns.
// Entries are Pearson correlations, so they lie in [-1, 1] up to epsilon.
NodeId cross_correlation(Tape& tape, NodeId za, NodeId zb, double epsilon);

// sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2, over exactly d diagonal
// and d(d-1) off-diagonal terms.
NodeId barlow_twins_loss(Tape& tape, NodeId cross_corr, double lambda);

// (1 / K(n,2)) * sum over unique pairs of the pairwise loss. Reduces exactly
// to barlow_twins_loss for n = 2.
NodeId barlow_tuple_loss(Tape& tape, std::span<const NodeId> embeddings, const TupleLossConfig& cfg);

// Value-level conveniences (build a throwaway tape).
Tensor cross_correlation(const Tensor& za, const Tensor& zb, double epsilon);
double barlow_twins_loss(const Tensor& cross_corr, double lambda);
double barlow_tuple_loss(std::span<const Tensor> embeddings, const TupleLossConfig& cfg);

}  // namespace sa
