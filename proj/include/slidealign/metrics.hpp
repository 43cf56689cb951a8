#pragma once

#include <span>
#include <vector>

#include "slidealign/mask.hpp"
#include "slidealign/tensor.hpp"

namespace sa {

// 1 - cos(a, b), in [0, 2]. Zero-norm inputs are a numeric error.
double cosine_distance(std::span<const double> a, std::span<const double> b);

// Row-wise mean of cosine_distance over two B x R matrices whose rows
// correspond to the same patch locations.
double mean_pairwise_cosine_distance(const Tensor& ref_reps, const Tensor& other_reps);

// C x C counts, rows = ground truth, cols = prediction. Accumulation is
// additive, so per-image matrices merge into the dataset matrix exactly.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    void accumulate(const Mask& pred, const Mask& gt, int ignore_label = kIgnoreLabel);
    void merge(const ConfusionMatrix& other);

    int num_classes() const { return classes_; }
    uint64_t at(int gt, int pred) const { return counts_[static_cast<size_t>(gt) * classes_ + pred]; }
    uint64_t total() const;

    // Per-class TP / (TP + FP + FN); NaN marks classes with zero union.
    std::vector<double> per_class_iou() const;

    // Mean IoU over classes with nonzero union. All-zero unions are a metric
    // error.
    double miou() const;

    bool operator==(const ConfusionMatrix& o) const = default;

private:
    int classes_;
    std::vector<uint64_t> counts_;
};

// mIoU of two masks, treating `a` as ground truth and `b` as prediction;
// symmetric because IoU is.
double concordance(const Mask& a, const Mask& b, int num_classes);

}  // namespace sa
