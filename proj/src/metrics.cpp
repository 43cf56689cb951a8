#include "slidealign/metrics.hpp"

#include <cmath>

namespace sa {

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size() && !a.empty(), ErrKind::dimension,
            "cosine_distance requires equal-length nonempty vectors");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    require(na > 0.0 && nb > 0.0, ErrKind::numeric, "cosine_distance of zero-norm vector");
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

double mean_pairwise_cosine_distance(const Tensor& ref_reps, const Tensor& other_reps) {
    require(ref_reps.ndim() == 2 && other_reps.ndim() == 2, ErrKind::dimension,
            "representations must be BxR");
    require(ref_reps.same_shape(other_reps), ErrKind::dimension,
            "representation shape mismatch: " + ref_reps.shape_str() + " vs " +
                other_reps.shape_str());
    const int rows = ref_reps.dim(0), cols = ref_reps.dim(1);
    require(rows >= 1, ErrKind::dimension, "need at least one row");
    double sum = 0.0;
    for (int r = 0; r < rows; ++r) {
        sum += cosine_distance(
            std::span<const double>(ref_reps.data() + static_cast<size_t>(r) * cols, cols),
            std::span<const double>(other_reps.data() + static_cast<size_t>(r) * cols, cols));
    }
    return sum / rows;
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<size_t>(num_classes) * num_classes, 0) {
    require(num_classes >= 1, ErrKind::dimension, "confusion matrix needs >= 1 class");
}

void ConfusionMatrix::accumulate(const Mask& pred, const Mask& gt, int ignore_label) {
    require(pred.same_size(gt), ErrKind::dimension, "pred/gt mask size mismatch");
    for (size_t i = 0; i < gt.data.size(); ++i) {
        const int g = gt.data[i];
        if (g == ignore_label) continue;
        const int p = pred.data[i];
        require(g < classes_ && p < classes_, ErrKind::label,
                "mask class out of range for " + std::to_string(classes_) + " classes");
        ++counts_[static_cast<size_t>(g) * classes_ + p];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    require(classes_ == other.classes_, ErrKind::dimension, "confusion matrix class mismatch");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

uint64_t ConfusionMatrix::total() const {
    uint64_t t = 0;
    for (uint64_t c : counts_) t += c;
    return t;
}

std::vector<double> ConfusionMatrix::per_class_iou() const {
    std::vector<double> iou(static_cast<size_t>(classes_), std::nan(""));
    for (int c = 0; c < classes_; ++c) {
        const uint64_t tp = at(c, c);
        uint64_t fp = 0, fn = 0;
        for (int o = 0; o < classes_; ++o) {
            if (o == c) continue;
            fp += at(o, c);
            fn += at(c, o);
        }
        const uint64_t uni = tp + fp + fn;
        if (uni > 0) iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
    }
    return iou;
}

double ConfusionMatrix::miou() const {
    const auto iou = per_class_iou();
    double sum = 0.0;
    int n = 0;
    for (double v : iou) {
        if (std::isnan(v)) continue;  // zero-union classes excluded from the mean
        sum += v;
        ++n;
    }
    require(n > 0, ErrKind::metric, "miou undefined: every class has zero union");
    return sum / n;
}

double concordance(const Mask& a, const Mask& b, int num_classes) {
    require(a.same_size(b), ErrKind::dimension, "concordance mask size mismatch");
    ConfusionMatrix cm(num_classes);
    cm.accumulate(b, a);
    return cm.miou();
}

}  // namespace sa
