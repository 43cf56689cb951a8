#include "slidealign/ssl_loss.hpp"

namespace sa {

int64_t pair_count(int n) {
    require(n >= 2, ErrKind::contract, "pair_count requires n >= 2");
    return static_cast<int64_t>(n) * (n - 1) / 2;
}

std::vector<std::pair<int, int>> unique_pairs(int n) {
    require(n >= 2, ErrKind::contract, "unique_pairs requires n >= 2");
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<size_t>(pair_count(n)));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) out.emplace_back(i, j);
    return out;
}

NodeId cross_correlation(Tape& tape, NodeId za, NodeId zb, double epsilon) {
    const Tensor& a = tape.value(za);
    const Tensor& b = tape.value(zb);
    require(a.ndim() == 2 && b.ndim() == 2, ErrKind::dimension, "embeddings must be BxD");
    require(a.same_shape(b), ErrKind::dimension,
            "embedding shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    require(a.dim(0) >= 2, ErrKind::batch_size, "cross_correlation requires batch size >= 2");
    // recording ops may grow the tape, so take the batch size now
    const int batch = a.dim(0);
    const NodeId ha = tape.batchnorm_feature(za, epsilon);
    const NodeId hb = tape.batchnorm_feature(zb, epsilon);
    return tape.scale(tape.matmul(tape.transpose(ha), hb), 1.0 / batch);
}

NodeId barlow_twins_loss(Tape& tape, NodeId cross_corr, double lambda) {
    const Tensor& c = tape.value(cross_corr);
    require(c.ndim() == 2 && c.dim(0) == c.dim(1), ErrKind::dimension,
            "barlow_twins_loss expects a square matrix, got " + c.shape_str());
    const NodeId d = tape.diag(cross_corr);
    const NodeId r = tape.add_const(d, -1.0);
    const NodeId diag_term = tape.sum_all(tape.mul(r, r));
    // off-diagonal sum = sum(C*C) - sum(diag(C)^2)
    const NodeId off = tape.sub(tape.sum_all(tape.mul(cross_corr, cross_corr)),
                                tape.sum_all(tape.mul(d, d)));
    return tape.add(diag_term, tape.scale(off, lambda));
}

NodeId barlow_tuple_loss(Tape& tape, std::span<const NodeId> embeddings,
                         const TupleLossConfig& cfg) {
    const int n = static_cast<int>(embeddings.size());
    require(n >= 2, ErrKind::contract, "barlow_tuple_loss requires at least 2 embeddings");
    require(cfg.lambda > 0.0, ErrKind::contract, "lambda must be positive");
    const auto pairs = unique_pairs(n);
    NodeId acc = -1;
    for (const auto& [i, j] : pairs) {
        const NodeId c = cross_correlation(tape, embeddings[i], embeddings[j], cfg.epsilon);
        const NodeId l = barlow_twins_loss(tape, c, cfg.lambda);
        acc = (acc < 0) ? l : tape.add(acc, l);
    }
    return tape.scale(acc, 1.0 / static_cast<double>(pairs.size()));
}

Tensor cross_correlation(const Tensor& za, const Tensor& zb, double epsilon) {
    Tape tape;
    const NodeId c = cross_correlation(tape, tape.constant(za), tape.constant(zb), epsilon);
    return tape.value(c);
}

double barlow_twins_loss(const Tensor& cross_corr, double lambda) {
    Tape tape;
    return tape.value(barlow_twins_loss(tape, tape.constant(cross_corr), lambda)).item();
}

double barlow_tuple_loss(std::span<const Tensor> embeddings, const TupleLossConfig& cfg) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(embeddings.size());
    for (const Tensor& e : embeddings) ids.push_back(tape.constant(e));
    return tape.value(barlow_tuple_loss(tape, ids, cfg)).item();
}

}  // namespace sa
