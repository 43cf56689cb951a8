#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "slidealign/param.hpp"
#include "slidealign/tensor.hpp"

namespace sa {

using NodeId = int32_t;

// The operator catalog is closed: these are exactly the forward ops the tape
// can record, and each one has an exact hand-written backward rule below.
enum class Op : uint8_t {
    leaf,
    matmul,
    transpose,
    conv2d,
    relu,
    add,
    sub,
    mul,
    div,
    scale,
    add_const,
    exp,
    diag,
    sum_all,
    mean_all,
    global_avg_pool,
    upsample_nearest,
    concat_channels,
    add_rowvec,
    add_chanvec,
    batchnorm_feature,
    log_softmax_channel,
};

const char* op_name(Op op);

struct TapeNode {
    Op op = Op::leaf;
    NodeId a = -1;
    NodeId b = -1;
    double c0 = 0.0;  // scalar attribute (scale factor, added constant, epsilon)
    int i0 = 0;       // integer attribute (stride, upsample factor)
    int i1 = 0;       // integer attribute (padding)
    Tensor value;
    Tensor grad;  // allocated during the backward sweep
    Parameter* param = nullptr;
};

// Single-threaded record of one forward computation. Nodes are appended in
// execution order, so the record is topologically sorted by construction and
// backward() is one reverse sweep. A tape supports exactly one backward pass;
// re-running it without rebuilding the forward graph is rejected.
class Tape {
public:
    // Leaf holding a constant (no gradient is propagated into it).
    NodeId constant(Tensor v);

    // Leaf bound to a Parameter; backward() accumulates into param.grad.
    NodeId param(Parameter& p);

    // --- operator catalog ---
    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId conv2d(NodeId input, NodeId kernel, int stride, int pad);
    NodeId relu(NodeId a);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId div(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId add_const(NodeId a, double c);
    NodeId exp(NodeId a);
    NodeId diag(NodeId a);
    NodeId sum_all(NodeId a);
    NodeId mean_all(NodeId a);
    NodeId global_avg_pool(NodeId a);
    NodeId upsample_nearest(NodeId a, int factor);
    NodeId concat_channels(NodeId a, NodeId b);
    NodeId add_rowvec(NodeId m, NodeId v);
    NodeId add_chanvec(NodeId x, NodeId v);
    NodeId batchnorm_feature(NodeId z, double epsilon);
    NodeId log_softmax_channel(NodeId x);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(NodeId id) const;

    // Reverse sweep from a scalar loss node. Gradients of all reachable nodes
    // are populated and parameter leaves accumulate into Parameter::grad.
    void backward(NodeId loss);

    size_t size() const { return nodes_.size(); }
    bool swept() const { return swept_; }

private:
    NodeId push(TapeNode n);
    const TapeNode& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
    TapeNode& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
    void backward_step(TapeNode& n);
    Tensor& grad_buf(NodeId id);

    std::vector<TapeNode> nodes_;
    std::vector<uint8_t> touched_;
    bool swept_ = false;
};

}  // namespace sa
