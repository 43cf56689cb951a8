#include "slidealign/tape.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace sa {

namespace {

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<size_t>(i) * k;
        double* crow = C + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double a = arow[p];
            const double* brow = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const double* arow = A + static_cast<size_t>(p) * m;
        const double* brow = B + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double a = arow[i];
            double* crow = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<size_t>(i) * k;
        double* crow = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = B + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

struct ConvDims {
    int batch, cin, h, w, cout, k, stride, pad, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride, int pad) {
    require(input.ndim() == 4, ErrKind::dimension, "conv2d input must be BxCxHxW, got " + input.shape_str());
    require(kernel.ndim() == 4, ErrKind::dimension, "conv2d kernel must be OxIxKxK, got " + kernel.shape_str());
    ConvDims d{};
    d.batch = input.dim(0);
    d.cin = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.cout = kernel.dim(0);
    d.k = kernel.dim(2);
    d.stride = stride;
    d.pad = pad;
    require(kernel.dim(1) == d.cin, ErrKind::dimension, "conv2d channel mismatch");
    require(kernel.dim(3) == d.k, ErrKind::dimension, "conv2d kernel must be square");
    require(d.k % 2 == 1, ErrKind::dimension, "conv2d kernel size must be odd");
    require(stride >= 1 && pad >= 0, ErrKind::dimension, "conv2d invalid stride/pad");
    const int hn = d.h + 2 * pad - d.k;
    const int wn = d.w + 2 * pad - d.k;
    require(hn >= 0 && wn >= 0, ErrKind::dimension,
            "conv2d output size invalid for input " + input.shape_str());
    // floor semantics: trailing positions that do not fit a full stride are
    // discarded, which is what makes stride-2 halving of even sizes work
    d.oh = hn / stride + 1;
    d.ow = wn / stride + 1;
    return d;
}

// col is (cin*k*k) x (oh*ow) for one batch image.
void im2col(const double* im, const ConvDims& d, double* col) {
    const int cols = d.oh * d.ow;
    for (int ci = 0; ci < d.cin; ++ci) {
        const double* plane = im + static_cast<size_t>(ci) * d.h * d.w;
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                double* crow = col + (static_cast<size_t>(ci) * d.k * d.k + ky * d.k + kx) * cols;
                for (int oy = 0; oy < d.oh; ++oy) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) {
                        std::memset(crow + static_cast<size_t>(oy) * d.ow, 0, sizeof(double) * d.ow);
                        continue;
                    }
                    const double* irow = plane + static_cast<size_t>(iy) * d.w;
                    double* orow = crow + static_cast<size_t>(oy) * d.ow;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride + kx - d.pad;
                        orow[ox] = (ix >= 0 && ix < d.w) ? irow[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* col, const ConvDims& d, double* im) {
    const int cols = d.oh * d.ow;
    for (int ci = 0; ci < d.cin; ++ci) {
        double* plane = im + static_cast<size_t>(ci) * d.h * d.w;
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                const double* crow = col + (static_cast<size_t>(ci) * d.k * d.k + ky * d.k + kx) * cols;
                for (int oy = 0; oy < d.oh; ++oy) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    double* irow = plane + static_cast<size_t>(iy) * d.w;
                    const double* orow = crow + static_cast<size_t>(oy) * d.ow;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix >= 0 && ix < d.w) irow[ix] += orow[ox];
                    }
                }
            }
        }
    }
}

void check_finite(const Tensor& t, Op op) {
    if (!t.all_finite())
        fail(ErrKind::numeric, std::string("non-finite value produced by ") + op_name(op));
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::conv2d: return "conv2d";
        case Op::relu: return "relu";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::scale: return "scale";
        case Op::add_const: return "add_const";
        case Op::exp: return "exp";
        case Op::diag: return "diag";
        case Op::sum_all: return "sum_all";
        case Op::mean_all: return "mean_all";
        case Op::global_avg_pool: return "global_avg_pool";
        case Op::upsample_nearest: return "upsample_nearest";
        case Op::concat_channels: return "concat_channels";
        case Op::add_rowvec: return "add_rowvec";
        case Op::add_chanvec: return "add_chanvec";
        case Op::batchnorm_feature: return "batchnorm_feature";
        case Op::log_softmax_channel: return "log_softmax_channel";
    }
    return "?";
}

NodeId Tape::push(TapeNode n) {
    check_finite(n.value, n.op);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::constant(Tensor v) {
    TapeNode n;
    n.value = std::move(v);
    return push(std::move(n));
}

NodeId Tape::param(Parameter& p) {
    TapeNode n;
    n.value = p.value;
    n.param = &p;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.ndim() == 2 && vb.ndim() == 2, ErrKind::dimension, "matmul expects 2-D tensors");
    require(va.dim(1) == vb.dim(0), ErrKind::dimension,
            "matmul inner dimension mismatch: " + va.shape_str() + " x " + vb.shape_str());
    TapeNode n;
    n.op = Op::matmul;
    n.a = a;
    n.b = b;
    n.value = Tensor({va.dim(0), vb.dim(1)});
    gemm_nn_acc(va.data(), vb.data(), n.value.data(), va.dim(0), va.dim(1), vb.dim(1));
    return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) {
    const Tensor& va = value(a);
    require(va.ndim() == 2, ErrKind::dimension, "transpose expects a 2-D tensor");
    TapeNode n;
    n.op = Op::transpose;
    n.a = a;
    n.value = Tensor({va.dim(1), va.dim(0)});
    for (int i = 0; i < va.dim(0); ++i)
        for (int j = 0; j < va.dim(1); ++j) n.value.at(j, i) = va.at(i, j);
    return push(std::move(n));
}

NodeId Tape::conv2d(NodeId input, NodeId kernel, int stride, int pad) {
    const Tensor& vi = value(input);
    const Tensor& vk = value(kernel);
    const ConvDims d = conv_dims(vi, vk, stride, pad);
    TapeNode n;
    n.op = Op::conv2d;
    n.a = input;
    n.b = kernel;
    n.i0 = stride;
    n.i1 = pad;
    n.value = Tensor({d.batch, d.cout, d.oh, d.ow});
    const int cols = d.oh * d.ow;
    const int krows = d.cin * d.k * d.k;
    std::vector<double> col(static_cast<size_t>(krows) * cols);
    for (int b = 0; b < d.batch; ++b) {
        im2col(vi.data() + static_cast<size_t>(b) * d.cin * d.h * d.w, d, col.data());
        gemm_nn_acc(vk.data(), col.data(), n.value.data() + static_cast<size_t>(b) * d.cout * cols,
                    d.cout, krows, cols);
    }
    return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
    const Tensor& va = value(a);
    TapeNode n;
    n.op = Op::relu;
    n.a = a;
    n.value = Tensor(va.shape());
    for (int64_t i = 0; i < va.numel(); ++i) n.value[i] = va[i] > 0.0 ? va[i] : 0.0;
    return push(std::move(n));
}

#define SA_ELEMENTWISE_BINOP(NAME, OP_ENUM, EXPR)                                              \
    NodeId Tape::NAME(NodeId a, NodeId b) {                                                    \
        const Tensor& va = value(a);                                                           \
        const Tensor& vb = value(b);                                                           \
        require(va.same_shape(vb), ErrKind::dimension,                                         \
                std::string(#NAME) + " shape mismatch: " + va.shape_str() + " vs " +           \
                    vb.shape_str());                                                           \
        TapeNode n;                                                                            \
        n.op = OP_ENUM;                                                                        \
        n.a = a;                                                                               \
        n.b = b;                                                                               \
        n.value = Tensor(va.shape());                                                          \
        for (int64_t i = 0; i < va.numel(); ++i) n.value[i] = EXPR;                            \
        return push(std::move(n));                                                             \
    }

SA_ELEMENTWISE_BINOP(add, Op::add, va[i] + vb[i])
SA_ELEMENTWISE_BINOP(sub, Op::sub, va[i] - vb[i])
SA_ELEMENTWISE_BINOP(mul, Op::mul, va[i] * vb[i])
SA_ELEMENTWISE_BINOP(div, Op::div, va[i] / vb[i])

#undef SA_ELEMENTWISE_BINOP

NodeId Tape::scale(NodeId a, double c) {
    const Tensor& va = value(a);
    TapeNode n;
    n.op = Op::scale;
    n.a = a;
    n.c0 = c;
    n.value = Tensor(va.shape());
    for (int64_t i = 0; i < va.numel(); ++i) n.value[i] = c * va[i];
    return push(std::move(n));
}

NodeId Tape::add_const(NodeId a, double c) {
    const Tensor& va = value(a);
    TapeNode n;
    n.op = Op::add_const;
    n.a = a;
    n.c0 = c;
    n.value = Tensor(va.shape());
    for (int64_t i = 0; i < va.numel(); ++i) n.value[i] = va[i] + c;
    return push(std::move(n));
}

NodeId Tape::exp(NodeId a) {
    const Tensor& va = value(a);
    TapeNode n;
    n.op = Op::exp;
    n.a = a;
    n.value = Tensor(va.shape());
    for (int64_t i = 0; i < va.numel(); ++i) n.value[i] = std::exp(va[i]);
    return push(std::move(n));
}

NodeId Tape::diag(NodeId a) {
    const Tensor& va = value(a);
    require(va.ndim() == 2 && va.dim(0) == va.dim(1), ErrKind::dimension,
            "diag expects a square matrix, got " + va.shape_str());
    TapeNode n;
    n.op = Op::diag;
    n.a = a;
    n.value = Tensor({va.dim(0)});
    for (int i = 0; i < va.dim(0); ++i) n.value[i] = va.at(i, i);
    return push(std::move(n));
}

NodeId Tape::sum_all(NodeId a) {
    const Tensor& va = value(a);
    double s = 0.0;
    for (int64_t i = 0; i < va.numel(); ++i) s += va[i];
    TapeNode n;
    n.op = Op::sum_all;
    n.a = a;
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

NodeId Tape::mean_all(NodeId a) {
    const Tensor& va = value(a);
    require(va.numel() > 0, ErrKind::dimension, "mean_all of empty tensor");
    double s = 0.0;
    for (int64_t i = 0; i < va.numel(); ++i) s += va[i];
    TapeNode n;
    n.op = Op::mean_all;
    n.a = a;
    n.value = Tensor::scalar(s / static_cast<double>(va.numel()));
    return push(std::move(n));
}

NodeId Tape::global_avg_pool(NodeId a) {
    const Tensor& va = value(a);
    require(va.ndim() == 4, ErrKind::dimension, "global_avg_pool expects BxCxHxW");
    const int batch = va.dim(0), c = va.dim(1), hw = va.dim(2) * va.dim(3);
    TapeNode n;
    n.op = Op::global_avg_pool;
    n.a = a;
    n.value = Tensor({batch, c});
    const double inv = 1.0 / hw;
    for (int bi = 0; bi < batch; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const double* p = va.data() + (static_cast<size_t>(bi) * c + ci) * hw;
            double s = 0.0;
            for (int i = 0; i < hw; ++i) s += p[i];
            n.value.at(bi, ci) = s * inv;
        }
    return push(std::move(n));
}

NodeId Tape::upsample_nearest(NodeId a, int factor) {
    const Tensor& va = value(a);
    require(va.ndim() == 4, ErrKind::dimension, "upsample_nearest expects BxCxHxW");
    require(factor >= 1, ErrKind::dimension, "upsample factor must be >= 1");
    const int batch = va.dim(0), c = va.dim(1), h = va.dim(2), w = va.dim(3);
    TapeNode n;
    n.op = Op::upsample_nearest;
    n.a = a;
    n.i0 = factor;
    n.value = Tensor({batch, c, h * factor, w * factor});
    for (int bi = 0; bi < batch; ++bi)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h * factor; ++y)
                for (int x = 0; x < w * factor; ++x)
                    n.value.at(bi, ci, y, x) = va.at(bi, ci, y / factor, x / factor);
    return push(std::move(n));
}

NodeId Tape::concat_channels(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.ndim() == 4 && vb.ndim() == 4, ErrKind::dimension, "concat_channels expects BxCxHxW");
    require(va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2) && va.dim(3) == vb.dim(3),
            ErrKind::dimension,
            "concat_channels mismatch: " + va.shape_str() + " vs " + vb.shape_str());
    const int batch = va.dim(0), ca = va.dim(1), cb = vb.dim(1), hw = va.dim(2) * va.dim(3);
    TapeNode n;
    n.op = Op::concat_channels;
    n.a = a;
    n.b = b;
    n.value = Tensor({batch, ca + cb, va.dim(2), va.dim(3)});
    for (int bi = 0; bi < batch; ++bi) {
        double* out = n.value.data() + static_cast<size_t>(bi) * (ca + cb) * hw;
        std::memcpy(out, va.data() + static_cast<size_t>(bi) * ca * hw, sizeof(double) * ca * hw);
        std::memcpy(out + static_cast<size_t>(ca) * hw, vb.data() + static_cast<size_t>(bi) * cb * hw,
                    sizeof(double) * cb * hw);
    }
    return push(std::move(n));
}

NodeId Tape::add_rowvec(NodeId m, NodeId v) {
    const Tensor& vm = value(m);
    const Tensor& vv = value(v);
    require(vm.ndim() == 2 && vv.ndim() == 1 && vv.dim(0) == vm.dim(1), ErrKind::dimension,
            "add_rowvec expects BxD plus D");
    TapeNode n;
    n.op = Op::add_rowvec;
    n.a = m;
    n.b = v;
    n.value = Tensor(vm.shape());
    for (int r = 0; r < vm.dim(0); ++r)
        for (int c = 0; c < vm.dim(1); ++c) n.value.at(r, c) = vm.at(r, c) + vv[c];
    return push(std::move(n));
}

NodeId Tape::add_chanvec(NodeId x, NodeId v) {
    const Tensor& vx = value(x);
    const Tensor& vv = value(v);
    require(vx.ndim() == 4 && vv.ndim() == 1 && vv.dim(0) == vx.dim(1), ErrKind::dimension,
            "add_chanvec expects BxCxHxW plus C");
    const int batch = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    TapeNode n;
    n.op = Op::add_chanvec;
    n.a = x;
    n.b = v;
    n.value = Tensor(vx.shape());
    for (int bi = 0; bi < batch; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const double* in = vx.data() + (static_cast<size_t>(bi) * c + ci) * hw;
            double* out = n.value.data() + (static_cast<size_t>(bi) * c + ci) * hw;
            const double bias = vv[ci];
            for (int i = 0; i < hw; ++i) out[i] = in[i] + bias;
        }
    return push(std::move(n));
}

NodeId Tape::batchnorm_feature(NodeId z, double epsilon) {
    const Tensor& vz = value(z);
    require(vz.ndim() == 2, ErrKind::dimension, "batchnorm_feature expects BxD");
    const int batch = vz.dim(0), d = vz.dim(1);
    require(batch >= 2, ErrKind::batch_size, "batchnorm_feature requires batch size >= 2");
    TapeNode n;
    n.op = Op::batchnorm_feature;
    n.a = z;
    n.c0 = epsilon;
    n.value = Tensor(vz.shape());
    for (int j = 0; j < d; ++j) {
        double mean = 0.0;
        for (int b = 0; b < batch; ++b) mean += vz.at(b, j);
        mean /= batch;
        double var = 0.0;
        for (int b = 0; b < batch; ++b) {
            const double c = vz.at(b, j) - mean;
            var += c * c;
        }
        var /= batch;  // population variance
        const double inv = 1.0 / std::sqrt(var + epsilon);
        for (int b = 0; b < batch; ++b) n.value.at(b, j) = (vz.at(b, j) - mean) * inv;
    }
    return push(std::move(n));
}

NodeId Tape::log_softmax_channel(NodeId x) {
    const Tensor& vx = value(x);
    require(vx.ndim() == 4, ErrKind::dimension, "log_softmax_channel expects BxCxHxW");
    const int batch = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    require(c >= 1, ErrKind::dimension, "log_softmax_channel needs at least one channel");
    TapeNode n;
    n.op = Op::log_softmax_channel;
    n.a = x;
    n.value = Tensor(vx.shape());
    const size_t hw = static_cast<size_t>(h) * w;
    for (int bi = 0; bi < batch; ++bi) {
        const double* in = vx.data() + static_cast<size_t>(bi) * c * hw;
        double* out = n.value.data() + static_cast<size_t>(bi) * c * hw;
        for (size_t p = 0; p < hw; ++p) {
            double m = in[p];
            for (int ci = 1; ci < c; ++ci) m = std::max(m, in[ci * hw + p]);
            double s = 0.0;
            for (int ci = 0; ci < c; ++ci) s += std::exp(in[ci * hw + p] - m);
            const double lse = m + std::log(s);
            for (int ci = 0; ci < c; ++ci) out[ci * hw + p] = in[ci * hw + p] - lse;
        }
    }
    return push(std::move(n));
}

const Tensor& Tape::grad(NodeId id) const {
    require(swept_, ErrKind::contract, "grad() before backward()");
    return nodes_[static_cast<size_t>(id)].grad;
}

Tensor& Tape::grad_buf(NodeId id) {
    TapeNode& n = node(id);
    if (n.grad.empty() || !n.grad.same_shape(n.value)) n.grad = Tensor(n.value.shape());
    touched_[static_cast<size_t>(id)] = 1;
    return n.grad;
}

void Tape::backward(NodeId loss) {
    require(!swept_, ErrKind::contract, "backward() called twice on the same tape");
    const Tensor& lv = value(loss);
    require(lv.is_scalar(), ErrKind::contract, "backward() requires a scalar loss node");
    touched_.assign(nodes_.size(), 0);
    grad_buf(loss)[0] = 1.0;
    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
        if (!touched_[static_cast<size_t>(id)]) continue;
        backward_step(node(id));
    }
    // Zero gradients for nodes the loss does not depend on, so grad() is
    // total: loss independent of a value means gradient exactly zero.
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (!touched_[i]) nodes_[i].grad = Tensor(nodes_[i].value.shape());
    swept_ = true;
}

void Tape::backward_step(TapeNode& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
        case Op::leaf: {
            if (n.param) {
                Tensor& pg = n.param->grad;
                for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
            }
            break;
        }
        case Op::matmul: {
            const Tensor& va = value(n.a);
            const Tensor& vb = value(n.b);
            // dA += G * B^T ; dB += A^T * G
            gemm_nt_acc(g.data(), vb.data(), grad_buf(n.a).data(), va.dim(0), vb.dim(1), va.dim(1));
            gemm_tn_acc(va.data(), g.data(), grad_buf(n.b).data(), va.dim(1), va.dim(0), vb.dim(1));
            break;
        }
        case Op::transpose: {
            Tensor& ga = grad_buf(n.a);
            for (int i = 0; i < g.dim(0); ++i)
                for (int j = 0; j < g.dim(1); ++j) ga.at(j, i) += g.at(i, j);
            break;
        }
        case Op::conv2d: {
            const Tensor& vi = value(n.a);
            const Tensor& vk = value(n.b);
            const ConvDims d = conv_dims(vi, vk, n.i0, n.i1);
            Tensor& gi = grad_buf(n.a);
            Tensor& gk = grad_buf(n.b);
            const int cols = d.oh * d.ow;
            const int krows = d.cin * d.k * d.k;
            std::vector<double> col(static_cast<size_t>(krows) * cols);
            std::vector<double> gcol(static_cast<size_t>(krows) * cols);
            for (int b = 0; b < d.batch; ++b) {
                const double* gout = g.data() + static_cast<size_t>(b) * d.cout * cols;
                im2col(vi.data() + static_cast<size_t>(b) * d.cin * d.h * d.w, d, col.data());
                // dK += Gout * col^T
                gemm_nt_acc(gout, col.data(), gk.data(), d.cout, cols, krows);
                // dcol = K^T * Gout, scattered back through col2im
                std::memset(gcol.data(), 0, sizeof(double) * gcol.size());
                gemm_tn_acc(vk.data(), gout, gcol.data(), krows, d.cout, cols);
                col2im_acc(gcol.data(), d, gi.data() + static_cast<size_t>(b) * d.cin * d.h * d.w);
            }
            break;
        }
        case Op::relu: {
            const Tensor& va = value(n.a);
            Tensor& ga = grad_buf(n.a);
            for (int64_t i = 0; i < g.numel(); ++i)
                if (va[i] > 0.0) ga[i] += g[i];
            break;
        }
        case Op::add: {
            Tensor& ga = grad_buf(n.a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            Tensor& gb = grad_buf(n.b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
            break;
        }
        case Op::sub: {
            Tensor& ga = grad_buf(n.a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            Tensor& gb = grad_buf(n.b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
            break;
        }
        case Op::mul: {
            const Tensor& va = value(n.a);
            const Tensor& vb = value(n.b);
            Tensor& ga = grad_buf(n.a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
            Tensor& gb = grad_buf(n.b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
            break;
        }
        case Op::div: {
            const Tensor& va = value(n.a);
            const Tensor& vb = value(n.b);
            Tensor& ga = grad_buf(n.a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / vb[i];
            Tensor& gb = grad_buf(n.b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
            break;
        }
        case Op::scale: {
            Tensor& ga = grad_buf(n.a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += n.c0 * g[i];
            break;
        }
        case Op::add_const: {
            Tensor& ga = grad_buf(n.a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            break;
        }
        case Op::exp: {
            Tensor& ga = grad_buf(n.a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.value[i];
            break;
        }
        case Op::diag: {
            Tensor& ga = grad_buf(n.a);
            for (int i = 0; i < g.dim(0); ++i) ga.at(i, i) += g[i];
            break;
        }
        case Op::sum_all: {
            Tensor& ga = grad_buf(n.a);
            const double gv = g[0];
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
            break;
        }
        case Op::mean_all: {
            Tensor& ga = grad_buf(n.a);
            const double gv = g[0] / static_cast<double>(ga.numel());
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
            break;
        }
        case Op::global_avg_pool: {
            const Tensor& va = value(n.a);
            Tensor& ga = grad_buf(n.a);
            const int batch = va.dim(0), c = va.dim(1), hw = va.dim(2) * va.dim(3);
            const double inv = 1.0 / hw;
            for (int bi = 0; bi < batch; ++bi)
                for (int ci = 0; ci < c; ++ci) {
                    double* p = ga.data() + (static_cast<size_t>(bi) * c + ci) * hw;
                    const double gv = g.at(bi, ci) * inv;
                    for (int i = 0; i < hw; ++i) p[i] += gv;
                }
            break;
        }
        case Op::upsample_nearest: {
            const Tensor& va = value(n.a);
            Tensor& ga = grad_buf(n.a);
            const int f = n.i0;
            for (int bi = 0; bi < va.dim(0); ++bi)
                for (int ci = 0; ci < va.dim(1); ++ci)
                    for (int y = 0; y < g.dim(2); ++y)
                        for (int x = 0; x < g.dim(3); ++x)
                            ga.at(bi, ci, y / f, x / f) += g.at(bi, ci, y, x);
            break;
        }
        case Op::concat_channels: {
            const Tensor& va = value(n.a);
            const Tensor& vb = value(n.b);
            Tensor& ga = grad_buf(n.a);
            Tensor& gb = grad_buf(n.b);
            const int batch = va.dim(0), ca = va.dim(1), cb = vb.dim(1), hw = va.dim(2) * va.dim(3);
            for (int bi = 0; bi < batch; ++bi) {
                const double* gsrc = g.data() + static_cast<size_t>(bi) * (ca + cb) * hw;
                double* pa = ga.data() + static_cast<size_t>(bi) * ca * hw;
                double* pb = gb.data() + static_cast<size_t>(bi) * cb * hw;
                for (int i = 0; i < ca * hw; ++i) pa[i] += gsrc[i];
                for (int i = 0; i < cb * hw; ++i) pb[i] += gsrc[static_cast<size_t>(ca) * hw + i];
            }
            break;
        }
        case Op::add_rowvec: {
            Tensor& gm = grad_buf(n.a);
            Tensor& gv = grad_buf(n.b);
            for (int r = 0; r < g.dim(0); ++r)
                for (int c = 0; c < g.dim(1); ++c) {
                    gm.at(r, c) += g.at(r, c);
                    gv[c] += g.at(r, c);
                }
            break;
        }
        case Op::add_chanvec: {
            Tensor& gx = grad_buf(n.a);
            Tensor& gv = grad_buf(n.b);
            const int batch = g.dim(0), c = g.dim(1), hw = g.dim(2) * g.dim(3);
            for (int bi = 0; bi < batch; ++bi)
                for (int ci = 0; ci < c; ++ci) {
                    const double* gp = g.data() + (static_cast<size_t>(bi) * c + ci) * hw;
                    double* xp = gx.data() + (static_cast<size_t>(bi) * c + ci) * hw;
                    double s = 0.0;
                    for (int i = 0; i < hw; ++i) {
                        xp[i] += gp[i];
                        s += gp[i];
                    }
                    gv[ci] += s;
                }
            break;
        }
        case Op::batchnorm_feature: {
            // y = (x - mu) / sqrt(var + eps) with population variance.
            // dx = inv/B * (B*g - sum(g) - y * sum(g*y)) per feature column.
            const Tensor& vz = value(n.a);
            Tensor& gz = grad_buf(n.a);
            const int batch = vz.dim(0), d = vz.dim(1);
            for (int j = 0; j < d; ++j) {
                double mean = 0.0;
                for (int b = 0; b < batch; ++b) mean += vz.at(b, j);
                mean /= batch;
                double var = 0.0;
                for (int b = 0; b < batch; ++b) {
                    const double c = vz.at(b, j) - mean;
                    var += c * c;
                }
                var /= batch;
                const double inv = 1.0 / std::sqrt(var + n.c0);
                double gsum = 0.0, gysum = 0.0;
                for (int b = 0; b < batch; ++b) {
                    gsum += g.at(b, j);
                    gysum += g.at(b, j) * n.value.at(b, j);
                }
                const double invb = inv / batch;
                for (int b = 0; b < batch; ++b)
                    gz.at(b, j) += invb * (batch * g.at(b, j) - gsum - n.value.at(b, j) * gysum);
            }
            break;
        }
        case Op::log_softmax_channel: {
            // dx = g - softmax(x) * sum_c(g)
            Tensor& gx = grad_buf(n.a);
            const int batch = g.dim(0), c = g.dim(1);
            const size_t hw = static_cast<size_t>(g.dim(2)) * g.dim(3);
            for (int bi = 0; bi < batch; ++bi) {
                const double* gp = g.data() + static_cast<size_t>(bi) * c * hw;
                const double* yp = n.value.data() + static_cast<size_t>(bi) * c * hw;
                double* xp = gx.data() + static_cast<size_t>(bi) * c * hw;
                for (size_t p = 0; p < hw; ++p) {
                    double gs = 0.0;
                    for (int ci = 0; ci < c; ++ci) gs += gp[ci * hw + p];
                    for (int ci = 0; ci < c; ++ci)
                        xp[ci * hw + p] += gp[ci * hw + p] - std::exp(yp[ci * hw + p]) * gs;
                }
            }
            break;
        }
    }
}

}  // namespace sa
