#include "slidealign/model.hpp"

#include <cmath>

namespace sa {

int encoder_downsample(const EncoderConfig& cfg) {
    return 1 << static_cast<int>(cfg.block_channels.size());
}

void kaiming_init(Tensor& w, int fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / fan_in);
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, stddev);
}

namespace {

Parameter* make_conv_weight(ParamStore& store, const std::string& name, int cout, int cin, int k,
                            Rng& rng) {
    Tensor w({cout, cin, k, k});
    kaiming_init(w, cin * k * k, rng);
    return store.add(name, std::move(w));
}

Parameter* make_linear_weight(ParamStore& store, const std::string& name, int in, int out,
                              Rng& rng) {
    Tensor w({in, out});
    kaiming_init(w, in, rng);
    return store.add(name, std::move(w));
}

Parameter* make_bias(ParamStore& store, const std::string& name, int n) {
    return store.add(name, Tensor({n}));
}

}  // namespace

Encoder::Encoder(const EncoderConfig& cfg, ParamStore& store, Rng& init_rng,
                 const std::string& prefix)
    : cfg_(cfg) {
    require(cfg_.block_channels.size() >= 2, ErrKind::config, "encoder needs at least 2 blocks");
    require(cfg_.block_channels.back() >= 4, ErrKind::config, "encoder rep dim must be >= 4");
    int cin = cfg_.in_channels;
    for (size_t i = 0; i < cfg_.block_channels.size(); ++i) {
        const int cout = cfg_.block_channels[i];
        const std::string base = prefix + ".block" + std::to_string(i);
        weights_.push_back(make_conv_weight(store, base + ".w", cout, cin, 3, init_rng));
        biases_.push_back(make_bias(store, base + ".b", cout));
        cin = cout;
    }
}

std::vector<NodeId> Encoder::forward_features(Tape& tape, NodeId x) const {
    const Tensor& v = tape.value(x);
    require(v.ndim() == 4, ErrKind::dimension, "encoder input must be BxCxHxW");
    require(v.dim(1) == cfg_.in_channels, ErrKind::dimension, "encoder channel mismatch");
    const int ds = encoder_downsample(cfg_);
    require(v.dim(2) % ds == 0 && v.dim(3) % ds == 0, ErrKind::dimension,
            "encoder input spatial size must be divisible by " + std::to_string(ds));
    std::vector<NodeId> feats;
    feats.reserve(weights_.size());
    NodeId h = x;
    for (size_t i = 0; i < weights_.size(); ++i) {
        h = tape.conv2d(h, tape.param(*weights_[i]), 2, 1);
        h = tape.add_chanvec(h, tape.param(*biases_[i]));
        h = tape.relu(h);
        feats.push_back(h);
    }
    return feats;
}

NodeId Encoder::encode(Tape& tape, NodeId x) const {
    return tape.global_avg_pool(forward_features(tape, x).back());
}

Projector::Projector(const ProjectorConfig& cfg, ParamStore& store, Rng& init_rng,
                     const std::string& prefix)
    : cfg_(cfg) {
    require(cfg_.in_dim >= 1 && cfg_.hidden_dim >= 1 && cfg_.out_dim >= 1, ErrKind::config,
            "projector dims must be positive");
    const int dims[4] = {cfg_.in_dim, cfg_.hidden_dim, cfg_.hidden_dim, cfg_.out_dim};
    for (int l = 0; l < 3; ++l) {
        const std::string base = prefix + ".linear" + std::to_string(l);
        weights_.push_back(make_linear_weight(store, base + ".w", dims[l], dims[l + 1], init_rng));
        biases_.push_back(make_bias(store, base + ".b", dims[l + 1]));
    }
}

NodeId Projector::forward(Tape& tape, NodeId reps) const {
    const Tensor& v = tape.value(reps);
    require(v.ndim() == 2 && v.dim(1) == cfg_.in_dim, ErrKind::dimension,
            "projector input must be Bx" + std::to_string(cfg_.in_dim));
    require(v.dim(0) >= 2, ErrKind::batch_size, "projector requires batch size >= 2");
    NodeId h = reps;
    for (int l = 0; l < 3; ++l) {
        h = tape.add_rowvec(tape.matmul(h, tape.param(*weights_[l])), tape.param(*biases_[l]));
        if (l < 2) {
            // first two layers: batch norm + relu, final layer stays linear
            h = tape.relu(tape.batchnorm_feature(h, bn_epsilon_));
        }
    }
    return h;
}

Segmenter::Segmenter(const SegmenterConfig& cfg, ParamStore& store, Rng& encoder_rng,
                     Rng& decoder_rng)
    : cfg_(cfg), encoder_(cfg.encoder, store, encoder_rng) {
    Rng& init_rng = decoder_rng;
    require(cfg_.num_classes >= 2, ErrKind::config, "segmenter needs at least 2 classes");
    const auto& ch = cfg_.encoder.block_channels;
    const int n = static_cast<int>(ch.size());
    // decoder block j consumes encoder feature n-1-j (the input image for the
    // final block) and produces ch[n-1-j] channels (ch[0] at full resolution).
    for (int j = 0; j < n; ++j) {
        const int skip_ch = (j < n - 1) ? ch[n - 2 - j] : cfg_.encoder.in_channels;
        const int up_ch = (j == 0) ? ch[n - 1] : ch[n - 1 - j];
        const int in_ch = up_ch + skip_ch;
        const int out_ch = (j < n - 1) ? ch[n - 2 - j] : ch[0];
        const std::string base = "decoder.block" + std::to_string(j);
        dec_weights_.push_back(make_conv_weight(store, base + ".w", out_ch, in_ch, 3, init_rng));
        dec_biases_.push_back(make_bias(store, base + ".b", out_ch));
    }
    head_w_ = make_conv_weight(store, "head.w", cfg_.num_classes, ch[0], 1, init_rng);
    head_b_ = make_bias(store, "head.b", cfg_.num_classes);
}

NodeId Segmenter::forward_impl(Tape& tape, NodeId x, bool use_skips) const {
    const auto feats = encoder_.forward_features(tape, x);
    const int n = static_cast<int>(feats.size());
    NodeId h = feats[n - 1];
    for (int j = 0; j < n; ++j) {
        h = tape.upsample_nearest(h, 2);
        NodeId skip = (j < n - 1) ? feats[n - 2 - j] : x;
        if (!use_skips) skip = tape.constant(Tensor(tape.value(skip).shape()));
        h = tape.concat_channels(h, skip);
        h = tape.conv2d(h, tape.param(*dec_weights_[j]), 1, 1);
        h = tape.add_chanvec(h, tape.param(*dec_biases_[j]));
        h = tape.relu(h);
    }
    h = tape.conv2d(h, tape.param(*head_w_), 1, 0);
    return tape.add_chanvec(h, tape.param(*head_b_));
}

CeDiceLoss ce_dice_loss(Tape& tape, NodeId logits, const Tensor& target, int ignore_label) {
    const Tensor& lv = tape.value(logits);
    require(lv.ndim() == 4, ErrKind::dimension, "ce_dice_loss logits must be BxCxHxW");
    const int batch = lv.dim(0), classes = lv.dim(1), h = lv.dim(2), w = lv.dim(3);
    require(target.ndim() == 3 && target.dim(0) == batch && target.dim(1) == h &&
                target.dim(2) == w,
            ErrKind::dimension, "ce_dice_loss target must be BxHxW matching the logits");

    const size_t hw = static_cast<size_t>(h) * w;
    Tensor onehot({batch, classes, h, w});      // gt indicator, zero at ignored pixels
    Tensor chan_valid({batch, classes, h, w});  // valid-pixel indicator per channel
    std::vector<int64_t> class_count(static_cast<size_t>(classes), 0);
    int64_t n_valid = 0;
    for (int b = 0; b < batch; ++b) {
        for (size_t p = 0; p < hw; ++p) {
            const double tv = target[static_cast<int64_t>(b * hw + p)];
            const int cls = static_cast<int>(tv);
            if (cls == ignore_label) continue;
            require(static_cast<double>(cls) == tv && cls >= 0 && cls < classes, ErrKind::label,
                    "target class out of range: " + std::to_string(tv));
            ++n_valid;
            ++class_count[static_cast<size_t>(cls)];
            onehot[static_cast<int64_t>((static_cast<size_t>(b) * classes + cls) * hw + p)] = 1.0;
            for (int c = 0; c < classes; ++c)
                chan_valid[static_cast<int64_t>((static_cast<size_t>(b) * classes + c) * hw + p)] =
                    1.0;
        }
    }
    require(n_valid > 0, ErrKind::contract, "ce_dice_loss: every pixel is ignored");

    const double smooth = 1e-6;
    const NodeId logp = tape.log_softmax_channel(logits);
    const NodeId onehot_node = tape.constant(onehot);
    CeDiceLoss out;
    out.cross_entropy =
        tape.scale(tape.sum_all(tape.mul(onehot_node, logp)), -1.0 / static_cast<double>(n_valid));

    const NodeId probs = tape.exp(logp);
    NodeId dice_acc = -1;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
        if (class_count[static_cast<size_t>(c)] == 0) continue;
        ++present;
        Tensor sel_gt({batch, classes, h, w});
        Tensor sel_valid({batch, classes, h, w});
        for (int b = 0; b < batch; ++b) {
            const size_t off = (static_cast<size_t>(b) * classes + c) * hw;
            for (size_t p = 0; p < hw; ++p) {
                sel_gt[static_cast<int64_t>(off + p)] = onehot[static_cast<int64_t>(off + p)];
                sel_valid[static_cast<int64_t>(off + p)] =
                    chan_valid[static_cast<int64_t>(off + p)];
            }
        }
        const NodeId inter = tape.sum_all(tape.mul(probs, tape.constant(std::move(sel_gt))));
        const NodeId pred_sum = tape.sum_all(tape.mul(probs, tape.constant(std::move(sel_valid))));
        const NodeId num = tape.add_const(tape.scale(inter, 2.0), smooth);
        const NodeId den = tape.add_const(
            pred_sum, static_cast<double>(class_count[static_cast<size_t>(c)]) + smooth);
        const NodeId one_minus = tape.add_const(tape.scale(tape.div(num, den), -1.0), 1.0);
        dice_acc = (dice_acc < 0) ? one_minus : tape.add(dice_acc, one_minus);
    }
    out.dice = tape.scale(dice_acc, 1.0 / present);
    out.total = tape.add(out.cross_entropy, out.dice);
    return out;
}

}  // namespace sa
