#pragma once

#include <string>
#include <vector>

#include "slidealign/rng.hpp"
#include "slidealign/tape.hpp"

namespace sa {

// Stack of stride-2 3x3 conv + relu blocks; the final global average pool
// yields the bottleneck representation of dimension block_channels.back().
struct EncoderConfig {
    int in_channels = 3;
    std::vector<int> block_channels = {8, 16, 32, 64};
};

// Spatial downsampling factor of the full stack (2^blocks).
int encoder_downsample(const EncoderConfig& cfg);

struct ProjectorConfig {
    int in_dim = 0;
    int hidden_dim = 0;
    int out_dim = 0;

    // The standard head: three linear layers with a four-fold width increase,
    // so out_dim is exactly 4 * rep_dim.
    static ProjectorConfig fourfold(int rep_dim) {
        return ProjectorConfig{rep_dim, 4 * rep_dim, 4 * rep_dim};
    }
};

struct SegmenterConfig {
    EncoderConfig encoder;
    int num_classes = 3;  // background, tumor, non-tumor
};

class Encoder {
public:
    Encoder(const EncoderConfig& cfg, ParamStore& store, Rng& init_rng,
            const std::string& prefix = "encoder");

    // Per-block activations, shallowest first. Input must be B x C x H x W
    // with H, W divisible by encoder_downsample(cfg).
    std::vector<NodeId> forward_features(Tape& tape, NodeId x) const;

    // Pooled bottleneck representation, B x rep_dim.
    NodeId encode(Tape& tape, NodeId x) const;

    int rep_dim() const { return cfg_.block_channels.back(); }
    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    std::vector<Parameter*> weights_;
    std::vector<Parameter*> biases_;
};

class Projector {
public:
    Projector(const ProjectorConfig& cfg, ParamStore& store, Rng& init_rng,
              const std::string& prefix = "projector");

    // B x out_dim embeddings; batch normalization inside requires B >= 2.
    NodeId forward(Tape& tape, NodeId reps) const;

    const ProjectorConfig& config() const { return cfg_; }

private:
    ProjectorConfig cfg_;
    std::vector<Parameter*> weights_;
    std::vector<Parameter*> biases_;
    double bn_epsilon_ = 1e-9;
};

// Encoder plus a mirrored decoder: each level nearest-upsamples by 2,
// concatenates the matching encoder activation (the raw input at full
// resolution) and applies a 3x3 conv + relu; a 1x1 head maps to class logits
// at input resolution.
class Segmenter {
public:
    // Encoder and decoder/head draw from separate init streams so a fresh
    // segmenter's encoder matches the encoder a pretraining run of the same
    // seed started from.
    Segmenter(const SegmenterConfig& cfg, ParamStore& store, Rng& encoder_rng, Rng& decoder_rng);

    NodeId forward(Tape& tape, NodeId x) const { return forward_impl(tape, x, true); }

    // use_skips=false replaces every skip input with zeros; only used to
    // verify the skips are actually wired.
    NodeId forward_impl(Tape& tape, NodeId x, bool use_skips) const;

    const Encoder& encoder() const { return encoder_; }
    const SegmenterConfig& config() const { return cfg_; }

private:
    SegmenterConfig cfg_;
    Encoder encoder_;
    std::vector<Parameter*> dec_weights_;
    std::vector<Parameter*> dec_biases_;
    Parameter* head_w_ = nullptr;
    Parameter* head_b_ = nullptr;
};

struct CeDiceLoss {
    NodeId total = -1;
    NodeId cross_entropy = -1;
    NodeId dice = -1;
};

// Mean pixel cross-entropy plus mean per-class soft Dice loss (1 - Dice),
// summed with equal weight. target is B x H x W of class ids; pixels equal to
// ignore_label are excluded from both terms. Dice averages over the classes
// present in the target, with 1e-6 smoothing in numerator and denominator.
CeDiceLoss ce_dice_loss(Tape& tape, NodeId logits, const Tensor& target, int ignore_label = 255);

// Kaiming fan-in normal init used for every conv / linear weight.
void kaiming_init(Tensor& w, int fan_in, Rng& rng);

}  // namespace sa
