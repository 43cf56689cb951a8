#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "slidealign/checkpoint.hpp"
#include "slidealign/mask.hpp"
#include "slidealign/grad_check.hpp"
#include "slidealign/model.hpp"
#include "slidealign/optimizer.hpp"
#include "slidealign/ssl_loss.hpp"

using namespace sa;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("encoder maps zero input to the zero representation") {
    ParamStore store;
    Rng rng(1);
    Encoder enc(EncoderConfig{3, {4, 8}}, store, rng);
    Tape tape;
    const NodeId rep = enc.encode(tape, tape.constant(Tensor({2, 3, 8, 8})));
    for (int64_t i = 0; i < tape.value(rep).numel(); ++i) CHECK(tape.value(rep)[i] == 0.0);
}

TEST_CASE("encoder gives identical representations for identical rows") {
    ParamStore store;
    Rng rng(2);
    Encoder enc(EncoderConfig{3, {4, 8}}, store, rng);
    Rng drng(3);
    const Tensor one = random_tensor(drng, {1, 3, 8, 8});
    Tensor two({2, 3, 8, 8});
    std::copy(one.data(), one.data() + one.numel(), two.data());
    std::copy(one.data(), one.data() + one.numel(), two.data() + one.numel());
    Tape tape;
    const Tensor& reps = tape.value(enc.encode(tape, tape.constant(two)));
    for (int c = 0; c < reps.dim(1); ++c) CHECK(reps.at(0, c) == reps.at(1, c));
}

TEST_CASE("encoder output shape: 64x64 input through 4 blocks pools 4x4 maps") {
    ParamStore store;
    Rng rng(4);
    Encoder enc(EncoderConfig{3, {8, 16, 32, 64}}, store, rng);
    CHECK(encoder_downsample(enc.config()) == 16);
    Tape tape;
    Rng drng(5);
    const NodeId x = tape.constant(random_tensor(drng, {2, 3, 64, 64}));
    const auto feats = enc.forward_features(tape, x);
    REQUIRE(feats.size() == 4);
    CHECK(tape.value(feats.back()).shape() == std::vector<int>{2, 64, 4, 4});
    const NodeId rep = tape.global_avg_pool(feats.back());
    CHECK(tape.value(rep).shape() == std::vector<int>{2, 64});
}

TEST_CASE("encoder rejects indivisible spatial sizes") {
    ParamStore store;
    Rng rng(6);
    Encoder enc(EncoderConfig{3, {4, 8}}, store, rng);
    Tape tape;
    const NodeId x = tape.constant(Tensor({1, 3, 10, 10}));
    CHECK_THROWS_AS(enc.encode(tape, x), Error);
}

TEST_CASE("projector four-fold dimension contract: R=16 gives D=64") {
    const ProjectorConfig cfg = ProjectorConfig::fourfold(16);
    CHECK(cfg.out_dim == 64);
    ParamStore store;
    Rng rng(7);
    Projector proj(cfg, store, rng);
    Tape tape;
    Rng drng(8);
    const NodeId z = proj.forward(tape, tape.constant(random_tensor(drng, {4, 16})));
    CHECK(tape.value(z).shape() == std::vector<int>{4, 64});
}

TEST_CASE("projector with identity-like weights stays finite") {
    ParamStore store;
    Rng rng(9);
    Projector proj(ProjectorConfig::fourfold(4), store, rng);
    for (size_t i = 0; i < store.size(); ++i) {
        Parameter* p = store.at(i);
        p->value.fill(0.0);
        if (p->value.ndim() == 2)
            for (int d = 0; d < std::min(p->value.dim(0), p->value.dim(1)); ++d)
                p->value.at(d, d) = 1.0;
    }
    Tape tape;
    Rng drng(10);
    const NodeId z = proj.forward(tape, tape.constant(random_tensor(drng, {4, 4})));
    CHECK(tape.value(z).all_finite());
}

TEST_CASE("projector rejects batch of one") {
    ParamStore store;
    Rng rng(11);
    Projector proj(ProjectorConfig::fourfold(4), store, rng);
    Tape tape;
    const NodeId r = tape.constant(Tensor({1, 4}));
    CHECK_THROWS_AS(proj.forward(tape, r), Error);
}

TEST_CASE("gradient reaches all three projector layers") {
    ParamStore store;
    Rng rng(12);
    Projector proj(ProjectorConfig::fourfold(4), store, rng);
    Tape tape;
    Rng drng(13);
    const NodeId z = proj.forward(tape, tape.constant(random_tensor(drng, {4, 4})));
    store.zero_grad();
    tape.backward(tape.sum_all(tape.mul(z, z)));
    for (size_t i = 0; i < store.size(); ++i) {
        const Parameter* p = store.at(i);
        double norm = 0.0;
        for (int64_t k = 0; k < p->grad.numel(); ++k) norm += std::abs(p->grad[k]);
        INFO(p->name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("segmenter logits keep the input spatial size") {
    ParamStore store;
    Rng er(14), dr(15);
    Segmenter seg(SegmenterConfig{EncoderConfig{3, {4, 8}}, 3}, store, er, dr);
    Tape tape;
    Rng drng(16);
    const NodeId logits = seg.forward(tape, tape.constant(random_tensor(drng, {2, 3, 16, 16})));
    CHECK(tape.value(logits).shape() == std::vector<int>{2, 3, 16, 16});
}

TEST_CASE("translated input changes the logits (no global pooling in the decoder)") {
    ParamStore store;
    Rng er(17), dr(18);
    Segmenter seg(SegmenterConfig{EncoderConfig{3, {4, 8}}, 3}, store, er, dr);
    Rng drng(19);
    const Tensor x = random_tensor(drng, {1, 3, 16, 16});
    Tensor shifted({1, 3, 16, 16});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int px = 0; px < 16; ++px)
                shifted.at(0, c, y, px) = x.at(0, c, y, (px + 2) % 16);
    Tape t1, t2;
    const Tensor& a = t1.value(seg.forward(t1, t1.constant(x)));
    const Tensor& b = t2.value(seg.forward(t2, t2.constant(shifted)));
    double diff = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff > 1e-8);
}

TEST_CASE("removing skip inputs changes the output (skips are wired)") {
    ParamStore store;
    Rng er(20), dr(21);
    Segmenter seg(SegmenterConfig{EncoderConfig{3, {4, 8}}, 3}, store, er, dr);
    Rng drng(22);
    const Tensor x = random_tensor(drng, {1, 3, 16, 16});
    Tape t1, t2;
    const Tensor& with_skips = t1.value(seg.forward_impl(t1, t1.constant(x), true));
    const Tensor& without = t2.value(seg.forward_impl(t2, t2.constant(x), false));
    double diff = 0.0;
    for (int64_t i = 0; i < with_skips.numel(); ++i)
        diff = std::max(diff, std::abs(with_skips[i] - without[i]));
    CHECK(diff > 1e-8);
}

TEST_CASE("ce_dice_loss: near-one-hot correct prediction is below 1e-6") {
    // logits with a +-20 margin in favor of the true class
    const int b = 1, h = 4, w = 4;
    Tensor target({b, h, w});
    Tensor logits({b, 3, h, w});
    Rng rng(23);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int cls = static_cast<int>(rng.uniform_int(3));
            target[static_cast<int64_t>(y * w + x)] = cls;
            for (int c = 0; c < 3; ++c) logits.at(0, c, y, x) = c == cls ? 20.0 : -20.0;
        }
    Tape tape;
    const CeDiceLoss loss = ce_dice_loss(tape, tape.constant(logits), target);
    CHECK(tape.value(loss.total).item() < 1e-6);
}

TEST_CASE("ce_dice_loss: uniform logits give a ln(3) cross-entropy term") {
    const int b = 2, h = 4, w = 4;
    Tensor target({b, h, w});
    Rng rng(24);
    for (int64_t i = 0; i < target.numel(); ++i) target[i] = static_cast<double>(rng.uniform_int(3));
    Tape tape;
    const CeDiceLoss loss = ce_dice_loss(tape, tape.constant(Tensor({b, 3, h, w})), target);
    CHECK(tape.value(loss.cross_entropy).item() == doctest::Approx(std::log(3.0)).epsilon(1e-10));
}

TEST_CASE("ce_dice_loss: completely wrong hard prediction drives Dice terms to 1") {
    const int b = 1, h = 4, w = 4;
    Tensor target({b, h, w});  // all class 0
    Tensor logits({b, 3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) logits.at(0, c, y, x) = c == 1 ? 20.0 : -20.0;
    Tape tape;
    const CeDiceLoss loss = ce_dice_loss(tape, tape.constant(logits), target);
    CHECK(tape.value(loss.dice).item() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("ce_dice_loss rejects out-of-range target classes") {
    Tensor target({1, 2, 2});
    target[0] = 7.0;
    Tape tape;
    const NodeId logits = tape.constant(Tensor({1, 3, 2, 2}));
    CHECK_THROWS_AS(ce_dice_loss(tape, logits, target), Error);
}

TEST_CASE("ce_dice_loss excludes ignore-label pixels from both terms") {
    const int h = 2, w = 2;
    Tensor logits({1, 3, h, w});
    Rng rng(25);
    for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-1.0, 1.0);

    // full target vs. the same target with one pixel ignored
    Tensor target({1, h, w});
    target[0] = 0;
    target[1] = 1;
    target[2] = 2;
    target[3] = 1;
    Tensor masked = target;
    masked[3] = kIgnoreLabel;

    // oracle: CE over the three valid pixels only
    Tape tape;
    const NodeId logp = tape.log_softmax_channel(tape.constant(logits));
    const Tensor& lp = tape.value(logp);
    double ce = 0.0;
    ce -= lp.at(0, 0, 0, 0);
    ce -= lp.at(0, 1, 0, 1);
    ce -= lp.at(0, 2, 1, 0);
    ce /= 3.0;

    Tape t2;
    const CeDiceLoss loss = ce_dice_loss(t2, t2.constant(logits), masked);
    CHECK(t2.value(loss.cross_entropy).item() == doctest::Approx(ce).epsilon(1e-12));
}

TEST_CASE("ce_dice_loss is non-negative on random inputs") {
    for (uint64_t trial = 0; trial < 10; ++trial) {
        Rng rng(derive_seed(26, "cedice", trial));
        Tensor logits({1, 3, 4, 4});
        for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-3.0, 3.0);
        Tensor target({1, 4, 4});
        for (int64_t i = 0; i < target.numel(); ++i)
            target[i] = static_cast<double>(rng.uniform_int(3));
        Tape tape;
        const CeDiceLoss loss = ce_dice_loss(tape, tape.constant(logits), target);
        CHECK(tape.value(loss.total).item() >= 0.0);
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamStore store;
    Parameter* p = store.add("p", Tensor::from({3}, {1.0, -2.0, 3.0}));
    const Tensor before = p->value;
    Adam adam(store.all());
    store.zero_grad();
    adam.step(0.1);
    for (int64_t i = 0; i < 3; ++i) CHECK(p->value[i] == before[i]);
}

TEST_CASE("adam first step is approximately -lr * sign(g)") {
    ParamStore store;
    Parameter* p = store.add("p", Tensor::from({2}, {1.0, 1.0}));
    Adam adam(store.all());
    p->grad[0] = 10.0;   // |g| >> eps
    p->grad[1] = -5.0;
    adam.step(0.01);
    CHECK(p->value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(p->value[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));
}

TEST_CASE("adam rejects non-finite gradients") {
    ParamStore store;
    Parameter* p = store.add("p", Tensor::from({1}, {1.0}));
    Adam adam(store.all());
    p->grad[0] = std::nan("");
    CHECK_THROWS_AS(adam.step(0.1), Error);
}

TEST_CASE("adam trajectory matches the published recurrence on a 1-D quadratic") {
    // loss f(x) = 0.5 * (x - 3)^2, gradient x - 3
    ParamStore store;
    Parameter* p = store.add("x", Tensor::from({1}, {0.0}));
    Adam adam(store.all());

    // independent reference implementation of the Adam recurrence
    double x_ref = 0.0, m = 0.0, v = 0.0;
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, lr = 0.05;
    for (int t = 1; t <= 100; ++t) {
        const double g = p->value[0] - 3.0;
        store.zero_grad();
        p->grad[0] = g;
        adam.step(lr);

        const double g_ref = x_ref - 3.0;
        m = beta1 * m + (1 - beta1) * g_ref;
        v = beta2 * v + (1 - beta2) * g_ref * g_ref;
        const double mhat = m / (1 - std::pow(beta1, t));
        const double vhat = v / (1 - std::pow(beta2, t));
        x_ref -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(std::abs(p->value[0] - x_ref) < 1e-12);
    }
}

TEST_CASE("cyclic learning rate triangular wave") {
    const CyclicLr lr{0.1, 1.0, 100};
    CHECK(lr.at(0) == doctest::Approx(0.1));
    CHECK(lr.at(50) == doctest::Approx(1.0));
    CHECK(lr.at(25) == doctest::Approx((0.1 + 1.0) / 2.0));
    CHECK(lr.at(100) == doctest::Approx(0.1));  // full cycle wraps
    CHECK_THROWS_AS((CyclicLr{0.0, 1.0, 10}.at(0)), Error);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    ParamStore store;
    Rng rng(27);
    store.add("encoder.block0.w", random_tensor(rng, {4, 3, 3, 3}));
    store.add("encoder.block0.b", random_tensor(rng, {4}));
    store.add("head.w", random_tensor(rng, {3, 4, 1, 1}));

    const std::string path =
        (std::filesystem::temp_directory_path() / "slidealign_ckpt_test.bin").string();
    nlohmann::json meta;
    meta["purpose"] = "test";
    save_checkpoint(path, meta, store);

    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.meta.at("purpose") == "test");
    REQUIRE(ck.tensors.size() == store.size());
    for (size_t i = 0; i < store.size(); ++i) {
        const Parameter* p = store.at(i);
        CHECK(ck.tensors[i].first == p->name);
        REQUIRE(ck.tensors[i].second.same_shape(p->value));
        CHECK(std::memcmp(ck.tensors[i].second.data(), p->value.data(),
                          static_cast<size_t>(p->value.numel()) * 8) == 0);
    }

    // prefix apply: encoder tensors land in a segmenter-like store
    ParamStore other;
    other.add("encoder.block0.w", Tensor({4, 3, 3, 3}));
    other.add("encoder.block0.b", Tensor({4}));
    other.add("decoder.block0.w", Tensor({2, 2, 3, 3}));
    CHECK(apply_checkpoint(ck, other, "encoder.") == 2);
    CHECK(std::memcmp(other.find("encoder.block0.w")->value.data(),
                      store.find("encoder.block0.w")->value.data(),
                      sizeof(double) * other.find("encoder.block0.w")->value.numel()) == 0);
    std::filesystem::remove(path);
}

TEST_CASE("fixed seed: identical initialization and loss trajectory") {
    auto run = [](uint64_t seed) {
        ParamStore store;
        Rng er(derive_seed(seed, "enc")), dr(derive_seed(seed, "dec"));
        Segmenter seg(SegmenterConfig{EncoderConfig{3, {4, 8}}, 3}, store, er, dr);
        Adam adam(store.all());
        Rng drng(derive_seed(seed, "data"));
        std::vector<double> losses;
        for (int step = 0; step < 3; ++step) {
            const Tensor x = random_tensor(drng, {2, 3, 8, 8});
            Tensor target({2, 8, 8});
            for (int64_t i = 0; i < target.numel(); ++i)
                target[i] = static_cast<double>(drng.uniform_int(3));
            Tape tape;
            const CeDiceLoss loss = ce_dice_loss(tape, seg.forward(tape, tape.constant(x)), target);
            store.zero_grad();
            tape.backward(loss.total);
            adam.step(1e-3);
            losses.push_back(tape.value(loss.total).item());
        }
        for (size_t i = 0; i < store.size(); ++i)
            losses.push_back(store.at(i)->value[0]);
        return losses;
    };
    const auto a = run(77);
    const auto b = run(77);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("end-to-end gradient: tuple loss through encoder and projector") {
    // R=8 encoder on 8x8 inputs; the seed is fixed to keep every relu
    // pre-activation outside the finite-difference window (central
    // differences are invalid across a kink).
    const uint64_t seed = 6;
    ParamStore store;
    Rng er(derive_seed(seed, "e")), pr(derive_seed(seed, "p"));
    Encoder enc(EncoderConfig{3, {4, 8}}, store, er);
    Projector proj(ProjectorConfig::fourfold(enc.rep_dim()), store, pr);
    Rng drng(derive_seed(seed, "d", 2, 32));
    std::vector<Tensor> inputs;
    for (int d = 0; d < 2; ++d) inputs.push_back(random_tensor(drng, {16, 3, 8, 8}, 0.0, 1.0));
    const TupleLossConfig cfg{5e-3, 1e-9};
    const auto params = store.all();
    const double err = grad_check(
        [&](Tape& t) {
            std::vector<NodeId> z;
            for (const Tensor& x : inputs)
                z.push_back(proj.forward(t, enc.encode(t, t.constant(x))));
            return barlow_tuple_loss(t, z, cfg);
        },
        params);
    CHECK(err <= 1e-4);
}

TEST_CASE("end-to-end gradient: segmenter forward through ce_dice_loss") {
    ParamStore store;
    Rng er(31), dr(32);
    Segmenter seg(SegmenterConfig{EncoderConfig{3, {4, 8}}, 3}, store, er, dr);
    Rng drng(33);
    const Tensor x = random_tensor(drng, {2, 3, 8, 8});
    Tensor target({2, 8, 8});
    for (int64_t i = 0; i < target.numel(); ++i) target[i] = static_cast<double>(drng.uniform_int(3));
    const auto params = store.all();
    const double err = grad_check(
        [&](Tape& t) { return ce_dice_loss(t, seg.forward(t, t.constant(x)), target).total; },
        params);
    CHECK(err <= 1e-4);
}
