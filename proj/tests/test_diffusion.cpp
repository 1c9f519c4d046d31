#include <doctest.h>

#include <cmath>

#include "forgeloc/diffusion.hpp"
#include "test_util.hpp"

using namespace forgeloc;

namespace {

// Analytic mean/variance predictor for schedule-level tests: shrink toward
// zero with the schedule's posterior variance.
MeanVarPredictor shrink_predictor(const DiffusionSchedule& schedule, double factor = 0.97) {
    return [&schedule, factor](const Image& x_t, int t) {
        NoisePredictorOutput out;
        out.mean = x_t;
        for (double& v : out.mean.data) v *= factor;
        out.variance = Image(x_t.c, x_t.h, x_t.w, schedule.posterior_var[t - 1]);
        return out;
    };
}

Image random_signal(int c, int n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Image img(c, n, n);
    Rng rng(seed);
    for (double& v : img.data) v = lo + (hi - lo) * rng.uniform();
    return img;
}

BinaryMask random_mask(int n, uint64_t seed, double p = 0.5) {
    BinaryMask m(n, n);
    Rng rng(seed);
    for (auto& v : m.values) v = rng.uniform() < p ? 1 : 0;
    return m;
}

}  // namespace

TEST_SUITE_BEGIN("diffusion");

TEST_CASE("schedule: linear betas give a strictly decreasing cumulative product") {
    DiffusionSchedule s = DiffusionSchedule::linear(50);
    CHECK(s.alpha_bar[0] == 1.0);
    for (int t = 1; t <= s.T; ++t) {
        CHECK(s.betas[t - 1] > 0.0);
        CHECK(s.betas[t - 1] < 1.0);
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    }
    // Posterior variance at the first step is exactly zero (alpha_bar[0]=1).
    CHECK(s.posterior_var[0] == 0.0);
    CHECK_THROWS_AS(DiffusionSchedule::linear(0), ConfigError);
}

TEST_CASE("forward_diffuse: t=0 returns x0 exactly and consumes no draws") {
    DiffusionSchedule s = DiffusionSchedule::linear(10);
    Image x0 = random_signal(1, 4, 3);
    Rng rng(7);
    DiffusionState state = forward_diffuse(x0, 0, s, rng);
    CHECK(state.t == 0);
    CHECK(state.x.data == x0.data);
    Rng fresh(7);
    CHECK(rng.next_u64() == fresh.next_u64());

    CHECK_THROWS_AS(forward_diffuse(x0, 11, s, rng), DomainError);
    CHECK_THROWS_AS(forward_diffuse(x0, -1, s, rng), DomainError);
}

TEST_CASE("forward_diffuse: same seed twice reproduces x_t bit-exactly") {
    DiffusionSchedule s = DiffusionSchedule::linear(20);
    Image x0 = random_signal(3, 8, 4);
    Rng a(11), b(11);
    CHECK(forward_diffuse(x0, 13, s, a).x.data == forward_diffuse(x0, 13, s, b).x.data);
}

TEST_CASE("forward_diffuse: empirical variance of x_T matches 1 - alpha_bar_T") {
    DiffusionSchedule s = DiffusionSchedule::linear(50);
    const double target = 1.0 - s.alpha_bar[s.T];
    Image zero(1, 1, 1, 0.0);
    Rng rng(1234);
    const int n = 10000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = forward_diffuse(zero, s.T, s, rng).x.data[0];
        sum += v;
        sum_sq += v * v;
    }
    const double mean_v = sum / n;
    const double var = (sum_sq - n * mean_v * mean_v) / (n - 1);
    // Within 3% of the schedule value and within 3 standard errors.
    CHECK(std::abs(var - target) / target < 0.03);
    const double se = target * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(var - target) < 3.0 * se);
}

TEST_CASE("forward_diffuse: marginal mean tracks sqrt(alpha_bar_t) x0") {
    DiffusionSchedule s = DiffusionSchedule::linear(40);
    Image x0(1, 1, 1, 0.8);
    Rng rng(99);
    const int t = 25, n = 10000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += forward_diffuse(x0, t, s, rng).x.data[0];
    const double expected = std::sqrt(s.alpha_bar[t]) * 0.8;
    const double se = std::sqrt(1.0 - s.alpha_bar[t]) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(sum / n - expected) < 3.0 * se);
}

TEST_CASE("ddpm_reverse_step: zero variance returns the mean exactly") {
    DiffusionSchedule s = DiffusionSchedule::linear(10);
    Image mu = random_signal(2, 4, 5);
    MeanVarPredictor pred = [&mu](const Image& x_t, int) {
        return NoisePredictorOutput{mu, Image(x_t.c, x_t.h, x_t.w, 0.0)};
    };
    Rng rng(3);
    DiffusionState state{random_signal(2, 4, 6), 5};
    DiffusionState out = ddpm_reverse_step(state, pred, s, rng);
    CHECK(out.t == 4);
    CHECK(out.x.data == mu.data);
    CHECK(out.x.c == 2);

    state.t = 0;
    CHECK_THROWS_AS(ddpm_reverse_step(state, pred, s, rng), DomainError);
}

TEST_CASE("ddpm_reverse_step: output reproduces mean + sqrt(var) * z from the oracle generator") {
    DiffusionSchedule s = DiffusionSchedule::linear(10);
    Image mu = random_signal(1, 3, 7);
    const double var = 0.04;
    MeanVarPredictor pred = [&mu, var](const Image& x_t, int) {
        return NoisePredictorOutput{mu, Image(x_t.c, x_t.h, x_t.w, var)};
    };
    Rng impl_rng(21);
    DiffusionState out = ddpm_reverse_step({random_signal(1, 3, 8), 4}, pred, s, impl_rng);

    Rng oracle(21);
    for (size_t i = 0; i < out.x.data.size(); ++i) {
        const double expect = mu.data[i] + std::sqrt(var) * oracle.normal();
        CHECK(out.x.data[i] == expect);
    }
}

TEST_CASE("ddpm_sample: T=1 with zero-variance identity-mean predictor returns the initial draw") {
    DiffusionSchedule s = DiffusionSchedule::linear(1);
    MeanVarPredictor identity = [](const Image& x_t, int) {
        return NoisePredictorOutput{x_t, Image(x_t.c, x_t.h, x_t.w, 0.0)};
    };
    Rng rng(31);
    Image out = ddpm_sample(identity, s, 1, 2, 2, rng);
    Rng oracle(31);
    for (double v : out.data) {
        const double z = std::clamp(oracle.normal(), -1.0, 1.0);
        CHECK(v == z);
    }
    Rng r1(32), r2(32);
    CHECK(ddpm_sample(identity, s, 1, 2, 2, r1).data == ddpm_sample(identity, s, 1, 2, 2, r2).data);
}

TEST_CASE("repaint_step: all-ones mask equals the plain reverse step bit-exactly") {
    DiffusionSchedule s = DiffusionSchedule::linear(12);
    MeanVarPredictor pred = shrink_predictor(s);
    Image x0 = random_signal(1, 4, 41);
    DiffusionState state{random_signal(1, 4, 42), 7};

    BinaryMask ones(4, 4, 1);
    Rng r1(55), r2(55);
    DiffusionState repainted = repaint_step(state, x0, ones, pred, s, r1);
    DiffusionState plain = ddpm_reverse_step(state, pred, s, r2);
    CHECK(repainted.x.data == plain.x.data);
    CHECK(repainted.t == plain.t);
}

TEST_CASE("repaint_step: all-zeros mask equals forward_diffuse(x0, t-1) bit-exactly") {
    DiffusionSchedule s = DiffusionSchedule::linear(12);
    MeanVarPredictor pred = shrink_predictor(s);
    Image x0 = random_signal(1, 4, 43);
    DiffusionState state{random_signal(1, 4, 44), 7};

    BinaryMask zeros(4, 4, 0);
    Rng r1(66);
    DiffusionState repainted = repaint_step(state, x0, zeros, pred, s, r1);

    // Oracle: skip the reverse-step draws, then replay the forward noise.
    Rng r2(66);
    for (int i = 0; i < 16; ++i) r2.normal();
    const int t_known = 6;
    const double a = std::sqrt(s.alpha_bar[t_known]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t_known]);
    for (size_t i = 0; i < repainted.x.data.size(); ++i) {
        const double expect = a * x0.data[i] + b * r2.normal();
        CHECK(repainted.x.data[i] == expect);
    }
}

TEST_CASE("repaint_step: mixed 2x2 mask composes per pixel") {
    DiffusionSchedule s = DiffusionSchedule::linear(8);
    MeanVarPredictor pred = shrink_predictor(s);
    Image x0 = random_signal(1, 2, 45);
    DiffusionState state{random_signal(1, 2, 46), 5};
    BinaryMask mask(2, 2);
    mask.at(0, 1) = 1;
    mask.at(1, 0) = 1;

    Rng r_impl(77);
    DiffusionState out = repaint_step(state, x0, mask, pred, s, r_impl);

    // Elementwise oracle from two replayed streams.
    Rng r_rev(77);
    std::vector<double> sampled(4);
    {
        NoisePredictorOutput po = pred(state.x, state.t);
        for (int i = 0; i < 4; ++i) sampled[i] = po.mean.data[i] + std::sqrt(po.variance.data[i]) * r_rev.normal();
    }
    std::vector<double> known(4);
    {
        const double a = std::sqrt(s.alpha_bar[4]), b = std::sqrt(1.0 - s.alpha_bar[4]);
        for (int i = 0; i < 4; ++i) known[i] = a * x0.data[i] + b * r_rev.normal();
    }
    for (int i = 0; i < 4; ++i) CHECK(out.x.data[i] == (mask.values[i] ? sampled[i] : known[i]));
}

TEST_CASE("repaint_inpaint: all-zero mask returns x0 up to clipping") {
    DiffusionSchedule s = DiffusionSchedule::linear(15);
    MeanVarPredictor pred = shrink_predictor(s);
    Image x0 = random_signal(3, 4, 51, 0.0, 1.0);  // pixel space
    BinaryMask zeros(4, 4, 0);
    Rng rng(88);
    Image out = repaint_inpaint(x0, zeros, pred, s, rng);
    for (size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(x0.data[i]).epsilon(1e-12));
}

TEST_CASE("repaint_inpaint: unmasked pixels survive the whole trajectory") {
    DiffusionSchedule s = DiffusionSchedule::linear(15);
    MeanVarPredictor pred = shrink_predictor(s);
    Image x0 = random_signal(1, 8, 52, 0.0, 1.0);
    BinaryMask mask = random_mask(8, 53, 0.4);
    Rng rng(89);
    Image out = repaint_inpaint(x0, mask, pred, s, rng);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            if (!mask.at(y, x)) CHECK(out.at(0, y, x) == doctest::Approx(x0.at(0, y, x)).epsilon(1e-12));
}

TEST_CASE("downsize_mask_for_latent: max pooling semantics") {
    BinaryMask m(8, 8);
    CHECK(downsize_mask_for_latent(m, 1).values == m.values);

    m.at(5, 6) = 1;  // single fake pixel
    BinaryMask down = downsize_mask_for_latent(m, 4);
    CHECK(down.h == 2);
    CHECK(down.area() == 1);
    CHECK(down.at(1, 1) == 1);

    BinaryMask empty(8, 8);
    CHECK(downsize_mask_for_latent(empty, 2).area() == 0);

    BinaryMask odd(6, 6);
    CHECK_THROWS_AS(downsize_mask_for_latent(odd, 4), ShapeError);
}

TEST_CASE("repaint_ldm_inpaint: identity codec reduces to pixel-space repaint bit-exactly") {
    DiffusionSchedule s = DiffusionSchedule::linear(10);
    MeanVarPredictor pred = shrink_predictor(s);
    IdentityCodec codec;
    for (int trial = 0; trial < 3; ++trial) {
        Image x0 = random_signal(3, 8, 500 + trial, 0.0, 1.0);
        BinaryMask mask = random_mask(8, 600 + trial);
        Rng r1(700 + trial), r2(700 + trial);
        Image a = repaint_inpaint(x0, mask, pred, s, r1);
        Image b = repaint_ldm_inpaint(x0, mask, codec, pred, s, r2);
        CHECK(a.data == b.data);
    }
}

TEST_CASE("repaint_ldm_inpaint: a lossy codec leaves a decoder imprint outside the mask") {
    // Untrained conv autoencoder (f=2) on 16x16: reconstruction is inexact,
    // so even unmasked pixels differ from the original.
    CodecConfig cc{3, 8, 4};
    ConvAutoencoder codec(cc, 9);
    DiffusionSchedule s = DiffusionSchedule::linear(10);
    PredictorConfig pc{4, 6, 10};
    NoisePredictorNet latent(pc, 10);
    Image x0 = random_signal(3, 16, 71, 0.0, 1.0);
    BinaryMask mask(16, 16);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) mask.at(y, x) = 1;
    Rng rng(72);
    Image out = repaint_ldm_inpaint(x0, mask, codec, latent.as_mean_var(s), s, rng);
    CHECK(out.h == 16);
    CHECK(out.c == 3);
    double residual = 0.0;
    long count = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            if (!mask.at(y, x))
                for (int ch = 0; ch < 3; ++ch) {
                    residual += std::abs(out.at(ch, y, x) - x0.at(ch, y, x));
                    ++count;
                }
    CHECK(residual / count > 1e-4);
}

TEST_CASE("toy sampler: trained two-tone model lands near the training mean") {
    // Two constant tones at +-0.6; the sampler's per-draw mean should sit
    // near one of them and the global mean near zero.
    DiffusionSchedule s = DiffusionSchedule::linear(20);
    PredictorConfig pc{1, 8, 20};
    NoisePredictorNet net(pc, 13);
    std::vector<Image> data = {Image(1, 8, 8, -0.6), Image(1, 8, 8, 0.6)};
    Rng train_rng(14);
    train_noise_predictor(net, data, s, 400, 4, 2e-3, train_rng);

    MeanVarPredictor pred = net.as_mean_var(s);
    Rng sample_rng(15);
    double total = 0.0;
    const int draws = 500;
    for (int i = 0; i < draws; ++i) {
        Image sample = ddpm_sample(pred, s, 1, 8, 8, sample_rng);
        double mean_v = 0.0;
        for (double v : sample.data) mean_v += v;
        total += mean_v / sample.data.size();
    }
    CHECK(std::abs(total / draws) < 0.1);
}

TEST_CASE("toy inpainting: masked-region statistics match the generator") {
    DiffusionSchedule s = DiffusionSchedule::linear(20);
    PredictorConfig pc{1, 8, 20};
    NoisePredictorNet net(pc, 16);
    // Constant mid-tone dataset in diffusion space.
    std::vector<Image> data = {Image(1, 8, 8, 0.2)};
    Rng train_rng(17);
    train_noise_predictor(net, data, s, 400, 4, 2e-3, train_rng);

    MeanVarPredictor pred = net.as_mean_var(s);
    Image x0(1, 8, 8, 0.5);  // pixel space -> 0.0 in diffusion space
    BinaryMask mask(8, 8);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) mask.at(y, x) = 1;

    double masked_mean = 0.0;
    long count = 0;
    Rng rng(18);
    for (int i = 0; i < 200; ++i) {
        Image out = repaint_inpaint(x0, mask, pred, s, rng);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                if (mask.at(y, x)) {
                    masked_mean += 2.0 * out.at(0, y, x) - 1.0;  // back to diffusion space
                    ++count;
                }
    }
    masked_mean /= count;
    CHECK(std::abs(masked_mean - 0.2) < 0.15);
}

TEST_CASE("codec: conv autoencoder reconstruction improves with training") {
    CodecConfig cc{3, 8, 4};
    ConvAutoencoder codec(cc, 19);
    // Smooth gradients with per-image offsets: compressible at f = 2.
    std::vector<Image> data;
    for (int i = 0; i < 4; ++i) {
        Image img(3, 16, 16);
        Rng r(900 + i);
        const double ox = r.uniform(), oy = r.uniform(), base = 0.3 + 0.4 * r.uniform();
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    img.at(ch, y, x) = std::clamp(base + 0.3 * (ox * x + oy * y) / 16.0 - 0.1 * ch, 0.0, 1.0);
        data.push_back(std::move(img));
    }

    auto recon_error = [&] {
        double err = 0.0;
        for (const auto& img : data) {
            Image r = codec.decode(codec.encode(img));
            for (size_t i = 0; i < img.data.size(); ++i) err += (r.data[i] - img.data[i]) * (r.data[i] - img.data[i]);
        }
        return err;
    };
    const double before = recon_error();
    Rng rng(20);
    train_codec(codec, data, 300, 4, 2e-3, rng);
    CHECK(recon_error() < 0.5 * before);
}

TEST_CASE("determinism: sampling reproduces bit-exactly under a fixed seed") {
    DiffusionSchedule s = DiffusionSchedule::linear(15);
    PredictorConfig pc{3, 6, 15};
    NoisePredictorNet net(pc, 23);
    MeanVarPredictor pred = net.as_mean_var(s);
    Rng r1(24), r2(24);
    CHECK(ddpm_sample(pred, s, 3, 8, 8, r1).data == ddpm_sample(pred, s, 3, 8, 8, r2).data);

    Image x0 = random_signal(3, 8, 25, 0.0, 1.0);
    BinaryMask mask = random_mask(8, 26);
    Rng r3(27), r4(27);
    CHECK(repaint_inpaint(x0, mask, pred, s, r3).data == repaint_inpaint(x0, mask, pred, s, r4).data);
}

TEST_SUITE_END();
