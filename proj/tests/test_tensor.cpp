#include <doctest.h>

#include <cmath>

#include "forgeloc/nn.hpp"
#include "forgeloc/rng.hpp"
#include "forgeloc/tensor.hpp"
#include "test_util.hpp"

using namespace forgeloc;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (double& v : data) v = scale * rng.normal();
    return Tensor::from(shape, std::move(data), requires_grad);
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("rng: fixed seed reproduces the stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    Rng c(43);
    bool same = true;
    Rng a2(42);
    for (int i = 0; i < 10; ++i) same &= a2.normal() == c.normal();
    CHECK_FALSE(same);
}

TEST_CASE("rng: derive gives independent, deterministic streams") {
    CHECK(Rng::derive(1, {2, 3}) == Rng::derive(1, {2, 3}));
    CHECK(Rng::derive(1, {2, 3}) != Rng::derive(1, {3, 2}));
    CHECK(Rng::derive(1, {2}) != Rng::derive(2, {2}));
}

TEST_CASE("elementwise ops compute expected values") {
    Tensor a = Tensor::from({3}, {1.0, -2.0, 3.0});
    Tensor b = Tensor::from({3}, {0.5, 4.0, -1.0});
    CHECK(add(a, b).values()[1] == 2.0);
    CHECK(sub(a, b).values()[2] == 4.0);
    CHECK(mul(a, b).values()[0] == 0.5);
    CHECK(relu(a).values()[1] == 0.0);
    CHECK(relu(a).values()[2] == 3.0);
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(mean(a).item() == doctest::Approx(2.0 / 3.0));
    CHECK(sum(a).item() == doctest::Approx(2.0));
    CHECK(clamp(a, -1.0, 1.0).values()[1] == -1.0);
}

TEST_CASE("max_all routes its subgradient to the first maximal element") {
    Tensor a = Tensor::from({4}, {1.0, 5.0, 5.0, 2.0}, true);
    Tensor m = max_all(a);
    CHECK(m.item() == 5.0);
    m.backward();
    CHECK(a.grad()[1] == 1.0);
    CHECK(a.grad()[2] == 0.0);
}

TEST_CASE("backward accumulates through a shared subgraph") {
    // f = sum(x*x) + sum(x) -> df/dx = 2x + 1
    Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
    Tensor f = add(sum(mul(x, x)), sum(x));
    f.backward();
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK(x.grad()[1] == doctest::Approx(5.0));
    CHECK(x.grad()[2] == doctest::Approx(7.0));
}

TEST_CASE("no-grad mode skips graph construction") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gradients: elementwise and reductions vs finite differences") {
    Rng rng(7);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor y = random_tensor({4, 3}, rng);
    auto loss = [&] {
        Tensor t = mul(sigmoid(x), add_scalar(tanh_t(y), 1.5));
        return mean(mul(t, t));
    };
    auto report = testutil::gradcheck(loss, {x, y}, 8, 11);
    CHECK(report.checked >= 12);
    CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("gradients: bce_mean vs finite differences") {
    Rng rng(9);
    std::vector<double> pv(6), tv(6);
    for (auto& v : pv) v = 0.1 + 0.8 * rng.uniform();
    for (auto& v : tv) v = rng.uniform();
    Tensor p = Tensor::from({6}, pv, true);
    Tensor t = Tensor::from({6}, tv);
    auto loss = [&] { return bce_mean(p, t); };
    auto report = testutil::gradcheck(loss, {p}, 6, 13);
    CHECK(report.checked >= 5);
    CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("gradients: conv2d, depthwise, pooling, norm, linear vs finite differences") {
    Rng rng(17);
    const int c = 3, out_c = 4;
    Tensor x = random_tensor({c, 6, 6}, rng);
    Tensor wt = random_tensor({out_c, c, 3, 3}, rng, true, 0.4);
    Tensor bias = random_tensor({out_c}, rng, true, 0.1);
    Tensor dw = random_tensor({out_c, 3, 3}, rng, true, 0.4);
    Tensor gamma = random_tensor({out_c}, rng, true, 0.3);
    Tensor beta = random_tensor({out_c}, rng, true, 0.1);
    Tensor lw = random_tensor({2, out_c}, rng, true, 0.5);
    Tensor lb = random_tensor({2}, rng, true, 0.1);
    std::vector<double> mean_c = {0.1, -0.2, 0.05, 0.0};
    std::vector<double> inv_std = {1.2, 0.8, 1.0, 0.9};

    auto loss = [&] {
        Tensor t = nn::conv2d(x, wt, bias, 3);
        t = nn::channel_affine_norm(t, gamma, beta, mean_c, inv_std);
        t = tanh_t(t);  // smooth nonlinearity keeps the FD oracle clean
        t = nn::depthwise_conv2d(t, dw, 3);
        t = nn::avg_pool2(t);
        t = nn::upsample_nearest2(t);
        Tensor pooled = nn::global_avg_pool(t);
        Tensor out = nn::linear(pooled, lw, lb);
        return mean(mul(out, out));
    };
    auto report = testutil::gradcheck(loss, {x, wt, bias, dw, gamma, beta, lw, lb}, 5, 23);
    CHECK(report.checked >= 30);
    CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("gradients: channel ops vs finite differences") {
    Rng rng(29);
    Tensor f = random_tensor({3, 4, 4}, rng);
    Tensor m = random_tensor({1, 4, 4}, rng);
    Tensor g = random_tensor({2, 4, 4}, rng);
    auto loss = [&] {
        Tensor mod = mul_bcast_channel(f, sigmoid(m));
        Tensor cat = concat_channels(mod, g);
        Tensor ch = select_channel(cat, 4);
        return add(mean(mul(cat, cat)), max_all(ch));
    };
    auto report = testutil::gradcheck(loss, {f, m, g}, 6, 31);
    CHECK(report.checked >= 12);
    CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("adam: converges on a quadratic and is deterministic") {
    auto run = [] {
        nn::ParamStore store;
        Tensor p = store.create("p", {3}, {5.0, -4.0, 2.0});
        nn::Adam opt(store.params(), 0.05);
        for (int i = 0; i < 300; ++i) {
            opt.zero_grad();
            Tensor loss = mean(mul(p, p));
            loss.backward();
            opt.step();
        }
        return std::vector<double>(p.values().begin(), p.values().end());
    };
    auto a = run(), b = run();
    CHECK(a == b);
    for (double v : a) CHECK(std::abs(v) < 1e-2);
}

TEST_CASE("checksum is sensitive to value changes") {
    Tensor a = Tensor::from({3}, {1.0, 2.0, 3.0});
    Tensor b = Tensor::from({3}, {1.0, 2.0, 3.0000001});
    CHECK(a.checksum() != b.checksum());
}

TEST_SUITE_END();
