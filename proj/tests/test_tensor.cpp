// Tensor-core tests: forward semantics, autodiff against central finite
// differences, optimizer behavior, and the learning-rate schedule.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "diarkit/tensor.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

using namespace diarkit;

namespace {

Tensor t2(int r, int c, std::vector<double> v) { return Tensor::from_data({r, c}, std::move(v)); }

double checked(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    return grad_check(f, x);
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction and invariants
// ---------------------------------------------------------------------------

TEST_CASE("tensor construction enforces shape/data agreement") {
    CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1.0, 2.0}), DimensionError);
    CHECK_THROWS_AS(Tensor::zeros({2, -1}), DimensionError);
    // Zero-length axes are allowed: an empty speaker set is a valid result.
    CHECK(Tensor::zeros({2, 0}).numel() == 0);
    Tensor x = Tensor::zeros({2, 3}, true);
    CHECK(x.numel() == 6);
    CHECK(x.grad != nullptr);
    CHECK(x.grad->size() == 6);
    Tensor y = Tensor::zeros({2, 3});
    CHECK(y.grad == nullptr);
    CHECK(Tensor::scalar(4.25).item() == 4.25);
    CHECK_THROWS_AS(Tensor::zeros({2}).item(), ContractError);
}

TEST_CASE("detach shares values but drops the graph") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = mul_scalar(x, 3.0);
    Tensor d = y.detach();
    CHECK(d.node == nullptr);
    CHECK_FALSE(d.requires_grad);
    CHECK(d.at(0) == 3.0);
    CHECK(d.at(1) == 6.0);
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

TEST_CASE("matmul identity") {
    Tensor eye = t2(2, 2, {1, 0, 0, 1});
    Tensor b = t2(2, 2, {5, 6, 7, 8});
    Tensor c = matmul(eye, b);
    for (std::size_t i = 0; i < 4; ++i) CHECK(c.at(i) == b.at(i));
}

TEST_CASE("matmul forced 2x2 product") {
    Tensor a = t2(2, 2, {1, 2, 3, 4});
    Tensor b = t2(2, 2, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.at2(0, 0) == 19);
    CHECK(c.at2(0, 1) == 22);
    CHECK(c.at2(1, 0) == 43);
    CHECK(c.at2(1, 1) == 50);
}

TEST_CASE("matmul shape errors name both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
    CHECK_THROWS_AS(matmul(Tensor::zeros({3}), Tensor::zeros({3, 2})), DimensionError);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 2, 2}), Tensor::zeros({3, 2, 2})), DimensionError);
}

TEST_CASE("grad of sum(A.B) w.r.t. A is ones x B^T") {
    Rng rng(7);
    Tensor a = rand_uniform({3, 4}, -1, 1, rng, true);
    Tensor b = rand_uniform({4, 2}, -1, 1, rng);
    Tensor loss = sum_all(matmul(a, b));
    loss.backward();
    // d/dA[i,l] = sum_j B[l,j]
    for (int i = 0; i < 3; ++i) {
        for (int l = 0; l < 4; ++l) {
            double expect = b.at2(l, 0) + b.at2(l, 1);
            CHECK((*a.grad)[i * 4 + l] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    CHECK(checked([&](const Tensor& x) { return sum_all(matmul(x, b)); }, a) < 1e-6);
    CHECK(checked([&](const Tensor& x) { return sum_all(matmul(a, x)); }, b) < 1e-6);
}

TEST_CASE("batched matmul matches per-slice products") {
    Rng rng(11);
    Tensor a = rand_uniform({2, 3, 3, 4}, -1, 1, rng);
    Tensor b = rand_uniform({2, 3, 4, 2}, -1, 1, rng);
    Tensor c = matmul(a, b);
    CHECK((c.shape == Shape{2, 3, 3, 2}));
    for (int s = 0; s < 6; ++s) {
        Tensor as = t2(3, 4, std::vector<double>(a.data->begin() + s * 12,
                                                 a.data->begin() + (s + 1) * 12));
        Tensor bs = t2(4, 2, std::vector<double>(b.data->begin() + s * 8,
                                                 b.data->begin() + (s + 1) * 8));
        Tensor cs = matmul(as, bs);
        for (int i = 0; i < 6; ++i) CHECK(c.at(s * 6 + i) == cs.at(i));
    }
    // shared unbatched operand on either side
    Tensor w = rand_uniform({4, 5}, -1, 1, rng, true);
    Tensor y = matmul(a, w);
    CHECK((y.shape == Shape{2, 3, 3, 5}));
    CHECK(checked([&](const Tensor& x) { return sum_all(matmul(a, x)); }, w) < 1e-6);
    Tensor lhs = rand_uniform({2, 3}, -1, 1, rng);
    Tensor rhs = rand_uniform({4, 3, 2}, -1, 1, rng);
    CHECK((matmul(lhs, rhs).shape == Shape{4, 2, 2}));
    CHECK(checked([&](const Tensor& x) { return sum_all(matmul(x, rhs)); }, lhs) < 1e-6);
}

TEST_CASE("matmul is bit-identical across thread counts") {
    const int saved = intra_op_threads();
    Rng rng(23);
    Tensor a = rand_uniform({128, 128}, -1, 1, rng);
    Tensor b = rand_uniform({128, 128}, -1, 1, rng);
    set_intra_op_threads(1);
    Tensor c1 = matmul(a, b);
    set_intra_op_threads(4);
    Tensor c4 = matmul(a, b);
    set_intra_op_threads(saved);
    REQUIRE(c1.numel() == c4.numel());
    CHECK(std::memcmp(c1.data->data(), c4.data->data(), c1.numel() * sizeof(double)) == 0);
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

TEST_CASE("elementwise arithmetic forward and grad") {
    Rng rng(3);
    Tensor a = rand_uniform({3, 4}, -1, 1, rng);
    Tensor b = rand_uniform({3, 4}, -1, 1, rng);
    Tensor s = add(a, b);
    Tensor d = sub(a, b);
    Tensor m = mul(a, b);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(s.at(i) == a.at(i) + b.at(i));
        CHECK(d.at(i) == a.at(i) - b.at(i));
        CHECK(m.at(i) == a.at(i) * b.at(i));
    }
    CHECK_THROWS_AS(add(a, Tensor::zeros({4, 3})), DimensionError);
    CHECK(checked([&](const Tensor& x) { return sum_all(mul(add(x, b), sub(x, b))); }, a) < 1e-6);
    CHECK(checked([&](const Tensor& x) { return sum_all(mul_scalar(add_scalar(x, 1.5), -2.0)); },
                  a) < 1e-6);
    CHECK(checked([&](const Tensor& x) { return sum_all(neg(x)); }, a) < 1e-10);
}

TEST_CASE("add_rowvec broadcasts over rows") {
    Tensor x = t2(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_data({3}, {10, 20, 30});
    Tensor y = add_rowvec(x, b);
    CHECK(y.at2(0, 0) == 11);
    CHECK(y.at2(1, 2) == 36);
    CHECK_THROWS_AS(add_rowvec(x, Tensor::from_data({2}, {1, 2})), DimensionError);
    Rng rng(5);
    Tensor xr = rand_uniform({4, 3}, -1, 1, rng);
    Tensor br = rand_uniform({3}, -1, 1, rng);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(add_rowvec(xr, v), xr)); }, br) < 1e-6);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(add_rowvec(v, br), v)); }, xr) < 1e-6);
}

TEST_CASE("reshape views the same values and routes grads") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor y = reshape(x, {3, 2});
    CHECK(y.at2(2, 1) == 6);
    CHECK(y.data == x.data);
    sum_all(mul(y, y)).backward();
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK((*x.grad)[i] == doctest::Approx(2.0 * x.at(i)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(reshape(x, {4, 2}), DimensionError);
}

TEST_CASE("permute matches index-remap oracle") {
    Rng rng(13);
    Tensor x = rand_uniform({2, 3, 4}, -1, 1, rng);
    Tensor p = permute(x, {2, 0, 1});
    CHECK((p.shape == Shape{4, 2, 3}));
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 4; ++k) CHECK(p.at3(k, i, j) == x.at3(i, j, k));
        }
    }
    CHECK_THROWS_AS(permute(x, {0, 1}), DimensionError);
    CHECK_THROWS_AS(permute(x, {0, 1, 1}), DimensionError);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(permute(v, {2, 0, 1}),
                                                            permute(v, {2, 0, 1}))); },
                  x) < 1e-6);

    Tensor tr = transpose_last2(x);
    CHECK((tr.shape == Shape{2, 4, 3}));
    CHECK(tr.at3(1, 3, 2) == x.at3(1, 2, 3));
}

TEST_CASE("concat/slice round-trip and gradients") {
    Rng rng(17);
    Tensor a = rand_uniform({2, 3}, -1, 1, rng);
    Tensor b = rand_uniform({2, 2}, -1, 1, rng);
    Tensor c = concat_lastdim(a, b);
    CHECK((c.shape == Shape{2, 5}));
    CHECK(c.at2(1, 4) == b.at2(1, 1));
    Tensor back_a = slice_lastdim(c, 0, 3);
    Tensor back_b = slice_lastdim(c, 3, 2);
    for (std::size_t i = 0; i < 6; ++i) CHECK(back_a.at(i) == a.at(i));
    for (std::size_t i = 0; i < 4; ++i) CHECK(back_b.at(i) == b.at(i));
    CHECK_THROWS_AS(slice_lastdim(c, 4, 2), DimensionError);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(concat_lastdim(v, b),
                                                            concat_lastdim(v, b))); },
                  a) < 1e-6);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(slice_lastdim(v, 1, 3),
                                                            slice_lastdim(v, 0, 3))); },
                  c) < 1e-6);

    Tensor s0 = slice_axis0(c, 1, 1);
    CHECK((s0.shape == Shape{1, 5}));
    CHECK(s0.at(2) == c.at2(1, 2));
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(slice_axis0(v, 0, 1),
                                                            slice_axis0(v, 1, 1))); },
                  c) < 1e-6);
}

TEST_CASE("row_gather accumulates grads for repeated rows") {
    Tensor x = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    Tensor g = row_gather(x, {0, 0, 2});
    CHECK((g.shape == Shape{3, 2}));
    CHECK(g.at2(1, 1) == 2);
    CHECK(g.at2(2, 0) == 5);
    sum_all(g).backward();
    CHECK((*x.grad)[0] == 2.0);  // row 0 taken twice
    CHECK((*x.grad)[2] == 0.0);  // row 1 untouched
    CHECK((*x.grad)[4] == 1.0);
    CHECK_THROWS_AS(row_gather(x, {3}), DimensionError);
}

TEST_CASE("stack_axis0 forward and grad") {
    Rng rng(19);
    Tensor a = rand_uniform({2, 2}, -1, 1, rng);
    Tensor b = rand_uniform({2, 2}, -1, 1, rng);
    Tensor s = stack_axis0({a, b});
    CHECK((s.shape == Shape{2, 2, 2}));
    CHECK(s.at3(1, 0, 1) == b.at2(0, 1));
    CHECK_THROWS_AS(stack_axis0({a, Tensor::zeros({3, 2})}), DimensionError);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(stack_axis0({v, b}),
                                                            stack_axis0({b, v}))); },
                  a) < 1e-6);
}

// ---------------------------------------------------------------------------
// Activations and reductions
// ---------------------------------------------------------------------------

TEST_CASE("activation forward values and gradients") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(diarkit::tanh(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(diarkit::exp(Tensor::scalar(1.0)).item() == doctest::Approx(std::exp(1.0)));
    CHECK(diarkit::log(Tensor::scalar(std::exp(2.0))).item() == doctest::Approx(2.0));
    CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
    // gelu is ~identity for large positive x, ~0 for large negative x
    CHECK(gelu(Tensor::scalar(6.0)).item() == doctest::Approx(6.0).epsilon(1e-8));
    CHECK(std::abs(gelu(Tensor::scalar(-6.0)).item()) < 1e-8);

    Rng rng(29);
    Tensor x = rand_uniform({3, 3}, -1, 1, rng);
    for (auto f : {&sigmoid, &diarkit::tanh, &diarkit::exp, &gelu}) {
        CHECK(checked([&](const Tensor& v) { return sum_all(mul(f(v), f(v))); }, x) < 1e-6);
    }
    Tensor pos = rand_uniform({3, 3}, 0.5, 2.0, rng);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(diarkit::log(v), v)); }, pos) < 1e-6);
}

TEST_CASE("loss = sigmoid(0) has gradient 1/4") {
    Tensor x = Tensor::from_data({1}, {0.0}, true);
    sigmoid(x).backward();
    CHECK((*x.grad)[0] == 0.25);
}

TEST_CASE("sum_all and mean_all") {
    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    CHECK(sum_all(x).item() == 10.0);
    CHECK(mean_all(x).item() == 2.5);
    mean_all(x).backward();
    for (std::size_t i = 0; i < 4; ++i) CHECK((*x.grad)[i] == 0.25);
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

TEST_CASE("softmax symmetry and analytic cases") {
    Tensor u = softmax(Tensor::from_data({3}, {0, 0, 0}), 0);
    for (int i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    Tensor v = softmax(Tensor::from_data({2}, {0.0, std::log(2.0)}), 0);
    CHECK(v.at(0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(v.at(1) == doctest::Approx(2.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and normalization") {
    Rng rng(31);
    Tensor x = rand_uniform({4, 5}, -3, 3, rng);
    Tensor y = softmax(x, 1);
    for (int r = 0; r < 4; ++r) {
        double row = 0.0;
        for (int c = 0; c < 5; ++c) {
            CHECK(y.at2(r, c) >= 0.0);
            row += y.at2(r, c);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor shifted = softmax(add_scalar(x, 17.5), 1);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(std::abs(shifted.at(i) - y.at(i)) < 1e-12);
    }
}

TEST_CASE("softmax over a middle axis matches the slice oracle") {
    Rng rng(37);
    Tensor x = rand_uniform({2, 3, 2}, -2, 2, rng);
    Tensor y = softmax(x, 1);
    for (int i = 0; i < 2; ++i) {
        for (int k = 0; k < 2; ++k) {
            double mx = -1e300;
            for (int j = 0; j < 3; ++j) mx = std::max(mx, x.at3(i, j, k));
            double denom = 0.0;
            for (int j = 0; j < 3; ++j) denom += std::exp(x.at3(i, j, k) - mx);
            for (int j = 0; j < 3; ++j) {
                CHECK(y.at3(i, j, k) ==
                      doctest::Approx(std::exp(x.at3(i, j, k) - mx) / denom).epsilon(1e-12));
            }
        }
    }
    CHECK_THROWS_AS(softmax(x, 3), DimensionError);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(softmax(v, 1), v)); }, x) < 1e-6);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(softmax(v, -1), v)); }, x) < 1e-6);
}

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

TEST_CASE("layer_norm zero-variance and standardized rows") {
    Tensor gain = Tensor::from_data({4}, {1, 1, 1, 1});
    Tensor bias = Tensor::from_data({4}, {0, 0, 0, 0});
    Tensor cst = Tensor::full({1, 4}, 3.7);
    Tensor yc = layer_norm(cst, gain, bias, 1e-5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(yc.at(i)) < 1e-6);

    // row with zero mean and unit (population) variance passes through
    Tensor std_row = Tensor::from_data({1, 4}, {-1.0, 1.0, -1.0, 1.0});
    Tensor ys = layer_norm(std_row, gain, bias, 1e-5);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(ys.at(i) - std_row.at(i)) < 1e-5);
    }
    CHECK_THROWS_AS(layer_norm(cst, Tensor::zeros({3}), bias, 1e-5), DimensionError);
    CHECK_THROWS_AS(layer_norm(cst, gain, bias, 0.0), ContractError);
}

TEST_CASE("layer_norm gradients vs finite differences") {
    Rng rng(41);
    Tensor x = rand_uniform({3, 5}, -1, 1, rng);
    Tensor gain = rand_uniform({5}, 0.5, 1.5, rng);
    Tensor bias = rand_uniform({5}, -0.2, 0.2, rng);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(layer_norm(v, gain, bias), v)); }, x) <
          1e-4);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(layer_norm(x, v, bias), x)); }, gain) <
          1e-4);
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(layer_norm(x, gain, v), x)); }, bias) <
          1e-4);
}

// ---------------------------------------------------------------------------
// Backward pass semantics
// ---------------------------------------------------------------------------

TEST_CASE("backward on x*y gives the partner values") {
    Tensor x = Tensor::from_data({1}, {3.0}, true);
    Tensor y = Tensor::from_data({1}, {5.0}, true);
    mul(x, y).backward();
    CHECK((*x.grad)[0] == 5.0);
    CHECK((*y.grad)[0] == 3.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(mul_scalar(x, 2.0).backward(), ContractError);
}

TEST_CASE("leaves that do not influence the loss get exactly-zero grads") {
    Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0}, true);
    Tensor y = Tensor::from_data({1, 2}, {3.0, 4.0}, true);
    Tensor joined = concat_lastdim(x, y);
    sum_all(slice_lastdim(joined, 0, 2)).backward();
    CHECK((*x.grad)[0] == 1.0);
    CHECK((*y.grad)[0] == 0.0);
    CHECK((*y.grad)[1] == 0.0);
}

TEST_CASE("repeated backward accumulates; zero_grad resets") {
    Tensor x = Tensor::from_data({1}, {2.0}, true);
    Tensor loss = mul(x, x);
    loss.backward();
    CHECK((*x.grad)[0] == doctest::Approx(4.0));
    loss.backward();
    CHECK((*x.grad)[0] == doctest::Approx(8.0));
    x.zero_grad();
    CHECK((*x.grad)[0] == 0.0);
}

TEST_CASE("diamond graphs sum both paths") {
    Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    sum_all(add(x, x)).backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK((*x.grad)[i] == 2.0);
    Tensor z = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    sum_all(mul(z, z)).backward();
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK((*z.grad)[i] == doctest::Approx(2.0 * z.at(i)).epsilon(1e-12));
    }
}

TEST_CASE("random 3-layer composite passes grad_check") {
    Rng rng(43);
    Tensor w1 = rand_uniform({4, 6}, -0.7, 0.7, rng);
    Tensor w2 = rand_uniform({6, 3}, -0.7, 0.7, rng);
    Tensor x = rand_uniform({2, 4}, -1, 1, rng);
    auto net = [&](const Tensor& w) {
        Tensor h = diarkit::tanh(matmul(x, w));
        Tensor o = sigmoid(matmul(h, w2));
        return mean_all(mul(o, o));
    };
    CHECK(checked(net, w1) < 1e-4);
    auto net_x = [&](const Tensor& v) {
        return mean_all(sigmoid(matmul(diarkit::tanh(matmul(v, w1)), w2)));
    };
    CHECK(checked(net_x, x) < 1e-4);
}

TEST_CASE("no-grad guard suppresses graph construction") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    {
        NoGradGuard guard;
        Tensor y = mul(x, x);
        CHECK(y.node == nullptr);
        CHECK_FALSE(y.requires_grad);
    }
    Tensor z = mul(x, x);
    CHECK(z.node != nullptr);
}

// ---------------------------------------------------------------------------
// grad_check self-tests
// ---------------------------------------------------------------------------

TEST_CASE("grad_check on linear and quadratic maps") {
    Tensor x = Tensor::from_data({3}, {0.3, -0.8, 0.1});
    CHECK(grad_check([](const Tensor& v) { return sum_all(v); }, x) < 1e-10);

    Tensor q = Tensor::from_data({2}, {1.0, 2.0});
    Tensor probe = Tensor::from_data({2}, {1.0, 2.0}, true);
    sum_all(mul(probe, probe)).backward();
    CHECK((*probe.grad)[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK((*probe.grad)[1] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(grad_check([](const Tensor& v) { return sum_all(mul(v, v)); }, q) < 1e-8);
}

// ---------------------------------------------------------------------------
// LSTM step
// ---------------------------------------------------------------------------

TEST_CASE("lstm_step with zero weights halves the carry") {
    const double c0 = 0.8;
    Tensor xg = Tensor::zeros({1, 1, 4});
    Tensor h = Tensor::zeros({1, 1});
    Tensor c = Tensor::from_data({1, 1}, {c0});
    Tensor w_hh = Tensor::zeros({1, 4});
    Tensor out = lstm_step(xg, 0, h, c, w_hh);
    CHECK((out.shape == Shape{1, 2}));
    CHECK(out.at(1) == doctest::Approx(0.5 * c0).epsilon(1e-12));
    CHECK(out.at(0) == doctest::Approx(0.5 * std::tanh(0.5 * c0)).epsilon(1e-12));

    Tensor z = lstm_step(Tensor::zeros({1, 2, 8}), 0, Tensor::zeros({2, 2}), Tensor::zeros({2, 2}),
                         Tensor::zeros({2, 8}));
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == 0.0);
}

TEST_CASE("lstm_step gradients vs finite differences") {
    Rng rng(47);
    const int T = 3, B = 2, H = 3;
    Tensor xg = rand_uniform({T, B, 4 * H}, -0.8, 0.8, rng);
    Tensor h = rand_uniform({B, H}, -0.5, 0.5, rng);
    Tensor c = rand_uniform({B, H}, -0.5, 0.5, rng);
    Tensor w = rand_uniform({H, 4 * H}, -0.5, 0.5, rng);
    auto through = [&](const Tensor& o) { return sum_all(mul(o, o)); };
    CHECK(checked([&](const Tensor& v) { return through(lstm_step(v, 1, h, c, w)); }, xg) < 1e-4);
    CHECK(checked([&](const Tensor& v) { return through(lstm_step(xg, 1, v, c, w)); }, h) < 1e-4);
    CHECK(checked([&](const Tensor& v) { return through(lstm_step(xg, 1, h, v, w)); }, c) < 1e-4);
    CHECK(checked([&](const Tensor& v) { return through(lstm_step(xg, 1, h, c, v)); }, w) < 1e-4);
    CHECK_THROWS_AS(lstm_step(xg, 3, h, c, w), DimensionError);
    CHECK_THROWS_AS(lstm_step(xg, 0, Tensor::zeros({B, H + 1}), c, w), DimensionError);
}

// ---------------------------------------------------------------------------
// Strided conv
// ---------------------------------------------------------------------------

TEST_CASE("conv1d_stride matches a loop oracle with edge replication") {
    Rng rng(53);
    const int L = 7, Cin = 2, Cout = 3, K = 3, stride = 2;
    Tensor x = rand_uniform({L, Cin}, -1, 1, rng);
    Tensor w = rand_uniform({K, Cin, Cout}, -1, 1, rng);
    Tensor b = rand_uniform({Cout}, -1, 1, rng);
    Tensor y = conv1d_stride(x, w, b, stride);
    REQUIRE((y.shape == Shape{L / stride, Cout}));
    for (int t = 0; t < L / stride; ++t) {
        for (int co = 0; co < Cout; ++co) {
            double acc = b.at(co);
            for (int j = 0; j < K; ++j) {
                int src = t * stride + j - (K - 1) / 2;
                if (src < 0) src = 0;
                if (src > L - 1) src = L - 1;
                for (int ci = 0; ci < Cin; ++ci) {
                    acc += x.at2(src, ci) * w.at3(j, ci, co);
                }
            }
            CHECK(y.at2(t, co) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
    CHECK(checked([&](const Tensor& v) { return sum_all(mul(conv1d_stride(v, w, b, stride),
                                                            conv1d_stride(v, w, b, stride))); },
                  x) < 1e-4);
    CHECK(checked([&](const Tensor& v) { return sum_all(conv1d_stride(x, v, b, stride)); }, w) <
          1e-4);
    CHECK(checked([&](const Tensor& v) { return sum_all(conv1d_stride(x, w, v, stride)); }, b) <
          1e-4);
    CHECK_THROWS_AS(conv1d_stride(Tensor::zeros({1, Cin}), w, b, 2), ContractError);
}

TEST_CASE("conv1d_stride K=1 stride=1 with identity kernel is a pass-through") {
    Tensor x = t2(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor w = Tensor::from_data({1, 2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::zeros({2});
    Tensor y = conv1d_stride(x, w, b, 1);
    for (std::size_t i = 0; i < 8; ++i) CHECK(y.at(i) == x.at(i));
}

// ---------------------------------------------------------------------------
// BCE-sum loss
// ---------------------------------------------------------------------------

TEST_CASE("bce_sum_loss analytic values") {
    Tensor mask = Tensor::from_data({2}, {1, 1});
    Tensor half = Tensor::full({2, 2}, 0.5);
    Tensor tgt = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    CHECK(bce_sum_loss(half, tgt, mask).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    const double eps = 1e-6;
    Tensor pred = Tensor::from_data({2, 1}, {eps, 1.0 - eps});
    Tensor t01 = Tensor::from_data({2, 1}, {0, 1});
    CHECK(bce_sum_loss(pred, t01, mask).item() ==
          doctest::Approx(-std::log(1.0 - eps)).epsilon(1e-9));
    // approaches zero as eps -> 0
    Tensor pred9 = Tensor::from_data({2, 1}, {1e-9, 1.0 - 1e-9});
    CHECK(bce_sum_loss(pred9, t01, mask).item() < 1e-8);

    CHECK_THROWS_AS(bce_sum_loss(half, Tensor::full({2, 2}, 0.3), mask), ContractError);
    CHECK_THROWS_AS(bce_sum_loss(half, tgt, Tensor::from_data({2}, {1, 0.5})), ContractError);
    CHECK_THROWS_AS(bce_sum_loss(half, tgt, Tensor::zeros({2})), ContractError);
    CHECK_THROWS_AS(bce_sum_loss(half, Tensor::zeros({2, 3}), mask), DimensionError);
}

TEST_CASE("bce_sum_loss masking matches the dense loss on kept rows") {
    Rng rng(59);
    const int T = 5, S = 3;
    Tensor pred = rand_uniform({T, S}, 0.05, 0.95, rng);
    std::vector<double> tv(T * S);
    for (auto& v : tv) v = rng.randint(2);
    Tensor tgt = Tensor::from_data({T, S}, tv);
    Tensor mask = Tensor::from_data({T}, {1, 0, 1, 1, 0});

    double expect = 0.0;
    int kept = 0;
    for (int t = 0; t < T; ++t) {
        if (mask.at(t) == 0.0) continue;
        ++kept;
        for (int s = 0; s < S; ++s) {
            const double p = pred.at2(t, s), y = tgt.at2(t, s);
            expect -= y * std::log(p) + (1 - y) * std::log(1 - p);
        }
    }
    expect /= kept * S;
    CHECK(bce_sum_loss(pred, tgt, mask).item() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(checked([&](const Tensor& v) { return bce_sum_loss(sigmoid(v), tgt, mask); },
                  rand_uniform({T, S}, -2, 2, rng)) < 1e-4);
}

// ---------------------------------------------------------------------------
// Parameter utilities, schedule, Adam
// ---------------------------------------------------------------------------

TEST_CASE("param utilities and gradient clipping") {
    ParamList params;
    params.push_back({"a", Tensor::from_data({2}, {1.0, 1.0}, true)});
    params.push_back({"b", Tensor::from_data({1}, {1.0}, true)});
    CHECK(param_count(params) == 3);
    (*params[0].tensor.grad)[0] = 3.0;
    (*params[0].tensor.grad)[1] = 0.0;
    (*params[1].tensor.grad)[0] = 4.0;
    CHECK(global_grad_norm(params) == doctest::Approx(5.0).epsilon(1e-12));
    double pre = clip_grad_norm(params, 1.0);
    CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(global_grad_norm(params) == doctest::Approx(1.0).epsilon(1e-9));
    // already under the cap: untouched
    double pre2 = clip_grad_norm(params, 10.0);
    CHECK(pre2 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((*params[0].tensor.grad)[0] == doctest::Approx(0.6).epsilon(1e-9));
    zero_grads(params);
    CHECK(global_grad_norm(params) == 0.0);
}

TEST_CASE("lr schedule is piecewise linear, peak at warm-up boundary, zero at end") {
    LrSchedule sched{2e-4, 20000, 200000};
    CHECK(sched.at(20000) == 2e-4);  // exact
    CHECK(sched.at(10000) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(sched.at(1) == doctest::Approx(2e-4 / 20000).epsilon(1e-12));
    CHECK(sched.at(200000) == 0.0);
    CHECK(sched.at(110000) == doctest::Approx(1e-4).epsilon(1e-12));
    // continuity across the boundary
    CHECK(std::abs(sched.at(20001) - sched.at(20000)) < 2e-4 / 20000 * 1.5);
    // linearity on both sides
    const double d1 = sched.at(5001) - sched.at(5000);
    const double d2 = sched.at(15001) - sched.at(15000);
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-9));
    const double e1 = sched.at(50001) - sched.at(50000);
    const double e2 = sched.at(150001) - sched.at(150000);
    CHECK(e1 == doctest::Approx(e2).epsilon(1e-9));
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
    ParamList params;
    params.push_back({"w", Tensor::from_data({3}, {0.1, -0.2, 0.3}, true)});
    AdamOptimizer opt;
    opt.schedule = {1e-2, 1, 10};
    opt.step(params);
    CHECK(params[0].tensor.at(0) == 0.1);
    CHECK(params[0].tensor.at(1) == -0.2);
    CHECK(params[0].tensor.at(2) == 0.3);
}

TEST_CASE("adam first step moves by about -lr * sign(g)") {
    ParamList params;
    params.push_back({"w", Tensor::from_data({2}, {0.0, 0.0}, true)});
    (*params[0].tensor.grad)[0] = 0.5;
    (*params[0].tensor.grad)[1] = -2.0;
    AdamOptimizer opt;
    opt.schedule = {1e-1, 1, 1000000};  // lr at step 1 == peak
    opt.step(params);
    CHECK(params[0].tensor.at(0) == doctest::Approx(-1e-1).epsilon(1e-6));
    CHECK(params[0].tensor.at(1) == doctest::Approx(1e-1).epsilon(1e-6));
}

TEST_CASE("adam is deterministic over 100 steps") {
    auto run = [] {
        ParamList params;
        params.push_back({"w", Tensor::from_data({4}, {0.5, -0.5, 0.25, -0.25}, true)});
        AdamOptimizer opt;
        opt.schedule = {1e-3, 10, 100};
        for (int step = 1; step <= 100; ++step) {
            for (int i = 0; i < 4; ++i) {
                (*params[0].tensor.grad)[i] = std::sin(0.1 * step * (i + 1));
            }
            opt.step(params);
            zero_grads(params);
        }
        return *params[0].tensor.data;
    };
    const auto a = run();
    const auto b = run();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("adam rejects NaN gradients, naming the parameter") {
    ParamList params;
    params.push_back({"isd.blstm.w_hh", Tensor::from_data({1}, {1.0}, true)});
    (*params[0].tensor.grad)[0] = std::nan("");
    AdamOptimizer opt;
    opt.schedule = {1e-3, 1, 10};
    try {
        opt.step(params);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("isd.blstm.w_hh") != std::string::npos);
    }
}

TEST_CASE("adam training drives a convex loss down") {
    ParamList params;
    params.push_back({"w", Tensor::from_data({2}, {2.0, -3.0}, true)});
    AdamOptimizer opt;
    opt.schedule = {5e-2, 10, 4000};
    double first = 0.0, last = 0.0;
    for (int step = 1; step <= 300; ++step) {
        Tensor loss = sum_all(mul(params[0].tensor, params[0].tensor));
        if (step == 1) first = loss.item();
        last = loss.item();
        zero_grads(params);
        loss.backward();
        opt.step(params);
    }
    CHECK(last < first);
    CHECK(last < 1e-1);
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

TEST_CASE("rng determinism and permutation validity") {
    Rng a(123), b(123);
    for (int i = 0; i < 10; ++i) CHECK(a.uniform(-1, 1) == b.uniform(-1, 1));
    for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
    auto p = a.permutation(10);
    std::vector<bool> seen(10, false);
    for (int v : p) {
        CHECK(v >= 0);
        CHECK(v < 10);
        CHECK_FALSE(seen[v]);
        seen[v] = true;
    }
    for (int i = 0; i < 100; ++i) {
        int r = a.randint(5);
        CHECK(r >= 0);
        CHECK(r < 5);
    }
}
