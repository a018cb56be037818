// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "lmlab/tensor/tensor.hpp"

using namespace lmlab;
using lmlab::test::grad_check;
using Td = Tensor<double>;

namespace {

Td randu(Shape shape, RngStream& rng, double lo, double hi) {
    auto t = Td::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.value_mut()[i] = lo + (hi - lo) * rng.next_double();
    return t;
}

}  // namespace

TEST_CASE("elementwise add and broadcast") {
    auto a = Td::from_data({2}, {1, 2});
    auto b = Td::from_data({2}, {3, 4});
    auto c = add(a, b);
    CHECK(c.value()[0] == 4);
    CHECK(c.value()[1] == 6);

    auto x = Td::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto row = Td::from_data({3}, {10, 20, 30});
    auto y = add(x, row);
    CHECK(y.value()[0] == 11);
    CHECK(y.value()[5] == 36);

    auto s = Td::scalar(5.0);
    CHECK(add(x, s).value()[3] == 9);

    // trailing-singleton broadcast is rejected
    auto col = Td::from_data({2, 1}, {1, 2});
    CHECK_THROWS_AS((void)add(x, col), ShapeError);
    // mismatching shapes name both operands
    auto bad = Td::zeros({4});
    CHECK_THROWS_WITH_AS((void)add(a, bad), doctest::Contains("(2)"), ShapeError);
}

TEST_CASE("matmul identity and shape errors") {
    RngStream rng(7);
    auto eye = Td::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.value_mut()[i * 3 + i] = 1.0;
    auto m = Td::randn({3, 3}, rng);
    auto out = matmul(eye, m);
    for (int64_t i = 0; i < 9; ++i) CHECK(out.value()[i] == doctest::Approx(m.value()[i]));

    auto bad = Td::zeros({4, 2});
    CHECK_THROWS_AS((void)matmul(m, bad), ShapeError);
}

TEST_CASE("backward: sum of squares") {
    auto x = Td::from_data({3}, {1, 2, 3}, /*requires_grad=*/true);
    auto loss = sum(mul(x, x));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2));
    CHECK(x.grad()[1] == doctest::Approx(4));
    CHECK(x.grad()[2] == doctest::Approx(6));
}

TEST_CASE("backward: constant loss leaves zero grads") {
    auto x = Td::from_data({3}, {1, 2, 3}, true);
    auto loss = Td::scalar(2.0);
    backward(loss);
    CHECK(!x.has_grad());
}

TEST_CASE("backward: non-scalar loss rejected") {
    auto x = Td::from_data({3}, {1, 2, 3}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
}

TEST_CASE("gradients accumulate across reuse of a node") {
    auto x = Td::from_data({2}, {1.5, -2.0}, true);
    auto y = add(x, x);            // uses x twice
    auto loss = sum(mul(y, x));    // and a third time
    backward(loss);
    // d/dx sum(2x * x) = 4x
    CHECK(x.grad()[0] == doctest::Approx(6.0));
    CHECK(x.grad()[1] == doctest::Approx(-8.0));
}

TEST_CASE("softmax gradient matches finite differences (spec oracle)") {
    RngStream rng(42);
    auto v = randu({8}, rng, -1, 1);
    auto x0 = randu({8}, rng, -3, 3);
    auto res = grad_check<double>(
        [&](std::vector<Td>& leaves) { return sum(mul(softmax(leaves[0]), v.detach())); },
        {x0}, 1e-5);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("finite-difference checks for every primitive") {
    RngStream rng(1234);
    auto check = [&](const char* name, test::LossFn<double> f, std::vector<Td> leaves) {
        auto res = grad_check<double>(f, std::move(leaves), 1e-5);
        INFO(name << ": max rel err " << res.max_rel_err << " over " << res.checked);
        CHECK(res.max_rel_err < 1e-6);
    };

    check("add broadcast",
          [](std::vector<Td>& l) { return sum(add(l[0], l[1])); },
          {randu({4, 3}, rng, -5, 5), randu({3}, rng, -5, 5)});
    check("mul broadcast",
          [](std::vector<Td>& l) { return sum(mul(l[0], l[1])); },
          {randu({4, 3}, rng, -5, 5), randu({3}, rng, -5, 5)});
    check("sub/neg", [](std::vector<Td>& l) { return sum(sub(l[0], l[1])); },
          {randu({5}, rng, -5, 5), randu({5}, rng, -5, 5)});
    check("scale", [](std::vector<Td>& l) { return sum(scale(l[0], 3.7)); },
          {randu({5}, rng, -5, 5)});
    check("matmul",
          [](std::vector<Td>& l) { return sum(matmul(l[0], l[1])); },
          {randu({3, 4}, rng, -2, 2), randu({4, 2}, rng, -2, 2)});
    check("matmul-chain",
          [](std::vector<Td>& l) { return sum(mul(matmul(l[0], l[1]), matmul(l[0], l[1]))); },
          {randu({3, 4}, rng, -2, 2), randu({4, 2}, rng, -2, 2)});
    check("transpose",
          [](std::vector<Td>& l) { return sum(mul(transpose(l[0]), transpose(l[0]))); },
          {randu({3, 4}, rng, -2, 2)});
    check("exp", [](std::vector<Td>& l) { return sum(exp(l[0])); },
          {randu({6}, rng, -3, 3)});
    check("log", [](std::vector<Td>& l) { return sum(log(l[0])); },
          {randu({6}, rng, 0.2, 8)});
    check("pow", [](std::vector<Td>& l) { return sum(pow(l[0], 2.5)); },
          {randu({6}, rng, 0.3, 4)});
    check("pow integer", [](std::vector<Td>& l) { return sum(pow(l[0], 3.0)); },
          {randu({6}, rng, -3, 3)});
    check("sigmoid", [](std::vector<Td>& l) { return sum(sigmoid(l[0])); },
          {randu({6}, rng, -6, 6)});
    check("silu", [](std::vector<Td>& l) { return sum(silu(l[0])); },
          {randu({6}, rng, -6, 6)});
    check("log_sigmoid", [](std::vector<Td>& l) { return sum(log_sigmoid(l[0])); },
          {randu({6}, rng, -6, 6)});
    check("sum axis0", [](std::vector<Td>& l) { return sum(mul(sum(l[0], 0), sum(l[0], 0))); },
          {randu({3, 4}, rng, -2, 2)});
    check("mean axis1", [](std::vector<Td>& l) { return sum(mul(mean(l[0], 1), mean(l[0], 1))); },
          {randu({3, 4}, rng, -2, 2)});
    check("softmax", [](std::vector<Td>& l) { return sum(mul(softmax(l[0]), softmax(l[0]))); },
          {randu({3, 5}, rng, -3, 3)});
    check("reshape", [](std::vector<Td>& l) {
              auto r = reshape(l[0], {2, 6});
              return sum(mul(r, r));
          },
          {randu({3, 4}, rng, -2, 2)});
    check("concat axis1",
          [](std::vector<Td>& l) {
              auto c = concat({l[0], l[1]}, 1);
              return sum(mul(c, c));
          },
          {randu({2, 3}, rng, -2, 2), randu({2, 2}, rng, -2, 2)});
    check("slice axis1",
          [](std::vector<Td>& l) {
              auto s = slice(l[0], 1, 1, 3);
              return sum(mul(s, s));
          },
          {randu({3, 4}, rng, -2, 2)});
    std::vector<int32_t> ids{2, 0, 2, 1};
    check("embedding",
          [ids](std::vector<Td>& l) {
              auto e = embedding(l[0], ids);
              return sum(mul(e, e));
          },
          {randu({3, 4}, rng, -2, 2)});
    auto rms_c = randu({3, 6}, rng, -1, 1);
    check("rms_norm",
          [rms_c](std::vector<Td>& l) {
              auto y = rms_norm(l[0], l[1], 1e-6);
              return add(sum(mul(y, rms_c)), sum(mul(y, y)));
          },
          {randu({3, 6}, rng, -2, 2), randu({6}, rng, 0.5, 2)});
    auto rope_c = randu({4, 6}, rng, -1, 1);
    check("rope",
          [rope_c](std::vector<Td>& l) {
              auto y = rope(l[0], 500.0, 3);
              return add(sum(mul(y, rope_c)), sum(mul(y, y)));
          },
          {randu({4, 6}, rng, -2, 2)});
    std::vector<int32_t> targets{1, 4, 0};
    check("cross_entropy",
          [targets](std::vector<Td>& l) { return cross_entropy(l[0], targets); },
          {randu({3, 5}, rng, -3, 3)});
    std::vector<double> w{1.0, 0.0, 2.0};
    check("cross_entropy weighted",
          [targets, w](std::vector<Td>& l) {
              return cross_entropy(l[0], targets, std::span<const double>(w));
          },
          {randu({3, 5}, rng, -3, 3)});
    auto probs = Td::from_data({2, 4}, {0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25});
    check("cross_entropy_soft",
          [probs](std::vector<Td>& l) { return cross_entropy_soft(l[0], probs); },
          {randu({2, 4}, rng, -3, 3)});
    std::vector<int32_t> seq_t{3, 1, 2};
    std::vector<double> seq_m{0.0, 1.0, 1.0};
    check("sequence_logprob",
          [seq_t, seq_m](std::vector<Td>& l) {
              return sequence_logprob(l[0], seq_t, std::span<const double>(seq_m));
          },
          {randu({3, 4}, rng, -3, 3)});
    check("dropout (fixed stream)",
          [](std::vector<Td>& l) {
              RngStream local(99);
              return sum(dropout(l[0], 0.4, local));
          },
          {randu({4, 4}, rng, -2, 2)});
}

TEST_CASE("linearity: grad of a sum of losses equals sum of grads") {
    RngStream rng(5);
    auto vals = randu({6}, rng, -2, 2);

    auto grad_of = [&](int which) {
        auto x = vals.detach();
        x.set_requires_grad(true);
        auto l1 = sum(mul(x, x));
        auto l2 = sum(exp(scale(x, 0.5)));
        backward(which == 0 ? l1 : which == 1 ? l2 : add(l1, l2));
        return ArrX<double>(x.grad());
    };
    auto g1 = grad_of(0), g2 = grad_of(1), g12 = grad_of(2);
    for (int64_t i = 0; i < 6; ++i)
        CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
}

TEST_CASE("forward+backward re-run is bit-identical") {
    auto run = [] {
        RngStream rng(2024);
        auto x = Td::randn({4, 4}, rng, 1.0, true);
        auto w = Td::randn({4, 4}, rng, 1.0, true);
        auto y = softmax(matmul(silu(x), w));
        std::vector<int32_t> t{0, 1, 2, 3};
        auto loss = cross_entropy(matmul(y, w), t);
        backward(loss);
        std::vector<double> out;
        out.push_back(loss.item());
        for (int64_t i = 0; i < x.numel(); ++i) out.push_back(x.grad()[i]);
        for (int64_t i = 0; i < w.numel(); ++i) out.push_back(w.grad()[i]);
        return out;
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // exact bit equality
}

TEST_CASE("domain violations raise instead of producing NaN") {
    auto x = Td::from_data({2}, {1.0, -1.0});
    CHECK_THROWS_AS((void)log(x), DomainError);
    CHECK_THROWS_AS((void)pow(x, 0.5), DomainError);
    auto z = Td::from_data({2}, {0.0, 1.0});
    CHECK_THROWS_AS((void)pow(z, -1.0), DomainError);
    auto ok = pow(x, 2.0);
    CHECK(ok.value()[1] == 1.0);
}

TEST_CASE("no-grad mode skips graph construction") {
    auto x = Td::from_data({2}, {1, 2}, true);
    NoGradGuard ng;
    auto y = mul(x, x);
    CHECK(!y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("embedding id range checked") {
    auto table = Td::zeros({4, 2});
    std::vector<int32_t> bad{0, 4};
    CHECK_THROWS_AS((void)embedding(table, bad), DomainError);
}
