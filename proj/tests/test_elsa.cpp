#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "latt/elsa.hpp"
#include "latt/ops.hpp"
#include "latt/rng.hpp"
#include "oracles.hpp"

using namespace latt;

namespace {

Tensor random_t(Rng& rng, std::vector<std::size_t> dims, DType dt, double sd = 1.0) {
    Tensor t(std::move(dims), dt);
    rng.fill_normal(t, 0.0, sd);
    return t;
}

}  // namespace

TEST_CASE("zero queries reduce the logits to the bias") {
    Rng rng(1);
    ElsaParams p = ElsaParams::init(4, 2, 3, rng.stream("p"), DType::F64);
    Tensor q = Tensor::zeros({1, 4, 3, 3}, DType::F64);
    Tensor k = random_t(rng, {1, 4, 3, 3}, DType::F64);
    HadamardAttention h = hadamard_attention(q, k, p, ElsaVariant::StrictUnfold);
    // softmax(r_b) broadcast over pixels
    Tensor rb_soft = softmax_over(p.r_b, 1);
    for (std::size_t g = 0; g < 2; ++g)
        for (std::size_t t = 0; t < 9; ++t)
            for (std::size_t pix = 0; pix < 9; ++pix)
                CHECK(std::abs(h.values.item((g * 9 + t) * 9 + pix) - rb_soft.item(g * 9 + t)) <=
                      1e-12);
}

TEST_CASE("the three equivalent variants agree; production differs") {
    Rng rng(2);
    int checked = 0;
    for (int round = 0; round < 8; ++round) {
        const int K = (round % 3) * 2 + 3;  // 3, 5, 7
        const std::size_t C = 4 + 2 * (round % 2), G = (round % 2) ? 2 : 1;
        const std::size_t H = 5 + round % 3, W = 4 + round % 2;
        for (DType dt : {DType::F32, DType::F64}) {
            ElsaParams p = ElsaParams::init(static_cast<int>(C), static_cast<int>(G), K,
                                            rng.stream("p" + std::to_string(round)), dt);
            Tensor q = random_t(rng, {2, C, H, W}, dt);
            Tensor k = random_t(rng, {2, C, H, W}, dt);
            Tensor strict = hadamard_attention(q, k, p, ElsaVariant::StrictUnfold).values;
            Tensor shift = hadamard_attention(q, k, p, ElsaVariant::ShiftConv).values;
            Tensor merged = hadamard_attention(q, k, p, ElsaVariant::MergedConv).values;
            const double tol = dt == DType::F32 ? 1e-5 : 1e-10;
            CHECK(max_abs_diff(strict, shift) <= tol);
            CHECK(max_abs_diff(strict, merged) <= tol);
            CHECK(max_abs_diff(shift, merged) <= tol);
            Tensor production = hadamard_attention(q, k, p, ElsaVariant::Production).values;
            CHECK(max_abs_diff(strict, production) > 1e-4);  // not equivalent by design
            ++checked;
        }
    }
    CHECK(checked >= 16);
}

TEST_CASE("hadamard attention sums to one over the patch axis, all variants") {
    Rng rng(3);
    ElsaParams p = ElsaParams::init(6, 3, 5, rng.stream("p"), DType::F32);
    Tensor q = random_t(rng, {2, 6, 4, 7}, DType::F32);
    Tensor k = random_t(rng, {2, 6, 4, 7}, DType::F32);
    for (ElsaVariant v : all_variants()) {
        HadamardAttention h = hadamard_attention(q, k, p, v);
        CHECK(h.values.dims() == std::vector<std::size_t>{2, 3, 25, 4, 7});
        const std::size_t T = 25, P = 28;
        Tensor flat = h.values.reshaped({2, 3, T, P});
        for (std::size_t s = 0; s < 6; ++s)
            for (std::size_t pix = 0; pix < P; ++pix) {
                double sum = 0;
                for (std::size_t t = 0; t < T; ++t) sum += flat.item((s * T + t) * P + pix);
                CHECK(std::abs(sum - 1.0) <= 1e-5);
            }
    }
}

TEST_CASE("saturated center bias turns aggregation into the identity") {
    Rng rng(4);
    const std::size_t C = 4;
    ElsaParams p = ElsaParams::init(static_cast<int>(C), static_cast<int>(C), 3, rng.stream("p"),
                                    DType::F64);
    p.r_k = Tensor::zeros(p.r_k.dims(), DType::F64);
    p.r_q = Tensor::zeros(p.r_q.dims(), DType::F64);
    p.r_b = Tensor::zeros(p.r_b.dims(), DType::F64);
    for (std::size_t g = 0; g < C; ++g) p.r_b.set_item(g * 9 + 4, 1000.0);
    Tensor q = random_t(rng, {1, C, 4, 4}, DType::F64);
    Tensor k = random_t(rng, {1, C, 4, 4}, DType::F64);
    HadamardAttention h = hadamard_attention(q, k, p, ElsaVariant::StrictUnfold);
    // attention is approximately a delta at the center offset
    Tensor v = random_t(rng, {1, C, 4, 4}, DType::F64);
    Tensor vu = unfold(v, 3);
    Tensor agg = apply_neighbor(h.values.reshaped({1, C, 9, 16}), vu);
    CHECK(max_abs_diff(agg.reshaped({1, C, 4, 4}), v) <= 1e-9);
}

TEST_CASE("ghost head identity expansion and sign flip") {
    Rng rng(5);
    const std::size_t B = 2, G = 2, T = 9, H = 3, W = 3, C = 6;
    HadamardAttention h;
    h.values = random_t(rng, {B, G, T, H, W}, DType::F64);
    GhostHeadParams ghost;
    ghost.mul = Tensor::ones({C, 3, 3}, DType::F64);
    ghost.add = random_t(rng, {C, 3, 3}, DType::F64);

    // O = 1, gamma = 0: plain replication, bitwise
    for (double lambda : {0.5, 1.0, 2.0}) {
        Tensor out = ghost_head(h, ghost, lambda, 0.0);
        CHECK(out.dims() == std::vector<std::size_t>{B, C, T, H, W});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < T * H * W; ++i)
                    CHECK(out.item((b * C + c) * T * H * W + i) ==
                          h.values.item((b * G + c % G) * T * H * W + i));
    }

    // lambda = 0: spow(o, 0) = sgn(o)
    Tensor signs = random_t(rng, {C, 3, 3}, DType::F64);
    GhostHeadParams ghost2{signs, ghost.add};
    Tensor flipped = ghost_head(h, ghost2, 0.0, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < T; ++t) {
                const double s = signs.item(c * 9 + t) < 0 ? -1.0 : 1.0;
                for (std::size_t pix = 0; pix < H * W; ++pix) {
                    const double got = flipped.item(((b * C + c) * T + t) * H * W + pix);
                    const double want = s * h.values.item(((b * G + c % G) * T + t) * H * W + pix);
                    CHECK(got == doctest::Approx(want).epsilon(1e-15));
                }
            }
}

TEST_CASE("ghost head single-element scalar oracle") {
    Rng rng(6);
    for (int round = 0; round < 20; ++round) {
        const double o = rng.normal(), s = rng.normal(), hv = rng.uniform(0.0, 1.0);
        const double lambda = 1.0, gamma = 1.0;
        HadamardAttention h;
        h.values = Tensor::from_values({1, 1, 1, 1, 1}, {hv}, DType::F64);
        GhostHeadParams ghost;
        ghost.mul = Tensor::from_values({1, 1, 1}, {o}, DType::F64);
        ghost.add = Tensor::from_values({1, 1, 1}, {s}, DType::F64);
        Tensor out = ghost_head(h, ghost, lambda, gamma);
        CHECK(std::abs(out.item(0) - (o * hv + s)) <= 1e-12);
    }
}

TEST_CASE("ghost head preserves the per-offset sum when O=1, gamma=0") {
    Rng rng(7);
    ElsaParams p = ElsaParams::init(6, 2, 3, rng.stream("p"), DType::F32);
    Tensor q = random_t(rng, {1, 6, 4, 4}, DType::F32);
    Tensor k = random_t(rng, {1, 6, 4, 4}, DType::F32);
    HadamardAttention h = hadamard_attention(q, k, p, ElsaVariant::MergedConv);
    GhostHeadParams ghost;
    ghost.mul = Tensor::ones({6, 3, 3}, DType::F32);
    ghost.add = Tensor::zeros({6, 3, 3}, DType::F32);
    Tensor out = ghost_head(h, ghost, 2.0, 0.0);
    for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t pix = 0; pix < 16; ++pix) {
            double sum = 0;
            for (std::size_t t = 0; t < 9; ++t) sum += out.item((c * 9 + t) * 16 + pix);
            CHECK(std::abs(sum - 1.0) <= 1e-5);
        }
}

TEST_CASE("ghost head rejects a non-dividing head count") {
    HadamardAttention h;
    h.values = Tensor::zeros({1, 2, 9, 2, 2}, DType::F32);
    GhostHeadParams ghost;
    ghost.mul = Tensor::ones({5, 3, 3}, DType::F32);  // 2 does not divide 5
    ghost.add = Tensor::zeros({5, 3, 3}, DType::F32);
    CHECK_THROWS(ghost_head(h, ghost, 1.0, 1.0));
}

TEST_CASE("elsa forward matches the literal block oracle") {
    Rng rng(8);
    ElsaParams p = ElsaParams::init(4, 2, 3, rng.stream("p"), DType::F64);
    Tensor x = random_t(rng, {1, 4, 4, 4}, DType::F64);
    Tensor want = oracle::elsa_block(x, p);
    for (ElsaVariant v : {ElsaVariant::StrictUnfold, ElsaVariant::ShiftConv, ElsaVariant::MergedConv}) {
        Tensor got = elsa_forward(x, p, v);
        CHECK(max_abs_diff(got, want) <= 1e-10);
    }
}

TEST_CASE("near-delta attention makes the block approximately the identity") {
    const std::size_t C = 3;
    ElsaParams p;
    p.kernel_size = 3;
    p.heads = static_cast<int>(C);
    p.with_bias = false;
    p.lambda = 1.0;
    p.gamma = 0.0;
    // identity projections
    p.proj_q_w = Tensor::zeros({C, C}, DType::F64);
    for (std::size_t c = 0; c < C; ++c) p.proj_q_w.set_item(c * C + c, 1.0);
    p.proj_k_w = p.proj_q_w;
    p.proj_v_w = p.proj_q_w;
    p.proj_out_w = p.proj_q_w;
    p.r_k = Tensor::zeros({C, C, 9}, DType::F64);
    p.r_q = Tensor::zeros({C, C, 9}, DType::F64);
    p.r_b = Tensor::zeros({C, 9}, DType::F64);
    for (std::size_t g = 0; g < C; ++g) p.r_b.set_item(g * 9 + 4, 1000.0);
    p.ghost.mul = Tensor::ones({C, 3, 3}, DType::F64);
    p.ghost.add = Tensor::zeros({C, 3, 3}, DType::F64);

    Rng rng(9);
    Tensor x = random_t(rng, {2, C, 5, 4}, DType::F64);
    Tensor out = elsa_forward(x, p, ElsaVariant::StrictUnfold);
    CHECK(max_abs_diff(out, x) <= 1e-3);
}

TEST_CASE("elsa forward keeps the input shape with odd extents") {
    Rng rng(10);
    ElsaParams p = ElsaParams::init(8, 2, 5, rng.stream("p"), DType::F32);
    Tensor x = random_t(rng, {2, 8, 7, 5}, DType::F32);
    for (ElsaVariant v : all_variants()) {
        Tensor out = elsa_forward(x, p, v);
        CHECK(out.dims() == x.dims());
        for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::isfinite(out.item(i)));
    }
}

TEST_CASE("pre-softmax logit scaling: bilinear in x, trilinear with values") {
    // with linear projections (no bias) and r_b = 0 the logits are exactly
    // bilinear in x, and the pre-softmax logits paired with unfolded values
    // form the third-order term the block is built around
    Rng rng(11);
    ElsaParams p = ElsaParams::init(4, 2, 3, rng.stream("p"), DType::F64, /*with_bias=*/false);
    p.r_b = Tensor::zeros(p.r_b.dims(), DType::F64);
    Tensor x = random_t(rng, {1, 4, 4, 4}, DType::F64);
    const double alpha = 1.7;
    Tensor xs = scale(x, alpha);

    auto logits_of = [&](const Tensor& input) {
        Tape tape;
        ElsaVars vars = elsa_constants(tape, p);
        Var in = tape.constant(input);
        Var q = ag::conv2d(in, ag::reshape(vars.proj_q_w, {4, 4, 1, 1}), Var{}, 1);
        Var k = ag::conv2d(in, ag::reshape(vars.proj_k_w, {4, 4, 1, 1}), Var{}, 1);
        return tape.value(hadamard_logits_graph(tape, q, k, vars, p, ElsaVariant::StrictUnfold));
    };
    auto values_of = [&](const Tensor& input) {
        Tape tape;
        ElsaVars vars = elsa_constants(tape, p);
        Var in = tape.constant(input);
        Var v = ag::conv2d(in, ag::reshape(vars.proj_v_w, {4, 4, 1, 1}), Var{}, 1);
        return tape.value(ag::unfold(v, 3));
    };

    Tensor l1 = logits_of(x), l2 = logits_of(xs);
    CHECK(max_abs_diff(scale(l1, alpha * alpha), l2) <= 1e-9);

    // trilinear aggregate sum_t logits[t] * v_unf[t]
    Tensor v1 = values_of(x), v2 = values_of(xs);
    Tensor t1 = apply_neighbor(l1, v1);
    Tensor t2 = apply_neighbor(l2, v2);
    CHECK(max_abs_diff(scale(t1, alpha * alpha * alpha), t2) <= 1e-8);
}

TEST_CASE("ghost head on global attention maps") {
    Rng rng(12);
    // expansion factor 2, O = 1, gamma = 0: heads duplicated
    Tensor attn = random_t(rng, {1, 3, 4, 4}, DType::F64);
    Tensor mul = Tensor::ones({6, 4}, DType::F64);
    Tensor add = Tensor::zeros({6, 4}, DType::F64);
    Tensor out = ghost_head_global(attn, mul, add, 1.0, 0.0);
    CHECK(out.dims() == std::vector<std::size_t>{1, 6, 4, 4});
    for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t i = 0; i < 16; ++i)
            CHECK(out.item(c * 16 + i) == attn.item((c % 3) * 16 + i));

    // N = 2 scalar arithmetic check
    Tensor a2 = random_t(rng, {1, 1, 2, 2}, DType::F64);
    Tensor m2 = random_t(rng, {2, 2}, DType::F64);
    Tensor s2 = random_t(rng, {2, 2}, DType::F64);
    const double lambda = 2.0, gamma = 0.7;
    Tensor o2 = ghost_head_global(a2, m2, s2, lambda, gamma);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t n1 = 0; n1 < 2; ++n1)
            for (std::size_t n2 = 0; n2 < 2; ++n2) {
                const double wanted = oracle::spow_ref(m2.item(c * 2 + n2), lambda) *
                                          a2.item(n1 * 2 + n2) +
                                      gamma * s2.item(c * 2 + n2);
                CHECK(std::abs(o2.item((c * 2 + n1) * 2 + n2) - wanted) <= 1e-12);
            }

    // expansion factor below one is rejected
    Tensor small_m = Tensor::ones({2, 4}, DType::F64);
    Tensor small_s = Tensor::zeros({2, 4}, DType::F64);
    CHECK_THROWS(ghost_head_global(attn, small_m, small_s, 1.0, 1.0));
}

TEST_CASE("elsa parameter manifest round-trips") {
    Rng rng(13);
    ElsaParams p = ElsaParams::init(4, 2, 3, rng.stream("p"), DType::F32);
    p.lambda = 0.75;
    p.gamma = 1.25;
    const auto dir = std::filesystem::temp_directory_path() / "latt_elsa_params";
    save_elsa_params(p, dir);
    ElsaParams back = load_elsa_params(dir);
    CHECK(back.kernel_size == p.kernel_size);
    CHECK(back.heads == p.heads);
    CHECK(back.lambda == p.lambda);
    CHECK(back.gamma == p.gamma);
    CHECK(back.with_bias == p.with_bias);
    CHECK(bitwise_equal(back.proj_q_w, p.proj_q_w));
    CHECK(bitwise_equal(back.r_k, p.r_k));
    CHECK(bitwise_equal(back.ghost.mul, p.ghost.mul));
    // identical forward behavior
    Tensor x = random_t(rng, {1, 4, 3, 3}, DType::F32);
    CHECK(bitwise_equal(elsa_forward(x, p, ElsaVariant::MergedConv),
                        elsa_forward(x, back, ElsaVariant::MergedConv)));
    std::filesystem::remove_all(dir);
}

TEST_CASE("variant names are stable strings") {
    CHECK(variant_from_name("strict_unfold") == ElsaVariant::StrictUnfold);
    CHECK(variant_from_name("shift_conv") == ElsaVariant::ShiftConv);
    CHECK(variant_from_name("merged_conv") == ElsaVariant::MergedConv);
    CHECK(variant_from_name("production") == ElsaVariant::Production);
    CHECK_THROWS(variant_from_name("fused"));
}
