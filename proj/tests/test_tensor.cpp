#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "latt/ops.hpp"
#include "latt/rng.hpp"
#include "latt/tensor.hpp"
#include "latt/tensor_io.hpp"

using namespace latt;

TEST_CASE("tensor invariants") {
    Tensor t({2, 3, 4}, DType::F32);
    CHECK(t.numel() == 24);
    CHECK(t.data<float>().size() == 24);
    CHECK_THROWS(Tensor({}, DType::F32));
    CHECK_THROWS(Tensor({2, 0, 3}, DType::F32));
    CHECK_THROWS(t.data<double>());

    Tensor r = t.reshaped({4, 6});
    CHECK(r.dims() == std::vector<std::size_t>{4, 6});
    CHECK_THROWS(t.reshaped({5, 5}));
}

TEST_CASE("offset order enumerates row-major with dy outer") {
    const auto order = OffsetOrder::make(3);
    CHECK(order.offsets.size() == 9);
    CHECK(order.offsets.front() == std::pair<int, int>(-1, -1));
    CHECK(order.offsets[1] == std::pair<int, int>(-1, 0));
    CHECK(order.offsets.back() == std::pair<int, int>(1, 1));
    CHECK_THROWS(OffsetOrder::make(2));
    CHECK_THROWS(OffsetOrder::make(0));

    const auto big = OffsetOrder::make(7);
    CHECK(big.offsets.size() == 49);
    CHECK(big.offsets.front() == std::pair<int, int>(-3, -3));
    CHECK(big.offsets.back() == std::pair<int, int>(3, 3));
}

TEST_CASE("unfold identity case") {
    Tensor x = Tensor::from_values({1, 1, 1, 1}, {5.0}, DType::F32);
    Tensor u = unfold(x, 1);
    CHECK(u.dims() == std::vector<std::size_t>{1, 1, 1, 1});
    CHECK(u.at<float>({0, 0, 0, 0}) == 5.0f);
}

TEST_CASE("unfold 3x3 ramp columns") {
    std::vector<double> ramp(9);
    for (int i = 0; i < 9; ++i) ramp[static_cast<std::size_t>(i)] = i + 1;
    Tensor x = Tensor::from_values({1, 1, 3, 3}, ramp, DType::F64);
    Tensor u = unfold(x, 3);
    CHECK(u.dims() == std::vector<std::size_t>{1, 1, 9, 9});
    // center pixel: the full neighborhood in offset order
    for (int t = 0; t < 9; ++t) CHECK(u.at<double>({0, 0, static_cast<std::size_t>(t), 4}) == t + 1);
    // corner pixel 0: zero padding outside the image
    const double expected[9] = {0, 0, 0, 0, 1, 2, 0, 4, 5};
    for (int t = 0; t < 9; ++t)
        CHECK(u.at<double>({0, 0, static_cast<std::size_t>(t), 0}) == expected[t]);
}

TEST_CASE("unfold errors") {
    Tensor x3 = Tensor::zeros({1, 2, 3}, DType::F32);
    CHECK_THROWS(unfold(x3, 3));
    Tensor x = Tensor::zeros({1, 1, 3, 3}, DType::F32);
    CHECK_THROWS(unfold(x, 2));
}

TEST_CASE("unfold of ones sums to K*K at interior pixels") {
    Tensor x = Tensor::ones({2, 3, 7, 6}, DType::F32);
    const int K = 3;
    Tensor u = unfold(x, K);
    for (std::size_t h = 1; h < 6; ++h)
        for (std::size_t w = 1; w < 5; ++w) {
            double sum = 0;
            for (std::size_t t = 0; t < 9; ++t) sum += u.at<float>({1, 2, t, h * 6 + w});
            CHECK(sum == doctest::Approx(9.0));
        }
}

TEST_CASE("fold_add is the transpose of unfold") {
    // <unfold(x), y> == <x, fold_add(y)> for random x, y
    Rng rng(11);
    Tensor x({1, 2, 4, 5}, DType::F64);
    rng.fill_normal(x, 0.0, 1.0);
    Tensor y({1, 2, 9, 20}, DType::F64);
    rng.fill_normal(y, 0.0, 1.0);
    Tensor ux = unfold(x, 3);
    Tensor fy = fold_add(y, 3, 4, 5);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < ux.numel(); ++i) lhs += ux.item(i) * y.item(i);
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.item(i) * fy.item(i);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("softmax examples") {
    Tensor u = softmax_over(Tensor::from_values({3}, {0, 0, 0}, DType::F64), 0);
    for (int i = 0; i < 3; ++i) CHECK(u.item(static_cast<std::size_t>(i)) == doctest::Approx(1.0 / 3));

    Tensor big = softmax_over(Tensor::from_values({2}, {1000, 1000}, DType::F32), 0);
    CHECK(big.item(0) == doctest::Approx(0.5));
    CHECK(std::isfinite(big.item(0)));

    Tensor logs = softmax_over(
        Tensor::from_values({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}, DType::F64), 0);
    CHECK(logs.item(0) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(logs.item(1) == doctest::Approx(2.0 / 6).epsilon(1e-12));
    CHECK(logs.item(2) == doctest::Approx(3.0 / 6).epsilon(1e-12));
}

TEST_CASE("softmax rejects NaN and bad axes") {
    Tensor bad = Tensor::from_values({2}, {1.0, std::nan("")}, DType::F64);
    CHECK_THROWS(softmax_over(bad, 0));
    Tensor ok = Tensor::zeros({2, 2}, DType::F32);
    CHECK_THROWS(softmax_over(ok, 2));
    CHECK_THROWS(softmax_over(ok, -1));
}

TEST_CASE("softmax is invariant to adding a constant along the axis") {
    Rng rng(3);
    Tensor x({2, 5, 4}, DType::F32);
    rng.fill_normal(x, 0.0, 2.0);
    Tensor shifted = x;
    {
        auto s = shifted.data<float>();
        // add a per-slice constant along axis 1
        for (std::size_t o = 0; o < 2; ++o)
            for (std::size_t j = 0; j < 5; ++j)
                for (std::size_t in = 0; in < 4; ++in) s[(o * 5 + j) * 4 + in] += 7.5f;
    }
    CHECK(max_abs_diff(softmax_over(x, 1), softmax_over(shifted, 1)) <= 1e-6);
}

TEST_CASE("filter_normalize examples") {
    bool degenerate = false;
    Tensor a = filter_normalize(Tensor::from_values({2}, {1, -1}, DType::F64), 0, 0.0, &degenerate);
    CHECK_FALSE(degenerate);
    CHECK(a.item(0) == doctest::Approx(1.0));
    CHECK(a.item(1) == doctest::Approx(-1.0));

    // constant filter: zero-variance branch maps to zeros
    Tensor b = filter_normalize(Tensor::from_values({3}, {3, 3, 3}, DType::F64), 0, 1e-5);
    for (int i = 0; i < 3; ++i) CHECK(b.item(static_cast<std::size_t>(i)) == 0.0);

    Tensor c = filter_normalize(Tensor::from_values({2}, {0, 2}, DType::F64), 0, 0.0);
    CHECK(c.item(0) == doctest::Approx(-1.0));
    CHECK(c.item(1) == doctest::Approx(1.0));
}

TEST_CASE("filter_normalize length-1 axis is flagged and zeroed") {
    bool degenerate = false;
    Tensor t = filter_normalize(Tensor::from_values({2, 1}, {4, 9}, DType::F32), 1, 1e-5, &degenerate);
    CHECK(degenerate);
    CHECK(t.item(0) == 0.0);
    CHECK(t.item(1) == 0.0);
}

TEST_CASE("filter_normalize statistics and idempotence") {
    Rng rng(17);
    Tensor x({2, 3, 9, 10}, DType::F64);
    rng.fill_uniform(x, -2.0, 5.0);
    Tensor y = filter_normalize(x, 2, 0.0);
    // per-slice mean 0, population std 1
    for (std::size_t o = 0; o < 6; ++o)
        for (std::size_t in = 0; in < 10; ++in) {
            double mean = 0, var = 0;
            for (std::size_t t = 0; t < 9; ++t) mean += y.item((o * 9 + t) * 10 + in);
            mean /= 9;
            for (std::size_t t = 0; t < 9; ++t) {
                const double d = y.item((o * 9 + t) * 10 + in) - mean;
                var += d * d;
            }
            var /= 9;
            CHECK(std::abs(mean) <= 1e-6);
            CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-4);
        }
    Tensor z = filter_normalize(y, 2, 0.0);
    CHECK(max_abs_diff(y, z) <= 1e-5);
}

TEST_CASE("contract_channel examples") {
    Tensor x7 = Tensor::full({1, 1, 2, 2}, 7.0, DType::F64);
    Tensor ones = Tensor::ones({1, 2, 3}, DType::F64);
    Tensor out = contract_channel(x7, ones);
    CHECK(out.dims() == std::vector<std::size_t>{1, 2, 3, 2, 2});
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.item(i) == doctest::Approx(7.0));

    Tensor x2 = Tensor::from_values({1, 2, 1, 1}, {1, 2}, DType::F64);
    Tensor table = Tensor::zeros({2, 1, 1}, DType::F64);
    table.set_item(0, 3.0);
    table.set_item(1, 4.0);
    Tensor dot = contract_channel(x2, table);
    CHECK(dot.item(0) == doctest::Approx(11.0));

    Tensor zeros = contract_channel(x2, Tensor::zeros({2, 2, 5}, DType::F64));
    for (std::size_t i = 0; i < zeros.numel(); ++i) CHECK(zeros.item(i) == 0.0);

    CHECK_THROWS(contract_channel(x2, Tensor::zeros({3, 1, 1}, DType::F64)));
}

TEST_CASE("contract_channel agrees with a triple-loop reference") {
    Rng rng(23);
    for (int round = 0; round < 4; ++round) {
        const std::size_t B = 1 + rng.uniform_index(2), C = 1 + rng.uniform_index(4);
        const std::size_t G = 1 + rng.uniform_index(3), T = 1 + rng.uniform_index(5);
        const std::size_t H = 1 + rng.uniform_index(5), W = 1 + rng.uniform_index(5);
        Tensor x({B, C, H, W}, DType::F64);
        Tensor table({C, G, T}, DType::F64);
        rng.fill_normal(x, 0.0, 1.0);
        rng.fill_normal(table, 0.0, 1.0);
        Tensor out = contract_channel(x, table);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t g = 0; g < G; ++g)
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t h = 0; h < H; ++h)
                        for (std::size_t w = 0; w < W; ++w) {
                            double acc = 0;
                            for (std::size_t c = 0; c < C; ++c)
                                acc += x.at<double>({b, c, h, w}) * table.at<double>({c, g, t});
                            CHECK(std::abs(out.at<double>({b, g, t, h, w}) - acc) <= 1e-12);
                        }
    }
}

TEST_CASE("golden tensor container round-trips bit-exactly") {
    const auto dir = std::filesystem::temp_directory_path() / "latt_io_test";
    std::filesystem::create_directories(dir);
    Rng rng(5);
    for (DType dt : {DType::F32, DType::F64}) {
        Tensor t({3, 1, 4}, dt);
        rng.fill_normal(t, 0.0, 10.0);
        const auto path = dir / (std::string("t_") + dtype_name(dt) + ".latt");
        save_tensor(t, path);
        Tensor back = load_tensor(path);
        CHECK(bitwise_equal(t, back));
    }
    // header layout: magic + version/dtype/ndim/pad, then 8-byte dims
    {
        Tensor t = Tensor::ones({2, 2}, DType::F32);
        const auto path = dir / "header.latt";
        save_tensor(t, path);
        CHECK(std::filesystem::file_size(path) == 8 + 16 + 16);
    }
    CHECK_THROWS(load_tensor(dir / "missing.latt"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "latt_manifest_test";
    Rng rng(6);
    Tensor a({2, 2}, DType::F32), b({5}, DType::F64);
    rng.fill_normal(a, 0.0, 1.0);
    rng.fill_normal(b, 0.0, 1.0);
    save_manifest({{"alpha", a}, {"beta", b}}, dir);
    auto entries = load_manifest(dir);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].first == "alpha");
    CHECK(bitwise_equal(entries[0].second, a));
    CHECK(entries[1].first == "beta");
    CHECK(bitwise_equal(entries[1].second, b));
    std::filesystem::remove_all(dir);
}

TEST_CASE("named rng streams are independent and deterministic") {
    Rng a(42), b(42);
    CHECK(a.stream("x").next_u64() == b.stream("x").next_u64());
    CHECK(a.stream("x").next_u64() != a.stream("y").next_u64());
    // adding consumers does not perturb an existing stream
    Rng root(7);
    Rng s1 = root.stream("first");
    const auto v = s1.next_u64();
    Rng root2(7);
    (void)root2.stream("second");
    Rng s1_again = root2.stream("first");
    CHECK(s1_again.next_u64() == v);
}
