#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "latt/dataset.hpp"
#include "latt/flops.hpp"
#include "latt/model.hpp"
#include "latt/ops.hpp"
#include "latt/train.hpp"

using namespace latt;

namespace {

double initial_loss(const Model& model, const SyntheticDataset& data) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 16; ++i) idx.push_back(i);
    Tensor logits = model.forward(data.gather(idx, model.dtype()));
    return cross_entropy(logits, data.gather_labels(idx)).item(0);
}

}  // namespace

TEST_CASE("identical builds from one seed give identical initial loss") {
    auto data = SyntheticDataset::make(3, 32);
    const ModelConfig cfg = tiny_config(MixerKind::ELSA);
    Model a = Model::build(cfg, 99);
    Model b = Model::build(cfg, 99);
    CHECK(initial_loss(a, data) == initial_loss(b, data));
    Model c = Model::build(cfg, 100);
    CHECK(initial_loss(a, data) != initial_loss(c, data));
}

TEST_CASE("forward pass is bitwise deterministic") {
    auto data = SyntheticDataset::make(4, 8);
    Model m = Model::build(tiny_config(MixerKind::ELSA), 7);
    std::vector<std::size_t> idx{0, 1, 2, 3};
    Tensor in = data.gather(idx, m.dtype());
    CHECK(bitwise_equal(m.forward(in), m.forward(in)));
}

TEST_CASE("elsa and lsa twins differ only in mixer-owned tensors") {
    ModelConfig elsa_cfg = tiny_config(MixerKind::ELSA);
    ModelConfig lsa_cfg = tiny_config(MixerKind::LSA);
    // a size valid for both modes so the non-mixer structure matches exactly
    for (auto* cfg : {&elsa_cfg, &lsa_cfg})
        for (auto& st : cfg->stages) st.window_or_kernel = 1;
    Model elsa = Model::build(elsa_cfg, 1);
    Model lsa = Model::build(lsa_cfg, 1);
    std::set<std::string> elsa_other, lsa_other;
    for (const auto& n : elsa.param_names())
        if (n.find(".mixer.") == std::string::npos) elsa_other.insert(n);
    for (const auto& n : lsa.param_names())
        if (n.find(".mixer.") == std::string::npos) lsa_other.insert(n);
    CHECK(elsa_other == lsa_other);
    for (const auto& n : elsa_other) CHECK(elsa.param(n).dims() == lsa.param(n).dims());
    // and the mixers themselves do differ
    CHECK(elsa.param_count() != lsa.param_count());
}

TEST_CASE("ten-class output has shape (B,10) and finite values") {
    auto data = SyntheticDataset::make(5, 6);
    for (MixerKind kind : {MixerKind::LSA, MixerKind::DwConv, MixerKind::Unified, MixerKind::ELSA}) {
        Model m = Model::build(tiny_config(kind), 11);
        Tensor logits = m.forward(data.gather({0, 1, 2, 3, 4, 5}, m.dtype()));
        CHECK(logits.dims() == std::vector<std::size_t>{6, 10});
        for (std::size_t i = 0; i < logits.numel(); ++i) CHECK(std::isfinite(logits.item(i)));
    }
}

TEST_CASE("head settings rewrite per-stage heads") {
    ModelConfig cfg = tiny_config(MixerKind::ELSA);
    cfg.head_setting = HeadSetting::One;
    CHECK(cfg.resolved_heads() == std::vector<int>{1, 1});
    cfg.head_setting = HeadSetting::OneX;
    const auto onex = cfg.resolved_heads();
    CHECK(onex == std::vector<int>{2, 4});
    cfg.head_setting = HeadSetting::TwoX;
    const auto twox = cfg.resolved_heads();
    for (std::size_t s = 0; s < onex.size(); ++s) CHECK(twox[s] == 2 * onex[s]);
    cfg.head_setting = HeadSetting::C;
    CHECK(cfg.resolved_heads() == std::vector<int>{16, 32});
    CHECK_NOTHROW(cfg.validate());
    // head-setting C still builds and runs
    Model m = Model::build(cfg, 3);
    auto data = SyntheticDataset::make(6, 2);
    CHECK(m.forward(data.gather({0, 1}, m.dtype())).dims() == std::vector<std::size_t>{2, 10});
}

TEST_CASE("invalid configurations are rejected") {
    ModelConfig cfg = tiny_config(MixerKind::ELSA);
    cfg.stages[0].heads = 3;  // does not divide 16
    CHECK_THROWS(Model::build(cfg, 0));
    cfg = tiny_config(MixerKind::LSA);
    cfg.stages[0].window_or_kernel = 3;  // does not divide resolution 8
    CHECK_THROWS(Model::build(cfg, 0));
    cfg = tiny_config(MixerKind::ELSA);
    cfg.stages[0].window_or_kernel = 4;  // even kernel
    CHECK_THROWS(Model::build(cfg, 0));
}

TEST_CASE("dataset is bitwise reproducible and balanced") {
    auto a = SyntheticDataset::make(7, 40);
    auto b = SyntheticDataset::make(7, 40);
    CHECK(bitwise_equal(a.images(), b.images()));
    CHECK(a.labels() == b.labels());
    auto c = SyntheticDataset::make(8, 40);
    CHECK_FALSE(bitwise_equal(a.images(), c.images()));
    std::vector<int> counts(10, 0);
    for (int l : a.labels()) ++counts[static_cast<std::size_t>(l)];
    for (int cnt : counts) CHECK(cnt == 4);
}

TEST_CASE("zero learning rate keeps the loss constant") {
    auto data = SyntheticDataset::make(2, 64);
    Model m = Model::build(tiny_config(MixerKind::DwConv), 5);
    TrainOptions opts;
    opts.steps = 6;
    opts.batch_size = 16;
    opts.lr = 0.0;
    opts.log_every = 1;
    opts.seed = 1;
    TrainLog log = train(m, data, opts);
    REQUIRE(log.entries.size() >= 2);
    // batches differ, so compare the loss on a fixed batch before/after
    // via the recorded entries of a run whose updates are all zero
    Model m2 = Model::build(tiny_config(MixerKind::DwConv), 5);
    TrainLog log2 = train(m2, data, opts);
    for (std::size_t i = 0; i < log.entries.size(); ++i)
        CHECK(log.entries[i].loss == log2.entries[i].loss);
    // parameters never moved
    for (const auto& name : m.param_names())
        CHECK(bitwise_equal(m.param(name), Model::build(tiny_config(MixerKind::DwConv), 5).param(name)));
}

TEST_CASE("short training runs are bit-reproducible") {
    auto data = SyntheticDataset::make(9, 64);
    TrainOptions opts;
    opts.steps = 4;
    opts.batch_size = 8;
    opts.lr = 1e-3;
    opts.log_every = 1;
    opts.seed = 21;
    Model a = Model::build(tiny_config(MixerKind::ELSA), 13);
    Model b = Model::build(tiny_config(MixerKind::ELSA), 13);
    TrainLog la = train(a, data, opts);
    TrainLog lb = train(b, data, opts);
    REQUIRE(la.entries.size() == lb.entries.size());
    for (std::size_t i = 0; i < la.entries.size(); ++i) {
        CHECK(la.entries[i].loss == lb.entries[i].loss);
        CHECK(la.entries[i].acc == lb.entries[i].acc);
    }
    for (const auto& name : a.param_names()) CHECK(bitwise_equal(a.param(name), b.param(name)));
}

TEST_CASE("sgd with momentum trains and reproduces bitwise") {
    auto data = SyntheticDataset::make(12, 64);
    TrainOptions opts;
    opts.steps = 12;
    opts.batch_size = 16;
    opts.lr = 0.05;
    opts.optimizer = OptimizerKind::Sgd;
    opts.momentum = 0.9;
    opts.log_every = 1;
    opts.seed = 4;
    Model a = Model::build(tiny_config(MixerKind::DwConv), 8);
    Model b = Model::build(tiny_config(MixerKind::DwConv), 8);
    TrainLog la = train(a, data, opts);
    TrainLog lb = train(b, data, opts);
    CHECK_FALSE(la.diverged);
    REQUIRE(la.entries.size() == lb.entries.size());
    for (std::size_t i = 0; i < la.entries.size(); ++i) CHECK(la.entries[i].loss == lb.entries[i].loss);
    // parameters moved and the loss went somewhere
    CHECK_FALSE(bitwise_equal(a.param("head.fc.weight"),
                              Model::build(tiny_config(MixerKind::DwConv), 8).param("head.fc.weight")));
    CHECK(la.entries.back().loss < la.entries.front().loss);
}

TEST_CASE("divergence is reported with the offending step, not thrown") {
    auto data = SyntheticDataset::make(10, 32);
    Model m = Model::build(tiny_config(MixerKind::DwConv), 17);
    m.param("head.fc.weight").set_item(0, std::nan(""));
    TrainOptions opts;
    opts.steps = 3;
    opts.batch_size = 8;
    TrainLog log;
    CHECK_NOTHROW(log = train(m, data, opts));
    CHECK(log.diverged);
    CHECK(log.diverged_step == 0);
    CHECK_FALSE(log.divergence_reason.empty());
}

TEST_CASE("identity-norm unified config is permitted; instability is reported") {
    // the identity normalization is known-unstable; a run either survives or
    // reports divergence, it never throws out of train()
    auto data = SyntheticDataset::make(11, 64);
    ModelConfig cfg = tiny_config(MixerKind::Unified);
    for (auto& st : cfg.stages) {
        st.mixer.unified_preset = Preset::Net7N;
        st.window_or_kernel = 3;
    }
    Model m = Model::build(cfg, 19);
    // force the identity norm through a hand-rolled preset by training with a
    // huge learning rate on the softmax-free involution-style preset
    ModelConfig idcfg = tiny_config(MixerKind::Unified);
    for (auto& st : idcfg.stages) {
        st.mixer.unified_preset = Preset::InvolutionLike;
        st.window_or_kernel = 3;
    }
    Model mid = Model::build(idcfg, 19);
    TrainOptions opts;
    opts.steps = 8;
    opts.batch_size = 8;
    opts.lr = 1e6;  // provoke overflow in the unnormalized path
    TrainLog log;
    CHECK_NOTHROW(log = train(mid, data, opts));
    if (log.diverged) {
        CHECK(log.diverged_step >= 0);
        CHECK_FALSE(log.divergence_reason.empty());
    }
}

TEST_CASE("training log renders as CSV") {
    TrainLog log;
    log.entries = {{0, 2.302585, 0.10}, {25, 1.5, 0.5}};
    std::ostringstream out;
    log.write_csv(out);
    CHECK(out.str() == "step,loss,acc\n0,2.30258500,0.100000\n25,1.50000000,0.500000\n");
}

TEST_CASE("named architecture counts match their reference sizes") {
    const auto lsa = count_params_flops(NamedArch::SwinT_LSA, 224);
    CHECK(std::abs(static_cast<double>(lsa.params) - 28.3e6) / 28.3e6 <= 0.03);
    CHECK(std::abs(static_cast<double>(lsa.flops) - 4.5e9) / 4.5e9 <= 0.10);

    const auto elsa = count_params_flops(NamedArch::SwinT_ELSA, 224);
    CHECK(std::abs(static_cast<double>(elsa.params) - 29.1e6) / 29.1e6 <= 0.03);
    CHECK(std::abs(static_cast<double>(elsa.flops) - 4.8e9) / 4.8e9 <= 0.10);

    const auto ha = count_params_flops(NamedArch::SwinT_ELSA_HA_only, 224);
    CHECK(std::abs(static_cast<double>(ha.params) - 29.0e6) / 29.0e6 <= 0.03);
    CHECK(std::abs(static_cast<double>(ha.flops) - 4.7e9) / 4.7e9 <= 0.10);

    CHECK(elsa.params > ha.params);  // the ghost head adds parameters
    CHECK_THROWS(count_params_flops(NamedArch::SwinT_LSA, 100));
    CHECK_THROWS(named_arch_from_name("ResNet50"));
}

TEST_CASE("config-based counts match the built tensors") {
    const ModelConfig cfg = tiny_config(MixerKind::ELSA);
    const auto counted = count_params_flops(cfg);
    Model m = Model::build(cfg, 0);
    CHECK(counted.params == m.param_count());
    CHECK(counted.flops > 0);
    // a deeper model has strictly more of both
    ModelConfig big = cfg;
    big.stages[1].blocks = 3;
    const auto bigger = count_params_flops(big);
    CHECK(bigger.params > counted.params);
    CHECK(bigger.flops > counted.flops);
}
