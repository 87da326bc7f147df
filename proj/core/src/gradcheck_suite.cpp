#include "latt/gradcheck_suite.hpp"

#include "latt/elsa.hpp"
#include "latt/ops.hpp"
#include "latt/paradigm.hpp"
#include "latt/rng.hpp"

namespace latt {

namespace {

Tensor randn(Rng rng, std::vector<std::size_t> dims, double sd = 1.0) {
    Tensor t(std::move(dims), DType::F64);
    rng.fill_normal(t, 0.0, sd);
    return t;
}

// weighted scalar readout keeps every output element's gradient informative
Var weighted_sum(Tape& tape, Var x, std::uint64_t salt) {
    Tensor w(tape.value(x).dims(), tape.value(x).dtype());
    Rng rng(salt);
    rng.fill_uniform(w, 0.5, 1.5);
    return ag::sum(ag::mul(x, tape.constant(std::move(w))));
}

}  // namespace

std::vector<GradCheckCase> default_gradcheck_suite(std::uint64_t seed) {
    Rng root(seed);
    std::vector<GradCheckCase> cases;

    auto named = [&](const char* name) { return root.stream(name); };

    cases.push_back({"elementwise",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var a = t.leaf(p.at("a"), "a");
                         Var b = t.leaf(p.at("b"), "b");
                         Var y = ag::mul(ag::add(a, b), ag::sub(ag::scale(a, 0.5), b));
                         return weighted_sum(t, y, 101);
                     },
                     {{"a", randn(named("ew/a"), {2, 3, 4})}, {"b", randn(named("ew/b"), {2, 3, 4})}},
                     {}});

    cases.push_back({"gelu",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         return weighted_sum(t, ag::gelu(t.leaf(p.at("x"), "x")), 102);
                     },
                     {{"x", randn(named("gelu/x"), {2, 4, 5})}},
                     {}});

    cases.push_back({"spow_lambda2",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         return weighted_sum(t, ag::spow(t.leaf(p.at("o"), "o"), 2.0), 103);
                     },
                     {{"o", randn(named("spow2/o"), {3, 7})}},
                     {}});

    {
        Tensor o = randn(named("spowh/o"), {4, 6});
        o.set_item(0, 2e-4);  // exercised by the near-zero skip
        o.set_item(1, -5e-4);
        cases.push_back({"spow_lambda_half",
                         [](Tape& t, const std::map<std::string, Tensor>& p) {
                             return weighted_sum(t, ag::spow(t.leaf(p.at("o"), "o"), 0.5), 104);
                         },
                         {{"o", std::move(o)}},
                         [](const std::string&, double v) { return std::abs(v) < 1e-3; }});
    }

    cases.push_back({"softmax_over",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         return weighted_sum(t, ag::softmax_over(t.leaf(p.at("x"), "x"), 1), 105);
                     },
                     {{"x", randn(named("softmax/x"), {2, 5, 3})}},
                     {}});

    cases.push_back({"filter_normalize",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         return weighted_sum(t, ag::filter_normalize(t.leaf(p.at("x"), "x"), 1, 1e-5),
                                             106);
                     },
                     {{"x", randn(named("fnorm/x"), {2, 6, 3})}},
                     {}});

    cases.push_back({"unfold",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         return weighted_sum(t, ag::unfold(t.leaf(p.at("x"), "x"), 3), 107);
                     },
                     {{"x", randn(named("unfold/x"), {2, 2, 4, 5})}},
                     {}});

    cases.push_back({"contract_channel",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var y = ag::contract_channel(t.leaf(p.at("x"), "x"), t.leaf(p.at("tbl"), "tbl"));
                         return weighted_sum(t, y, 108);
                     },
                     {{"x", randn(named("cc/x"), {2, 3, 3, 4})}, {"tbl", randn(named("cc/t"), {3, 2, 5})}},
                     {}});

    cases.push_back({"contract_unfolded",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var xu = ag::unfold(t.leaf(p.at("x"), "x"), 3);
                         Var y = ag::contract_unfolded(xu, t.leaf(p.at("tbl"), "tbl"));
                         return weighted_sum(t, y, 109);
                     },
                     {{"x", randn(named("cu/x"), {1, 3, 4, 4})}, {"tbl", randn(named("cu/t"), {3, 2, 9})}},
                     {}});

    cases.push_back({"head_dot",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var q = t.leaf(p.at("q"), "q");
                         Var ku = ag::unfold(t.leaf(p.at("k"), "k"), 3);
                         return weighted_sum(t, ag::head_dot(q, ku, 2), 110);
                     },
                     {{"q", randn(named("hd/q"), {2, 4, 3, 3})}, {"k", randn(named("hd/k"), {2, 4, 3, 3})}},
                     {}});

    cases.push_back({"head_contract",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var y = ag::head_contract(t.leaf(p.at("x"), "x"), t.leaf(p.at("tbl"), "tbl"));
                         return weighted_sum(t, y, 111);
                     },
                     {{"x", randn(named("hc/x"), {2, 4, 3, 3})}, {"tbl", randn(named("hc/t"), {2, 2, 9})}},
                     {}});

    cases.push_back({"head_contract_unfolded",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var ku = ag::unfold(t.leaf(p.at("k"), "k"), 3);
                         Var y = ag::head_contract_unfolded(ku, t.leaf(p.at("tbl"), "tbl"));
                         return weighted_sum(t, y, 112);
                     },
                     {{"k", randn(named("hcu/k"), {2, 4, 3, 3})}, {"tbl", randn(named("hcu/t"), {2, 2, 9})}},
                     {}});

    cases.push_back({"add_bias_gt",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var x = t.leaf(p.at("x"), "x");
                         Var y = ag::add_bias_gt(x, t.leaf(p.at("bias"), "bias"));
                         return weighted_sum(t, ag::softmax_over(y, 2), 113);
                     },
                     {{"x", randn(named("abg/x"), {2, 2, 9, 4})}, {"bias", randn(named("abg/b"), {2, 9})}},
                     {}});

    cases.push_back({"apply_neighbor",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var attn = ag::softmax_over(t.leaf(p.at("attn"), "attn"), 2);
                         Var vu = ag::unfold(t.leaf(p.at("v"), "v"), 3);
                         return weighted_sum(t, ag::apply_neighbor(attn, vu), 114);
                     },
                     {{"attn", randn(named("an/a"), {1, 2, 9, 12})}, {"v", randn(named("an/v"), {1, 4, 3, 4})}},
                     {}});

    cases.push_back({"ghost_expand_tables",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var h = t.leaf(p.at("h"), "h");
                         Var e = ag::expand_heads(h, 4);
                         Var m = ag::mul_table_ct(e, t.leaf(p.at("m"), "m"));
                         Var y = ag::add_table_ct(m, t.leaf(p.at("s"), "s"));
                         return weighted_sum(t, y, 115);
                     },
                     {{"h", randn(named("ge/h"), {2, 2, 9, 4})},
                      {"m", randn(named("ge/m"), {4, 9})},
                      {"s", randn(named("ge/s"), {4, 9})}},
                     {}});

    cases.push_back({"conv2d_grouped",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var y = ag::conv2d(t.leaf(p.at("x"), "x"), t.leaf(p.at("w"), "w"),
                                            t.leaf(p.at("b"), "b"), 2);
                         return weighted_sum(t, y, 116);
                     },
                     {{"x", randn(named("conv/x"), {2, 4, 4, 4})},
                      {"w", randn(named("conv/w"), {6, 2, 3, 3})},
                      {"b", randn(named("conv/b"), {6})}},
                     {}});

    cases.push_back({"dwconv",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var y = ag::conv2d(t.leaf(p.at("x"), "x"), t.leaf(p.at("w"), "w"), Var{}, 4);
                         return weighted_sum(t, y, 117);
                     },
                     {{"x", randn(named("dw/x"), {2, 4, 5, 5})}, {"w", randn(named("dw/w"), {4, 1, 3, 3})}},
                     {}});

    cases.push_back({"layer_norm_channels",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var y = ag::layer_norm_channels(t.leaf(p.at("x"), "x"),
                                                         t.leaf(p.at("gamma"), "gamma"),
                                                         t.leaf(p.at("beta"), "beta"), 1e-5);
                         return weighted_sum(t, y, 118);
                     },
                     {{"x", randn(named("ln/x"), {2, 4, 3, 3})},
                      {"gamma", randn(named("ln/g"), {4}, 0.5)},
                      {"beta", randn(named("ln/b"), {4}, 0.5)}},
                     {}});

    cases.push_back({"space_to_depth",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         return weighted_sum(t, ag::space_to_depth(t.leaf(p.at("x"), "x"), 2), 119);
                     },
                     {{"x", randn(named("s2d/x"), {2, 3, 4, 4})}},
                     {}});

    cases.push_back({"classifier_head",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var feat = ag::mean_hw(t.leaf(p.at("x"), "x"));
                         Var logits = ag::linear(feat, t.leaf(p.at("w"), "w"), t.leaf(p.at("b"), "b"));
                         return ag::cross_entropy(logits, {1, 0});
                     },
                     {{"x", randn(named("head/x"), {2, 4, 3, 3})},
                      {"w", randn(named("head/w"), {3, 4})},
                      {"b", randn(named("head/b"), {3})}},
                     {}});

    cases.push_back({"window_attention_ops",
                     [](Tape& t, const std::map<std::string, Tensor>& p) {
                         Var qw = ag::window_partition(t.leaf(p.at("q"), "q"), 2);
                         Var kw = ag::window_partition(t.leaf(p.at("k"), "k"), 2);
                         Var vw = ag::window_partition(t.leaf(p.at("v"), "v"), 2);
                         Var logits = ag::win_qk(qw, kw, 2);
                         logits = ag::add(logits, ag::win_q_table(qw, t.leaf(p.at("rk"), "rk"), 2));
                         logits = ag::add(logits, ag::win_table_k(kw, t.leaf(p.at("rq"), "rq"), 2));
                         logits = ag::add_bias_window(logits, t.leaf(p.at("rb"), "rb"), 2);
                         Var attn = ag::softmax_over(logits, 4);
                         Var out = ag::window_merge(ag::win_apply(attn, vw), 2, 4, 4);
                         return weighted_sum(t, out, 120);
                     },
                     {{"q", randn(named("win/q"), {1, 4, 4, 4})},
                      {"k", randn(named("win/k"), {1, 4, 4, 4})},
                      {"v", randn(named("win/v"), {1, 4, 4, 4})},
                      {"rk", randn(named("win/rk"), {2, 2, 9})},
                      {"rq", randn(named("win/rq"), {2, 2, 9})},
                      {"rb", randn(named("win/rb"), {2, 9})}},
                     {}});

    // composite paradigm forwards
    for (Preset pr : {Preset::Net7, Preset::Net7N}) {
        ParadigmConfig cfg = preset(pr);
        cfg.channels = 4;
        cfg.heads = 2;
        cfg.application.size = cfg.application.kind == ApplicationKind::Window ? 2 : 3;
        const std::string tag = cfg.application.kind == ApplicationKind::Window
                                    ? "unified_window"
                                    : "unified_neighboring";
        const std::size_t T = cfg.table_rows();
        cases.push_back({tag,
                         [cfg](Tape& t, const std::map<std::string, Tensor>& p) {
                             RelPosVars tables{t.leaf(p.at("rk"), "rk"), t.leaf(p.at("rq"), "rq"),
                                               t.leaf(p.at("rb"), "rb")};
                             Var out = unified_forward_graph(t, t.leaf(p.at("q"), "q"),
                                                             t.leaf(p.at("k"), "k"),
                                                             t.leaf(p.at("v"), "v"), tables, cfg);
                             return weighted_sum(t, out, 121);
                         },
                         {{"q", randn(named(tag.c_str()), {2, 4, 4, 4})},
                          {"k", randn(named((tag + "/k").c_str()), {2, 4, 4, 4})},
                          {"v", randn(named((tag + "/v").c_str()), {2, 4, 4, 4})},
                          {"rk", randn(named((tag + "/rk").c_str()), {2, 2, T})},
                          {"rq", randn(named((tag + "/rq").c_str()), {2, 2, T})},
                          {"rb", randn(named((tag + "/rb").c_str()), {2, T})}},
                         {}});
    }

    // Hadamard attention, each variant, and the full ELSA block
    for (ElsaVariant variant : all_variants()) {
        const std::string tag = std::string("hadamard_") + variant_name(variant);
        Rng ps = named(tag.c_str());
        ElsaParams p = ElsaParams::init(4, 2, 3, ps, DType::F64);
        std::map<std::string, Tensor> params = {{"q", randn(named((tag + "/q").c_str()), {1, 4, 4, 4})},
                                                {"k", randn(named((tag + "/k").c_str()), {1, 4, 4, 4})},
                                                {"rk", p.r_k},
                                                {"rq", p.r_q},
                                                {"rb", p.r_b}};
        cases.push_back({tag,
                         [p, variant](Tape& t, const std::map<std::string, Tensor>& prm) {
                             ElsaVars vars = elsa_constants(t, p);
                             vars.r_k = t.leaf(prm.at("rk"), "rk");
                             vars.r_q = t.leaf(prm.at("rq"), "rq");
                             vars.r_b = t.leaf(prm.at("rb"), "rb");
                             Var attn = hadamard_attention_graph(t, t.leaf(prm.at("q"), "q"),
                                                                 t.leaf(prm.at("k"), "k"), vars, p,
                                                                 variant);
                             return weighted_sum(t, attn, 122);
                         },
                         std::move(params),
                         {}});
    }

    {
        Rng ps = named("ghost_head");
        ElsaParams p = ElsaParams::init(4, 2, 3, ps, DType::F64);
        cases.push_back({"ghost_head",
                         [](Tape& t, const std::map<std::string, Tensor>& prm) {
                             Var h = ag::softmax_over(t.leaf(prm.at("h"), "h"), 2);
                             Var y = ghost_head_graph(t, h, t.leaf(prm.at("mul"), "mul"),
                                                      t.leaf(prm.at("add"), "add"), 4, 2.0, 1.0);
                             return weighted_sum(t, y, 123);
                         },
                         {{"h", randn(named("gh/h"), {2, 2, 9, 6})},
                          {"mul", p.ghost.mul},
                          {"add", p.ghost.add}},
                         {}});
    }

    cases.push_back({"ghost_head_global",
                     [](Tape& t, const std::map<std::string, Tensor>& prm) {
                         Var attn = ag::softmax_over(t.leaf(prm.at("attn"), "attn"), 3);
                         Var y = ghost_head_global_graph(t, attn, t.leaf(prm.at("mul"), "mul"),
                                                         t.leaf(prm.at("add"), "add"), 2.0, 0.5);
                         return weighted_sum(t, y, 124);
                     },
                     {{"attn", randn(named("ghg/a"), {1, 2, 4, 4})},
                      {"mul", randn(named("ghg/m"), {4, 4})},
                      {"add", randn(named("ghg/s"), {4, 4})}},
                     {}});

    for (ElsaVariant variant :
         {ElsaVariant::StrictUnfold, ElsaVariant::MergedConv, ElsaVariant::Production}) {
        const std::string tag = std::string("elsa_block_") + variant_name(variant);
        Rng ps = named(tag.c_str());
        ElsaParams p = ElsaParams::init(4, 2, 3, ps, DType::F64);
        std::map<std::string, Tensor> params;
        params.emplace("x", randn(named((tag + "/x").c_str()), {1, 4, 4, 4}));
        params.emplace("proj_q.weight", p.proj_q_w);
        params.emplace("proj_q.bias", p.proj_q_b);
        params.emplace("proj_k.weight", p.proj_k_w);
        params.emplace("proj_k.bias", p.proj_k_b);
        params.emplace("proj_v.weight", p.proj_v_w);
        params.emplace("proj_v.bias", p.proj_v_b);
        params.emplace("proj_out.weight", p.proj_out_w);
        params.emplace("proj_out.bias", p.proj_out_b);
        params.emplace("r_k", p.r_k);
        params.emplace("r_q", p.r_q);
        params.emplace("r_b", p.r_b);
        params.emplace("ghost.mul", p.ghost.mul);
        params.emplace("ghost.add", p.ghost.add);
        cases.push_back({tag,
                         [p, variant](Tape& t, const std::map<std::string, Tensor>& prm) {
                             ElsaVars vars;
                             vars.proj_q_w = t.leaf(prm.at("proj_q.weight"), "proj_q.weight");
                             vars.proj_q_b = t.leaf(prm.at("proj_q.bias"), "proj_q.bias");
                             vars.proj_k_w = t.leaf(prm.at("proj_k.weight"), "proj_k.weight");
                             vars.proj_k_b = t.leaf(prm.at("proj_k.bias"), "proj_k.bias");
                             vars.proj_v_w = t.leaf(prm.at("proj_v.weight"), "proj_v.weight");
                             vars.proj_v_b = t.leaf(prm.at("proj_v.bias"), "proj_v.bias");
                             vars.proj_out_w = t.leaf(prm.at("proj_out.weight"), "proj_out.weight");
                             vars.proj_out_b = t.leaf(prm.at("proj_out.bias"), "proj_out.bias");
                             vars.r_k = t.leaf(prm.at("r_k"), "r_k");
                             vars.r_q = t.leaf(prm.at("r_q"), "r_q");
                             vars.r_b = t.leaf(prm.at("r_b"), "r_b");
                             vars.ghost_mul = t.leaf(prm.at("ghost.mul"), "ghost.mul");
                             vars.ghost_add = t.leaf(prm.at("ghost.add"), "ghost.add");
                             Var out = elsa_forward_graph(t, t.leaf(prm.at("x"), "x"), vars, p, variant);
                             return weighted_sum(t, out, 125);
                         },
                         std::move(params),
                         {}});
    }

    return cases;
}

GradReport run_gradcheck_case(const GradCheckCase& c, double step, DType analytic_dtype) {
    FdOptions opts;
    opts.step = step;
    opts.analytic_dtype = analytic_dtype;
    opts.skip = c.skip;
    return fd_check(c.program, c.params, opts);
}

}  // namespace latt
