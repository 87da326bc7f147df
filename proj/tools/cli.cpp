#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "latt/config.hpp"
#include "latt/dataset.hpp"
#include "latt/elsa.hpp"
#include "latt/flops.hpp"
#include "latt/gradcheck_suite.hpp"
#include "latt/model.hpp"
#include "latt/ops.hpp"
#include "latt/paradigm.hpp"
#include "latt/rng.hpp"
#include "latt/train.hpp"

namespace latt::cli {

namespace {

struct Shape4 {
    std::size_t b, c, h, w;
    std::string str() const {
        return std::to_string(b) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
               std::to_string(w);
    }
};

std::vector<Shape4> parse_shapes(const std::string& text) {
    std::vector<Shape4> shapes;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        Shape4 s{};
        if (std::sscanf(tok.c_str(), "%zux%zux%zux%zu", &s.b, &s.c, &s.h, &s.w) != 4)
            throw std::invalid_argument("bad shape (want BxCxHxW): " + tok);
        shapes.push_back(s);
    }
    if (shapes.empty()) throw std::invalid_argument("need at least one shape");
    return shapes;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::istringstream in(text);
    int v;
    while (in >> v) out.push_back(v);
    if (out.empty()) throw std::invalid_argument("empty integer list");
    return out;
}

std::string format_sci(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6e", v);
    return buf;
}

/// Prints the report to stdout and, when `out` is set, writes it under that
/// directory. Content carries no timestamps so identical runs are
/// byte-identical.
void emit_report(const Config& run, const std::string& filename, const std::string& content) {
    std::fputs(content.c_str(), stdout);
    const std::string out_dir = run.get_or("out", "");
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream f(std::filesystem::path(out_dir) / filename, std::ios::binary);
        f << content;
    }
}

Tensor random_tensor(Rng rng, std::vector<std::size_t> dims, DType dt) {
    Tensor t(std::move(dims), dt);
    rng.fill_normal(t, 0.0, 1.0);
    return t;
}

// ---------------------------------------------------------------------------
// equiv
// ---------------------------------------------------------------------------

int cmd_equiv(const Config& run) {
    const std::uint64_t seed = run.get_u64("seed", 42);
    const DType dt = dtype_from_name(run.get_or("dtype", "f32"));
    const double default_tol = dt == DType::F32 ? 1e-5 : 1e-10;
    const double tol = run.get_double("equiv.tolerance", default_tol);
    const double degen_tol = run.get_double("equiv.degeneracy_tolerance", dt == DType::F32 ? 1e-6 : 1e-10);
    const int rounds = static_cast<int>(run.get_int("equiv.rounds", 20));
    const auto shapes = parse_shapes(run.get_or("equiv.shapes", "1x8x6x6 2x16x10x8 2x32x12x12 4x64x14x14"));
    const bool include_production = run.get_bool("equiv.production", true);

    Rng root(seed);
    std::ostringstream csv;
    csv << "check,a,b,shape,kernel,heads,max_abs_diff,tolerance,status\n";
    bool all_ok = true;
    auto row = [&](const std::string& check, const std::string& a, const std::string& b,
                   const std::string& shape, int k, int heads, double diff, double tolerance,
                   bool informational) {
        const bool ok = informational || diff <= tolerance;
        all_ok = all_ok && ok;
        csv << check << "," << a << "," << b << "," << shape << "," << k << "," << heads << ","
            << format_sci(diff) << "," << format_sci(tolerance) << ","
            << (informational ? "not_equivalent_by_design" : (ok ? "ok" : "FAIL")) << "\n";
    };

    const int kernels[3] = {3, 5, 7};
    for (int r = 0; r < rounds; ++r) {
        Rng rr = root.stream("equiv/round" + std::to_string(r));
        const Shape4 s = shapes[static_cast<std::size_t>(r) % shapes.size()];
        const int K = kernels[r % 3];
        int heads = 1 << (r % 3);
        while (s.c % static_cast<std::size_t>(heads) != 0) heads /= 2;
        ElsaParams p = ElsaParams::init(static_cast<int>(s.c), heads, K, rr.stream("params"), dt);
        Tensor q = random_tensor(rr.stream("q"), {s.b, s.c, s.h, s.w}, dt);
        Tensor k = random_tensor(rr.stream("k"), {s.b, s.c, s.h, s.w}, dt);
        Tensor strict = hadamard_attention(q, k, p, ElsaVariant::StrictUnfold).values;
        Tensor shift = hadamard_attention(q, k, p, ElsaVariant::ShiftConv).values;
        Tensor merged = hadamard_attention(q, k, p, ElsaVariant::MergedConv).values;
        row("variant", "strict_unfold", "shift_conv", s.str(), K, heads, max_abs_diff(strict, shift),
            tol, false);
        row("variant", "strict_unfold", "merged_conv", s.str(), K, heads, max_abs_diff(strict, merged),
            tol, false);
        row("variant", "shift_conv", "merged_conv", s.str(), K, heads, max_abs_diff(shift, merged),
            tol, false);
        if (include_production) {
            Tensor prod = hadamard_attention(q, k, p, ElsaVariant::Production).values;
            row("variant", "strict_unfold", "production", s.str(), K, heads,
                max_abs_diff(strict, prod), tol, true);
        }
    }

    // paradigm degeneracies: the unified operation against the dedicated forms
    for (int r = 0; r < std::max(1, rounds / 2); ++r) {
        Rng rr = root.stream("degen/round" + std::to_string(r));
        const std::size_t C = 4 + 4 * (static_cast<std::size_t>(r) % 3);
        const std::size_t H = 8, W = 8;
        const int K = kernels[r % 3];

        Tensor x = random_tensor(rr.stream("x"), {2, C, H, W}, dt);
        Tensor w = random_tensor(rr.stream("w"),
                                 {C, static_cast<std::size_t>(K), static_cast<std::size_t>(K)}, dt);
        ParadigmConfig dcfg = preset(Preset::DwConv);
        dcfg.channels = static_cast<int>(C);
        dcfg.heads = static_cast<int>(C);
        dcfg.application.size = K;
        RelPosTables dtab;
        dtab.r_b = w.reshaped({C, static_cast<std::size_t>(K) * K});
        row("degeneracy", "unified", "dwconv", "2x" + std::to_string(C) + "x8x8", K,
            static_cast<int>(C), max_abs_diff(unified_forward(x, x, x, dtab, dcfg), dwconv_forward(x, w)),
            degen_tol, false);

        const int wd = 4;
        const std::size_t G = 2;
        Tensor q = random_tensor(rr.stream("q"), {2, C, H, W}, dt);
        Tensor kk = random_tensor(rr.stream("k"), {2, C, H, W}, dt);
        Tensor v = random_tensor(rr.stream("v"), {2, C, H, W}, dt);
        const std::size_t span = static_cast<std::size_t>(2 * wd - 1) * (2 * wd - 1);
        Tensor bias = random_tensor(rr.stream("bias"), {G, span}, dt);
        ParadigmConfig lcfg = preset(Preset::SwinLSA);
        lcfg.channels = static_cast<int>(C);
        lcfg.heads = static_cast<int>(G);
        lcfg.application = Application::window(wd);
        RelPosTables ltab;
        ltab.r_b = bias;
        const double scale = lcfg.effective_qk_scale();
        row("degeneracy", "unified", "lsa", "2x" + std::to_string(C) + "x8x8", wd,
            static_cast<int>(G),
            max_abs_diff(unified_forward(q, kk, v, ltab, lcfg), lsa_forward(q, kk, v, bias, wd, scale)),
            degen_tol, false);
    }

    emit_report(run, "equiv.csv", csv.str());
    std::fprintf(stdout, "# equiv: %s\n", all_ok ? "all checks passed" : "FAILURES present");
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(const Config& run) {
    const std::uint64_t seed = run.get_u64("seed", 42);
    const DType dt = dtype_from_name(run.get_or("dtype", "f64"));
    const double step = run.get_double("gradcheck.step", 1e-5);
    const double threshold =
        run.get_double("gradcheck.threshold", dt == DType::F64 ? 1e-6 : 1e-4);

    auto suite = default_gradcheck_suite(seed);
    std::ostringstream csv;
    csv << "case,parameter,max_rel_err,max_abs_err,skipped\n";
    bool all_ok = true;
    for (const auto& c : suite) {
        GradReport report = run_gradcheck_case(c, step, dt);
        for (const auto& e : report.entries) {
            csv << c.name << "," << e.param << "," << format_sci(e.max_rel_err) << ","
                << format_sci(e.max_abs_err) << "," << e.skipped << "\n";
            if (e.max_rel_err > threshold) all_ok = false;
        }
    }
    emit_report(run, "gradcheck.csv", csv.str());
    std::fprintf(stdout, "# gradcheck: %zu cases, threshold %s: %s\n", suite.size(),
                 format_sci(threshold).c_str(), all_ok ? "all passed" : "FAILURES present");
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

std::uint64_t transient_bytes(ElsaVariant v, const Shape4& s, int K, std::size_t heads, DType dt) {
    const std::uint64_t es = dtype_size(dt);
    const std::uint64_t kk = static_cast<std::uint64_t>(K) * static_cast<std::uint64_t>(K);
    const std::uint64_t pixels = s.h * s.w;
    switch (v) {
        case ElsaVariant::StrictUnfold:
            // the unfolded Hadamard product dominates
            return s.b * s.c * kk * pixels * es;
        case ElsaVariant::ShiftConv:
            return s.b * heads * kk * pixels * es;
        case ElsaVariant::MergedConv:
        case ElsaVariant::Production:
            return 2 * s.b * heads * kk * pixels * es;
    }
    return 0;
}

int cmd_bench(const Config& run) {
    const std::uint64_t seed = run.get_u64("seed", 42);
    const DType dt = dtype_from_name(run.get_or("dtype", "f32"));
    const int repeats = static_cast<int>(run.get_int("bench.repeats", 5));
    if (repeats < 3) throw std::invalid_argument("bench: repeats must be >= 3");
    const auto shapes = parse_shapes(run.get_or("bench.shapes", "2x16x16x16 2x32x14x14"));
    const auto kernels = parse_int_list(run.get_or("bench.kernels", "3 5 7"));
    const int heads = static_cast<int>(run.get_int("bench.heads", 2));
    if (heads < 1) throw std::invalid_argument("bench: heads must be >= 1");

    std::ostringstream csv;
    csv << "variant,shape,kernel,median_ms,transient_bytes\n";
    Rng root(seed);
    for (const Shape4& s : shapes) {
        for (int K : kernels) {
            int g = heads;
            while (s.c % static_cast<std::size_t>(g) != 0) g /= 2;
            Rng rr = root.stream("bench/" + s.str() + "/" + std::to_string(K));
            ElsaParams p = ElsaParams::init(static_cast<int>(s.c), g, K, rr.stream("params"), dt);
            Tensor q = random_tensor(rr.stream("q"), {s.b, s.c, s.h, s.w}, dt);
            Tensor k = random_tensor(rr.stream("k"), {s.b, s.c, s.h, s.w}, dt);
            for (ElsaVariant v : all_variants()) {
                (void)hadamard_attention(q, k, p, v);  // warmup
                std::vector<double> times;
                times.reserve(static_cast<std::size_t>(repeats));
                for (int rep = 0; rep < repeats; ++rep) {
                    const auto t0 = std::chrono::steady_clock::now();
                    (void)hadamard_attention(q, k, p, v);
                    const auto t1 = std::chrono::steady_clock::now();
                    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
                }
                std::sort(times.begin(), times.end());
                const double median = times[times.size() / 2];
                char ms[32];
                std::snprintf(ms, sizeof(ms), "%.3f", median);
                csv << variant_name(v) << "," << s.str() << "," << K << "," << ms << ","
                    << transient_bytes(v, s, K, static_cast<std::size_t>(g), dt) << "\n";
            }
        }
    }
    emit_report(run, "bench.csv", csv.str());
    return 0;
}

// ---------------------------------------------------------------------------
// flops
// ---------------------------------------------------------------------------

int cmd_flops(const Config& run, std::string arch) {
    if (arch.empty()) arch = run.get_or("flops.arch", "SwinT_ELSA");
    const int resolution = static_cast<int>(run.get_int("flops.resolution", 224));
    std::ostringstream csv;
    csv << "architecture,resolution,params,flops\n";
    CountResult c{};
    if (arch.rfind("tiny_", 0) == 0) {
        const ModelConfig cfg = tiny_config(mixer_from_name(arch.substr(5)));
        c = count_params_flops(cfg);
        csv << arch << "," << cfg.image_size << "," << c.params << "," << c.flops << "\n";
    } else {
        c = count_params_flops(named_arch_from_name(arch), resolution);
        csv << arch << "," << resolution << "," << c.params << "," << c.flops << "\n";
    }
    emit_report(run, "flops.csv", csv.str());
    std::fprintf(stdout, "# %s: %.2fM params, %.2fG flops\n", arch.c_str(),
                 static_cast<double>(c.params) / 1e6, static_cast<double>(c.flops) / 1e9);
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const Config& run) {
    const std::uint64_t seed = run.get_u64("seed", 42);
    const std::string mixer = run.get_or("train.mixer", "elsa");
    ModelConfig cfg = tiny_config(mixer_from_name(mixer));
    if (run.has("train.preset"))
        for (auto& st : cfg.stages) st.mixer.unified_preset = [&] {
            for (const auto& [name, p] : preset_table())
                if (name == run.get("train.preset")) return p;
            throw std::invalid_argument("unknown preset: " + run.get("train.preset"));
        }();
    if (run.has("train.variant"))
        for (auto& st : cfg.stages) st.mixer.elsa_variant = variant_from_name(run.get("train.variant"));
    if (run.has("train.head_setting")) {
        cfg.head_setting = head_setting_from_name(run.get("train.head_setting"));
    }

    TrainOptions opts;
    opts.steps = static_cast<int>(run.get_int("train.steps", 2000));
    opts.batch_size = static_cast<int>(run.get_int("train.batch", 32));
    opts.lr = run.get_double("train.lr", 1e-3);
    opts.cosine_decay = run.get_bool("train.cosine", true);
    opts.optimizer = optimizer_from_name(run.get_or("train.optimizer", "adam"));
    opts.momentum = run.get_double("train.momentum", 0.9);
    opts.seed = seed;
    opts.log_every = static_cast<int>(run.get_int("train.log_every", 25));

    const std::uint64_t data_seed = run.get_u64("train.data_seed", 7);
    const std::size_t n = run.get_u64("train.n", 2048);
    const double noise = run.get_double("train.noise", 0.25);
    auto data = SyntheticDataset::make(data_seed, n, noise);

    Model model = Model::build(cfg, seed);
    TrainLog log = train(model, data, opts);

    std::ostringstream csv;
    log.write_csv(csv);
    emit_report(run, "train_log.csv", csv.str());
    if (log.diverged) {
        std::fprintf(stdout, "# train: diverged at step %d (%s)\n", log.diverged_step,
                     log.divergence_reason.c_str());
        return 1;
    }
    std::fprintf(stdout, "# train: %d steps, final train accuracy %.4f\n", opts.steps,
                 log.final_train_accuracy);
    return 0;
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

int cmd_presets(const Config& run) {
    std::ostringstream csv;
    csv << "name,qk,q_rk,rq_k,rb,norm,application\n";
    for (const auto& [name, p] : preset_table()) {
        const ParadigmConfig cfg = preset(p);
        csv << name << "," << cfg.use_qk << "," << cfg.use_q_rk << "," << cfg.use_rq_k << ","
            << cfg.use_rb << "," << norm_name(cfg.norm) << "," << application_name(cfg.application.kind)
            << "\n";
    }
    emit_report(run, "presets.csv", csv.str());
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"latt: local spatial-processing kernel laboratory"};
    app.require_subcommand(1);

    std::string config_path, seed_str, dtype_str, out_dir;
    app.add_option("--config", config_path, "configuration file (dotted key = value)");
    app.add_option("--seed", seed_str, "root seed (overrides config key 'seed')");
    app.add_option("--dtype", dtype_str, "element type: f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--out", out_dir, "directory for CSV reports");

    auto* equiv = app.add_subcommand("equiv", "implementation-equivalence suite");
    std::string equiv_shapes, equiv_tol, equiv_rounds;
    equiv->add_option("--shapes", equiv_shapes, "space-separated BxCxHxW list");
    equiv->add_option("--tolerance", equiv_tol, "max-abs tolerance for equivalent variants");
    equiv->add_option("--rounds", equiv_rounds, "number of random configurations");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::string gc_step, gc_threshold;
    gradcheck->add_option("--step", gc_step, "relative finite-difference step");
    gradcheck->add_option("--threshold", gc_threshold, "max relative error accepted");

    auto* bench = app.add_subcommand("bench", "variant micro-benchmarks (medians, buffer bytes)");
    std::string bench_shapes, bench_repeats, bench_kernels;
    bench->add_option("--shapes", bench_shapes, "space-separated BxCxHxW list");
    bench->add_option("--repeats", bench_repeats, "timed repeats per row (>= 3)");
    bench->add_option("--kernels", bench_kernels, "space-separated kernel sizes");

    auto* flops = app.add_subcommand("flops", "parameter / FLOP counter");
    std::string flops_arch;
    flops->add_option("arch", flops_arch, "SwinT_LSA | SwinT_ELSA | SwinT_ELSA_HA_only | tiny_<mixer>");
    std::string flops_res;
    flops->add_option("--resolution", flops_res, "input resolution (default 224)");

    auto* train_cmd = app.add_subcommand("train", "train the miniature classifier");
    std::string tr_mixer, tr_steps, tr_batch, tr_lr, tr_opt, tr_dseed, tr_n, tr_noise;
    train_cmd->add_option("--mixer", tr_mixer, "lsa | dwconv | unified | elsa");
    train_cmd->add_option("--steps", tr_steps, "training steps");
    train_cmd->add_option("--batch", tr_batch, "batch size");
    train_cmd->add_option("--lr", tr_lr, "base learning rate");
    train_cmd->add_option("--optimizer", tr_opt, "adam | sgd");
    train_cmd->add_option("--data-seed", tr_dseed, "synthetic dataset seed");
    train_cmd->add_option("--n", tr_n, "synthetic dataset size");
    train_cmd->add_option("--noise", tr_noise, "additive noise sigma");

    auto* presets_cmd = app.add_subcommand("presets", "list the named configurations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        Config run_cfg = config_path.empty() ? Config{} : Config::parse_file(config_path);
        auto override_key = [&](const std::string& key, const std::string& value) {
            if (!value.empty()) run_cfg.set(key, value);
        };
        override_key("seed", seed_str);
        override_key("dtype", dtype_str);
        override_key("out", out_dir);
        override_key("equiv.shapes", equiv_shapes);
        override_key("equiv.tolerance", equiv_tol);
        override_key("equiv.rounds", equiv_rounds);
        override_key("gradcheck.step", gc_step);
        override_key("gradcheck.threshold", gc_threshold);
        override_key("bench.shapes", bench_shapes);
        override_key("bench.repeats", bench_repeats);
        override_key("bench.kernels", bench_kernels);
        override_key("flops.resolution", flops_res);
        override_key("train.mixer", tr_mixer);
        override_key("train.steps", tr_steps);
        override_key("train.batch", tr_batch);
        override_key("train.lr", tr_lr);
        override_key("train.optimizer", tr_opt);
        override_key("train.data_seed", tr_dseed);
        override_key("train.n", tr_n);
        override_key("train.noise", tr_noise);

        if (equiv->parsed()) return cmd_equiv(run_cfg);
        if (gradcheck->parsed()) return cmd_gradcheck(run_cfg);
        if (bench->parsed()) return cmd_bench(run_cfg);
        if (flops->parsed()) return cmd_flops(run_cfg, flops_arch);
        if (train_cmd->parsed()) return cmd_train(run_cfg);
        if (presets_cmd->parsed()) return cmd_presets(run_cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}

}  // namespace latt::cli
