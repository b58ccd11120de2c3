#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "skim/skim.hpp"

// `skim` command line: fixture | calibrate | record-errors | quantize |
// dequantize | report | oracle-check. Exit codes: 0 success, 1 validation or
// oracle failure, 2 usage error.

namespace skim::cli {

namespace detail {

using nlohmann::json;

inline json size_to_json(const SizeReport& s) {
    json j;
    j["labels_bytes"] = s.labels_bytes;
    j["codebooks_bytes"] = s.codebooks_bytes;
    j["alpha_bytes"] = s.alpha_bytes;
    j["overhead_bytes"] = s.overhead_bytes;
    j["total_bytes"] = s.total_bytes;
    j["average_bits"] = s.average_bits;
    j["label_bits_per_weight"] = s.label_bits_per_weight;
    j["effective_bits_per_weight"] = s.effective_bits_per_weight;
    return j;
}

inline json report_to_json(const QuantReport& r) {
    json j;
    j["layer"] = r.layer;
    j["n"] = r.n;
    j["m"] = r.m;
    j["target_bit"] = r.target_bit;
    j["b_min"] = r.b_min;
    j["b_max"] = r.b_max;
    j["mixed"] = r.mixed;
    j["scaling"] = r.scaling;
    j["seed"] = r.seed;
    j["restarts"] = r.restarts;
    j["iterations"] = r.iterations;
    j["loss_alpha_one"] = r.loss_alpha_one;
    j["loss_final"] = r.loss_final;
    j["loss_packed"] = r.loss_packed;
    json hist = json::object();
    for (std::size_t i = 0; i < r.bit_histogram.size(); ++i) {
        hist[std::to_string(r.b_min + static_cast<int>(i))] = r.bit_histogram[i];
    }
    j["bit_histogram"] = hist;
    j["row_bits"] = r.row_bits;
    j["row_errors"] = r.row_errors;
    j["avg_bits"] = r.avg_bits;
    j["saturated"] = r.saturated;
    j["size"] = size_to_json(r.size);
    if (r.oracle) {
        json o;
        o["greedy_error"] = r.oracle->greedy_error;
        o["dp_error"] = r.oracle->dp_error;
        o["rel_gap"] = r.oracle->rel_gap;
        o["greedy_avg_bits"] = r.oracle->greedy_avg_bits;
        o["dp_avg_bits"] = r.oracle->dp_avg_bits;
    j["oracle"] = o;
    } else {
        j["oracle"] = nullptr;
    }
    j["wall_ms"] = r.wall_ms;
    return j;
}

inline std::vector<CalibSample> samples_from_bundle(const Bundle& bundle) {
    std::vector<CalibSample> samples;
    for (std::size_t d = 0;; ++d) {
        const std::string xs = "X." + std::to_string(d);
        const std::string gs = "Gy." + std::to_string(d);
        if (!bundle.has(xs) || !bundle.has(gs)) break;
        samples.push_back({bundle.get(xs), bundle.get(gs)});
    }
    if (samples.empty()) {
        throw std::runtime_error("bundle has no calibration samples (X.<d>/Gy.<d>)");
    }
    return samples;
}

inline ErrorMatrix errors_from_bundle(const Bundle& bundle) {
    const Matrix& E = bundle.get("E");
    ErrorMatrix out;
    out.n = E.rows;
    out.b_min = std::stoi(bundle.meta.at("b_min"));
    out.b_max = std::stoi(bundle.meta.at("b_max"));
    if (static_cast<std::size_t>(out.span()) != E.cols) {
        throw std::runtime_error("error bundle: tensor shape does not match b_min/b_max");
    }
    out.E = E.elems;
    for (double v : out.E) {
        if (!(v >= 0.0)) throw std::runtime_error("error bundle: negative entry");
    }
    return out;
}

inline void write_errors_bundle(const std::filesystem::path& path, const ErrorMatrix& E,
                                const KmeansConfig& kcfg) {
    Matrix t(E.n, static_cast<std::size_t>(E.span()), 0.0, "E");
    t.elems = E.E;
    std::map<std::string, std::string> meta{
        {"b_min", std::to_string(E.b_min)},
        {"b_max", std::to_string(E.b_max)},
        {"seed", std::to_string(kcfg.seed)},
        {"restarts", std::to_string(kcfg.restarts)},
    };
    write_bundle(path, {t}, meta);
}

struct QuantizeIo {
    Matrix W;
    Sensitivity G;
    HessianProxy H;
};

inline QuantizeIo load_calibrated(const std::filesystem::path& path) {
    Bundle bundle = read_bundle(path);
    QuantizeIo io;
    io.W = bundle.get("W");
    io.G.G = bundle.get("G");
    io.H.H = bundle.get("H");
    io.H.diagH.resize(io.H.H.rows);
    for (std::size_t j = 0; j < io.H.H.rows; ++j) io.H.diagH[j] = io.H.H.at(j, j);
    return io;
}

// Applies config-file values, then explicit CLI flags on top.
struct QuantizeFlags {
    std::string config_path;
    double bit = 3.0;
    int bmin = 2, bmax = 4;
    bool no_mixed = false, no_scale = false, opt_style = false, oracle = false;
    bool trace = false;
    std::string alloc_init = "min";
    int iters = 1, restarts = 3;
    std::uint64_t seed = 0;
    std::string layer = "layer";
};

inline PipelineConfig build_config(const CLI::App& cmd, const QuantizeFlags& fl) {
    PipelineConfig cfg;
    if (!fl.config_path.empty()) {
        std::ifstream f(fl.config_path);
        if (!f) throw std::runtime_error("cannot open config file '" + fl.config_path + "'");
        json j = json::parse(f);
        if (j.contains("bit")) cfg.target_bit = j["bit"].get<double>();
        if (j.contains("bmin")) cfg.b_min = j["bmin"].get<int>();
        if (j.contains("bmax")) cfg.b_max = j["bmax"].get<int>();
        if (j.contains("mixed")) cfg.mixed_precision = j["mixed"].get<bool>();
        if (j.contains("scale")) cfg.scaling = j["scale"].get<bool>();
        if (j.contains("alloc_init")) {
            cfg.alloc_init = j["alloc_init"].get<std::string>() == "floor"
                                 ? AllocInit::floor_bit
                                 : AllocInit::all_min;
        }
        if (j.contains("iters")) cfg.iterations = j["iters"].get<int>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("restarts")) cfg.restarts = j["restarts"].get<int>();
        if (j.contains("oracle")) cfg.oracle = j["oracle"].get<bool>();
        if (j.contains("opt_style")) cfg.opt_style = j["opt_style"].get<bool>();
        if (j.contains("layer")) cfg.layer_name = j["layer"].get<std::string>();
        if (j.contains("adam")) {
            const json& a = j["adam"];
            if (a.contains("lr")) cfg.adam.lr = a["lr"].get<double>();
            if (a.contains("decay")) cfg.adam.decay = a["decay"].get<double>();
            if (a.contains("decay_every")) cfg.adam.decay_every = a["decay_every"].get<int>();
            if (a.contains("max_steps")) cfg.adam.max_steps = a["max_steps"].get<int>();
        }
    }
    if (cmd.count("--bit")) cfg.target_bit = fl.bit;
    if (cmd.count("--bmin")) cfg.b_min = fl.bmin;
    if (cmd.count("--bmax")) cfg.b_max = fl.bmax;
    if (cmd.count("--no-mixed")) cfg.mixed_precision = false;
    if (cmd.count("--no-scale")) cfg.scaling = false;
    if (cmd.count("--alloc-init")) {
        cfg.alloc_init = fl.alloc_init == "floor" ? AllocInit::floor_bit : AllocInit::all_min;
    }
    if (cmd.count("--iters")) cfg.iterations = fl.iters;
    if (cmd.count("--seed")) cfg.seed = fl.seed;
    if (cmd.count("--restarts")) cfg.restarts = fl.restarts;
    if (cmd.count("--oracle")) cfg.oracle = true;
    if (cmd.count("--opt-style")) cfg.opt_style = true;
    if (cmd.count("--layer")) cfg.layer_name = fl.layer;
    return cfg;
}

inline int run_oracle_check(std::uint64_t seed, int trials) {
    bool ok = true;

    {  // Lloyd vs DP
        int exact = 0;
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            Rng rng(mix64(seed + 17 * static_cast<std::uint64_t>(t)));
            const int m = 2 + static_cast<int>(rng.index(63));
            const int k = 1 + static_cast<int>(rng.index(8));
            std::vector<double> v(m), w(m);
            for (auto& x : v) x = rng.normal();
            for (auto& x : w) x = rng.uniform();
            const ClusterResult dp = kmeans_exact_dp(v, w, k);
            const ClusterResult ll = kmeans_lloyd(v, w, k, seed + static_cast<std::uint64_t>(t), 10);
            if (dp.objective > ll.objective * (1.0 + 1e-9) + 1e-12) {
                std::fprintf(stderr, "oracle-check: DP worse than Lloyd on trial %d\n", t);
                ok = false;
            }
            const double gap = dp.objective > 0.0
                                   ? (ll.objective - dp.objective) / dp.objective
                                   : (ll.objective <= 1e-12 ? 0.0 : 1.0);
            if (gap <= 1e-9) {
                ++exact;
            } else {
                worst = std::max(worst, gap);
                if (gap > 0.05) {
                    std::fprintf(stderr, "oracle-check: Lloyd gap %.3g%% on trial %d\n",
                                 100.0 * gap, t);
                    ok = false;
                }
            }
        }
        std::printf("kmeans: lloyd matched dp on %d/%d trials, worst gap %.3g%%\n", exact,
                    trials, 100.0 * worst);
    }

    {  // greedy vs DP allocation
        double worst = 0.0, sum = 0.0;
        for (int t = 0; t < trials; ++t) {
            Rng rng(mix64(seed + 31 * static_cast<std::uint64_t>(t) + 1));
            const std::size_t n = 1 + rng.index(64);
            ErrorMatrix E;
            E.n = n;
            E.b_min = 2;
            E.b_max = 4;
            E.E.resize(n * 3);
            for (auto& x : E.E) x = rng.uniform();
            // integral total budget so greedy and DP spend the same bits
            const long long total =
                2 * static_cast<long long>(n) +
                static_cast<long long>(rng.index(2 * n + 1));
            const double bit = static_cast<double>(total) / static_cast<double>(n);
            const BitAllocation greedy = allocate_greedy(E, bit);
            const BitAllocation dp = allocate_dp_oracle(E, bit);
            const double ge = allocation_error(E, greedy);
            const double de = allocation_error(E, dp);
            if (de > ge * (1.0 + 1e-9) + 1e-12) {
                std::fprintf(stderr, "oracle-check: DP allocation worse on trial %d\n", t);
                ok = false;
            }
            const double gap = (ge - de) / std::max(de, 1e-300);
            worst = std::max(worst, gap);
            sum += gap;
        }
        std::printf("allocation: dp <= greedy on all %d trials, gap mean %.3g max %.3g\n",
                    trials, sum / trials, worst);
    }

    {  // analytical gradient vs central differences
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            Rng rng(mix64(seed + 53 * static_cast<std::uint64_t>(t) + 2));
            const std::size_t n = 1 + rng.index(8);
            const std::size_t m = 2 + rng.index(11);
            const std::size_t k = 2 + rng.index(6);
            Matrix W(n, m);
            for (auto& x : W.elems) x = rng.normal();
            Matrix X(m, k);
            for (auto& x : X.elems) x = rng.normal();
            Matrix Gy(n, k);
            for (auto& x : Gy.elems) x = rng.normal();
            const std::vector<CalibSample> samples{{X, Gy}};
            const Sensitivity G = accumulate_sensitivity(samples);
            const HessianProxy H = accumulate_hessian_proxy(samples);
            BitAllocation alloc;
            alloc.b_min = 2;
            alloc.b_max = 3;
            alloc.bits.assign(n, 2 + static_cast<int>(rng.index(2)));
            const LabelMatrix labels =
                compute_labels(W, ScalingVector::ones(m), G, alloc, {3, seed, 100});
            ScalingVector a = ScalingVector::ones(m);
            for (auto& x : a.alpha) x = std::exp(0.5 * rng.normal());
            const LossGrad lg = loss_and_grad(W, labels, G, H, a);
            double ga = 0.0, gf = 0.0, diff = 0.0;
            for (std::size_t p = 0; p < m; ++p) {
                const double h = 1e-5 * std::abs(a.alpha[p]);
                ScalingVector ap = a, am = a;
                ap.alpha[p] += h;
                am.alpha[p] -= h;
                const double fd = (loss_and_grad(W, labels, G, H, ap).loss -
                                   loss_and_grad(W, labels, G, H, am).loss) /
                                  (2.0 * h);
                ga = std::max(ga, std::abs(lg.grad[p]));
                gf = std::max(gf, std::abs(fd));
                diff = std::max(diff, std::abs(fd - lg.grad[p]));
            }
            const double rel = diff / std::max({ga, gf, 1e-8 * (1.0 + lg.loss)});
            worst = std::max(worst, rel);
            if (rel >= 1e-4) {
                std::fprintf(stderr, "oracle-check: gradient rel err %.3g on trial %d\n",
                             rel, t);
                ok = false;
            }
        }
        std::printf("gradient: max rel err %.3g over %d trials\n", worst, trials);
    }

    std::printf("oracle-check: %s\n", ok ? "all checks passed" : "FAILED");
    return ok ? 0 : 1;
}

}  // namespace detail

inline int run(const std::vector<std::string>& args) {
    using detail::json;

    CLI::App app{"SKIM quantization pipeline"};
    app.require_subcommand(1);

    // fixture
    auto* fixture_cmd = app.add_subcommand("fixture", "write a synthetic calibration bundle");
    struct {
        std::string out;
        std::uint64_t seed = 0;
        std::size_t n = 64, m = 128, k = 32, samples = 4, outlier_cols = 0;
        double row_sigma = 1.0, outlier_scale = 1.0;
    } fx;
    fixture_cmd->add_option("--out", fx.out, "output bundle path")->required();
    fixture_cmd->add_option("--seed", fx.seed, "rng seed");
    fixture_cmd->add_option("--n", fx.n, "rows (channels)");
    fixture_cmd->add_option("--m", fx.m, "columns");
    fixture_cmd->add_option("--k", fx.k, "sample inner dimension");
    fixture_cmd->add_option("--samples", fx.samples, "number of calibration samples");
    fixture_cmd->add_option("--row-sigma", fx.row_sigma, "log-normal sigma of row scales");
    fixture_cmd->add_option("--outlier-cols", fx.outlier_cols, "number of outlier columns");
    fixture_cmd->add_option("--outlier-scale", fx.outlier_scale, "outlier column scale");

    // calibrate
    auto* calibrate_cmd = app.add_subcommand("calibrate", "accumulate G and H from samples");
    struct {
        std::string in, out;
    } cal;
    calibrate_cmd->add_option("--in", cal.in, "fixture bundle")->required();
    calibrate_cmd->add_option("--out", cal.out, "calibrated bundle")->required();

    // record-errors
    auto* record_cmd = app.add_subcommand("record-errors", "pre-record the per-row error matrix");
    struct {
        std::string in, out;
        int bmin = 2, bmax = 4, restarts = 3;
        std::uint64_t seed = 0;
    } rec;
    record_cmd->add_option("--in", rec.in, "calibrated bundle")->required();
    record_cmd->add_option("--out", rec.out, "error bundle")->required();
    record_cmd->add_option("--bmin", rec.bmin, "minimum bits");
    record_cmd->add_option("--bmax", rec.bmax, "maximum bits");
    record_cmd->add_option("--seed", rec.seed, "rng seed");
    record_cmd->add_option("--restarts", rec.restarts, "kmeans restarts");

    // quantize
    auto* quantize_cmd = app.add_subcommand("quantize", "run the full pipeline");
    detail::QuantizeFlags qf;
    struct {
        std::string in, out, report, errors;
    } qio;
    quantize_cmd->add_option("--in", qio.in, "calibrated bundle")->required();
    quantize_cmd->add_option("--out", qio.out, "packed SKQ1 output")->required();
    quantize_cmd->add_option("--report", qio.report, "report JSON path (default <out>.report.json)");
    quantize_cmd->add_option("--errors", qio.errors,
                             "error-matrix bundle; loaded if present, else computed and saved");
    quantize_cmd->add_option("--config", qf.config_path, "JSON config file");
    quantize_cmd->add_option("--bit", qf.bit, "target average bits (may be fractional)");
    quantize_cmd->add_option("--bmin", qf.bmin, "minimum bits");
    quantize_cmd->add_option("--bmax", qf.bmax, "maximum bits");
    quantize_cmd->add_flag("--no-mixed", qf.no_mixed, "disable mixed precision");
    quantize_cmd->add_option("--alloc-init", qf.alloc_init, "greedy init: min|floor")
        ->check(CLI::IsMember({"min", "floor"}));
    quantize_cmd->add_flag("--no-scale", qf.no_scale, "disable the scaling vector");
    quantize_cmd->add_option("--iters", qf.iters, "outer iterations");
    quantize_cmd->add_option("--seed", qf.seed, "rng seed");
    quantize_cmd->add_option("--restarts", qf.restarts, "kmeans restarts");
    quantize_cmd->add_flag("--trace", qf.trace, "print step,loss,lr lines");
    quantize_cmd->add_flag("--oracle", qf.oracle, "also run the DP allocation oracle");
    quantize_cmd->add_flag("--opt-style", qf.opt_style, "overfitting-mitigation preset");
    quantize_cmd->add_option("--layer", qf.layer, "layer name for the report");

    // dequantize
    auto* dequantize_cmd = app.add_subcommand("dequantize", "reconstruct dense weights from SKQ1");
    struct {
        std::string in, out;
    } dq;
    dequantize_cmd->add_option("--in", dq.in, "packed SKQ1 file")->required();
    dequantize_cmd->add_option("--out", dq.out, "output bundle")->required();

    // report
    auto* report_cmd = app.add_subcommand("report", "pretty-print or export a report JSON");
    struct {
        std::string in, csv;
    } rp;
    report_cmd->add_option("--in", rp.in, "report JSON")->required();
    report_cmd->add_option("--csv", rp.csv, "emit CSV to stdout: bits|errors")
        ->check(CLI::IsMember({"bits", "errors"}));

    // oracle-check
    auto* oracle_cmd = app.add_subcommand("oracle-check", "greedy/DP, Lloyd/DP and gradient checks");
    struct {
        std::uint64_t seed = 0;
        int trials = 50;
    } oc;
    oracle_cmd->add_option("--seed", oc.seed, "rng seed");
    oracle_cmd->add_option("--trials", oc.trials, "trials per check");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (fixture_cmd->parsed()) {
            FixtureSpec spec;
            spec.n = fx.n;
            spec.m = fx.m;
            spec.k = fx.k;
            spec.num_samples = fx.samples;
            spec.row_sigma = fx.row_sigma;
            spec.outlier_cols = fx.outlier_cols;
            spec.outlier_scale = fx.outlier_scale;
            const Fixture fixture = generate_fixture(fx.seed, spec);
            std::vector<Matrix> tensors{fixture.W};
            for (const auto& s : fixture.samples) {
                tensors.push_back(s.X);
                tensors.push_back(s.Gy);
            }
            write_bundle(fx.out, tensors,
                         {{"seed", std::to_string(fx.seed)},
                          {"num_samples", std::to_string(fx.samples)}});
            std::printf("wrote fixture bundle '%s' (n=%zu m=%zu samples=%zu)\n",
                        fx.out.c_str(), fx.n, fx.m, fx.samples);
            return 0;
        }

        if (calibrate_cmd->parsed()) {
            Bundle bundle = read_bundle(cal.in);
            const std::vector<CalibSample> samples = detail::samples_from_bundle(bundle);
            const Sensitivity G = accumulate_sensitivity(samples);
            const HessianProxy H = accumulate_hessian_proxy(samples);
            Matrix gm = G.G;
            gm.name = "G";
            Matrix hm = H.H;
            hm.name = "H";
            Matrix dm(1, H.diagH.size(), 0.0, "diagH");
            dm.elems = H.diagH;
            write_bundle(cal.out, {bundle.get("W"), gm, hm, dm}, bundle.meta);
            std::printf("wrote calibrated bundle '%s'\n", cal.out.c_str());
            return 0;
        }

        if (record_cmd->parsed()) {
            const detail::QuantizeIo io = detail::load_calibrated(rec.in);
            const KmeansConfig kcfg{rec.restarts, rec.seed, 100};
            const ErrorMatrix E = record_error_matrix(io.W, io.G, io.H, rec.bmin, rec.bmax, kcfg);
            detail::write_errors_bundle(rec.out, E, kcfg);
            std::printf("wrote error matrix '%s' (n=%zu bits %d..%d)\n", rec.out.c_str(),
                        E.n, E.b_min, E.b_max);
            return 0;
        }

        if (quantize_cmd->parsed()) {
            PipelineConfig cfg;
            try {
                cfg = detail::build_config(*quantize_cmd, qf);
                validate_config(detail::resolve_preset(cfg));
            } catch (const std::invalid_argument& e) {
                std::fprintf(stderr, "skim quantize: %s\n", e.what());
                return 2;
            }
            const detail::QuantizeIo io = detail::load_calibrated(qio.in);

            std::optional<ErrorMatrix> cached;
            if (!qio.errors.empty()) {
                if (std::filesystem::exists(qio.errors)) {
                    Bundle eb = read_bundle(qio.errors);
                    cached = detail::errors_from_bundle(eb);
                    if (eb.meta.count("seed") &&
                        std::stoull(eb.meta.at("seed")) != cfg.seed) {
                        throw std::runtime_error("cached error matrix was recorded with a "
                                                 "different seed");
                    }
                    if (eb.meta.count("restarts") &&
                        std::stoi(eb.meta.at("restarts")) != cfg.restarts) {
                        throw std::runtime_error("cached error matrix was recorded with "
                                                 "different restarts");
                    }
                } else if (cfg.mixed_precision || cfg.oracle) {
                    cached = record_error_matrix(io.W, io.G, io.H, cfg.b_min, cfg.b_max,
                                                 cfg.kmeans());
                    detail::write_errors_bundle(qio.errors, *cached, cfg.kmeans());
                }
            }

            auto [layer, report] =
                quantize_layer(io.W, io.G, io.H, cfg, cached ? &*cached : nullptr);
            save_packed(qio.out, pack(layer));
            const std::string report_path =
                qio.report.empty() ? qio.out + ".report.json" : qio.report;
            std::ofstream rf(report_path, std::ios::trunc);
            rf << detail::report_to_json(report).dump(2) << "\n";
            if (!rf) throw std::runtime_error("cannot write report '" + report_path + "'");

            if (qf.trace) {
                for (const auto& p : report.trace) {
                    std::printf("%d,%.17g,%.17g\n", p.step, p.loss, p.lr);
                }
            }
            std::printf("quantized %zux%zu at %.4g bits: loss %.6g -> %.6g, %.4g "
                        "effective bits, wrote '%s'\n",
                        report.n, report.m, report.target_bit, report.loss_alpha_one,
                        report.loss_final, report.size.effective_bits_per_weight,
                        qio.out.c_str());
            return 0;
        }

        if (dequantize_cmd->parsed()) {
            const QuantizedLayer layer = unpack(load_packed(dq.in));
            const Matrix wq = dequantize(layer);
            write_bundle(dq.out, {wq},
                         {{"b_min", std::to_string(layer.bits.b_min)},
                          {"b_max", std::to_string(layer.bits.b_max)}});
            std::printf("wrote dequantized weights '%s' (%zux%zu)\n", dq.out.c_str(),
                        wq.rows, wq.cols);
            return 0;
        }

        if (report_cmd->parsed()) {
            std::ifstream f(rp.in);
            if (!f) throw std::runtime_error("cannot open report '" + rp.in + "'");
            const json j = json::parse(f);
            if (rp.csv == "bits") {
                std::printf("bit,count\n");
                for (auto it = j.at("bit_histogram").begin(); it != j.at("bit_histogram").end();
                     ++it) {
                    std::printf("%s,%lld\n", it.key().c_str(),
                                it.value().get<long long>());
                }
                return 0;
            }
            if (rp.csv == "errors") {
                const auto& bits = j.at("row_bits");
                const auto& errs = j.at("row_errors");
                std::printf("row,bits,error\n");
                for (std::size_t i = 0; i < errs.size(); ++i) {
                    std::printf("%zu,%d,%.17g\n", i, bits[i].get<int>(),
                                errs[i].get<double>());
                }
                return 0;
            }
            std::printf("layer          %s\n", j.at("layer").get<std::string>().c_str());
            std::printf("shape          %llu x %llu\n",
                        j.at("n").get<unsigned long long>(),
                        j.at("m").get<unsigned long long>());
            std::printf("target bits    %.4g (avg allocated %.4g, effective %.4g)\n",
                        j.at("target_bit").get<double>(), j.at("avg_bits").get<double>(),
                        j.at("size").at("effective_bits_per_weight").get<double>());
            std::printf("loss           alpha=1 %.6g -> final %.6g (packed %.6g)\n",
                        j.at("loss_alpha_one").get<double>(),
                        j.at("loss_final").get<double>(),
                        j.at("loss_packed").get<double>());
            std::printf("bit histogram ");
            for (auto it = j.at("bit_histogram").begin(); it != j.at("bit_histogram").end();
                 ++it) {
                std::printf(" %s:%lld", it.key().c_str(), it.value().get<long long>());
            }
            std::printf("\n");
            if (!j.at("oracle").is_null()) {
                std::printf("oracle gap     greedy %.6g vs dp %.6g (rel %.3g)\n",
                            j.at("oracle").at("greedy_error").get<double>(),
                            j.at("oracle").at("dp_error").get<double>(),
                            j.at("oracle").at("rel_gap").get<double>());
            }
            std::printf("wall time      %.1f ms\n", j.at("wall_ms").get<double>());
            return 0;
        }

        if (oracle_cmd->parsed()) {
            return detail::run_oracle_check(oc.seed, oc.trials);
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "skim: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "skim: %s\n", e.what());
        return 1;
    }
    return 2;
}

inline int run_main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace skim::cli
