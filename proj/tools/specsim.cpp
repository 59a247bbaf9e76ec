// specsim: formula tables, preset sweeps, acceptance checks and goldens.
#include "specsim/acceptance.hpp"
#include "specsim/analytics.hpp"
#include "specsim/core.hpp"
#include "specsim/metrics.hpp"
#include "specsim/oracle.hpp"
#include "specsim/presets.hpp"
#include "specsim/sim.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

namespace
{
    using namespace specsim;

    struct ConfigFlags
    {
        std::string config_file;
        std::vector<std::string> sets;
        std::optional<std::uint64_t> seed;
    };

    void add_config_flags(CLI::App *cmd, ConfigFlags &f)
    {
        cmd->add_option("--config", f.config_file, "Flat key = value config file");
        cmd->add_option("--set", f.sets, "Override one config key (key=value), repeatable");
        cmd->add_option("--seed", f.seed, "Base seed");
    }

    // defaults < preset base < config file < SPECSIM_* environment < flags
    SimConfig build_config(const ConfigFlags &f, SimConfig base)
    {
        SimConfig c = f.config_file.empty() ? base : load_config_file(f.config_file, base);
        apply_process_env_overrides(c);
        for (const auto &kv : f.sets)
        {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects key=value, got '" + kv + "'");
            apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (f.seed)
            c.seed = *f.seed;
        const ConfigCheck check = validate_config(c);
        for (const auto &w : check.warnings)
            std::cerr << "warning: " << w << "\n";
        require_valid(c);
        return c;
    }

    int cmd_model(const ConfigFlags &f, std::size_t grid)
    {
        const SimConfig c = build_config(f, {});
        ThroughputParams p;
        p.batch = static_cast<double>(c.batch_size);
        p.gamma = static_cast<double>(c.gamma);
        p.t_target = c.t_target;
        p.t_draft = c.effective_t_draft();
        p.accept_length =
            c.accept_length > 0 ? c.accept_length : expected_committed_per_round(c.alpha, c.gamma - 1);
        const double ord = ordinary_throughput(p);
        const double rs = critical_fallback_ratio(p);
        std::printf("B,L,gamma,t_target,t_draft,thr_ordinary,r_star");
        for (std::size_t i = 0; i <= grid; ++i)
            std::printf(",thr_parallel_r%s", format_double(double(i) / double(grid)).c_str());
        std::printf("\n%s,%s,%zu,%s,%s,%s,%s", format_double(p.batch).c_str(), format_double(p.accept_length).c_str(),
                    c.gamma, format_double(p.t_target).c_str(), format_double(p.t_draft).c_str(),
                    format_double(ord).c_str(), format_double(rs).c_str());
        for (std::size_t i = 0; i <= grid; ++i)
        {
            p.fallback_ratio = double(i) / double(grid);
            std::printf(",%s", format_double(parallel_throughput(p)).c_str());
        }
        std::printf("\n");
        return 0;
    }

    struct RunFlags
    {
        std::string preset;
        std::string out = "specsim-out";
        std::string format = "csv";
        std::optional<std::size_t> replicates;
        std::size_t jobs = 0;
        std::vector<std::string> variants;
        std::string trace;
    };

    void print_summary(const SweepSpec &spec, const std::vector<MetricsReport> &reports)
    {
        // point -> variant -> throughputs across replicates
        std::map<std::string, std::map<std::string, std::vector<double>>> thr;
        std::map<std::string, std::map<std::string, std::vector<double>>> len;
        for (const auto &r : reports)
        {
            thr[r.point][r.variant].push_back(r.target_throughput);
            len[r.point][r.variant].push_back(r.mean_accepted_length);
        }
        // Degradation against the first point only means something on a load axis.
        const bool load_axis = spec.axis == "background_qps";
        std::printf("%-14s %-9s %12s %10s %9s %10s%s\n", spec.axis.c_str(), "variant", "tok/s", "+-95%", "accept",
                    "speedup", load_axis ? "  degradation" : "");
        std::map<std::string, double> first;
        for (const auto &pt : spec.points)
        {
            const auto &by_variant = thr[pt.label];
            std::optional<double> ar;
            if (auto it = by_variant.find("AR"); it != by_variant.end())
                ar = summarize(it->second).mean;
            for (PolicyVariant v : spec.variants)
            {
                const std::string name(to_string(v));
                const auto it = by_variant.find(name);
                if (it == by_variant.end())
                    continue;
                const SampleSummary s = summarize(it->second);
                const SampleSummary l = summarize(len[pt.label][name]);
                first.try_emplace(name, s.mean);
                char speedup[32] = "-";
                if (ar && *ar > 0)
                    std::snprintf(speedup, sizeof speedup, "%.3fx", s.mean / *ar);
                std::printf("%-14s %-9s %12.2f %10.2f %9.3f %10s", pt.label.c_str(), name.c_str(), s.mean,
                            s.half_width, l.mean, speedup);
                if (load_axis)
                    std::printf(" %11.2f%%", 100.0 * (1.0 - s.mean / first[name]));
                std::printf("\n");
            }
        }
    }

    int cmd_run(const ConfigFlags &f, const RunFlags &rf)
    {
        SimConfig base;
        SweepSpec spec;
        if (!rf.preset.empty())
        {
            const ExperimentPreset &preset = find_preset(rf.preset);
            base = preset_config(preset);
            spec = preset.sweep;
        }
        else
        {
            spec.axis = "none";
            spec.points = {SweepPoint{"base", {}}};
            spec.variants = all_variants();
        }
        if (!rf.variants.empty())
        {
            spec.variants.clear();
            for (const auto &v : rf.variants)
                spec.variants.push_back(parse_variant(v));
        }
        if (rf.replicates)
            spec.replicates = *rf.replicates;
        const SimConfig config = build_config(f, base);
        const ReportFormat format = parse_report_format(rf.format);

        if (!rf.trace.empty())
        {
            // Single traced run of the first variant at the first point.
            SimConfig c = config;
            for (const auto &[k, v] : spec.points.front().overrides)
                apply_override(c, k, v);
            std::ofstream trace(rf.trace);
            RunOptions opts;
            opts.trace_sink = [&](std::string_view line) { trace << line << "\n"; };
            run_detailed(c, spec.variants.front(), make_workload(c), opts);
        }

        const auto reports = run_sweep(config, spec, rf.jobs);
        std::filesystem::create_directories(rf.out);
        const std::string ext = format == ReportFormat::Csv ? ".csv" : ".json";
        std::vector<std::string> failing;
        for (const auto &r : reports)
        {
            std::ofstream out(std::filesystem::path(rf.out) / (report_file_stem(r) + ext), std::ios::binary);
            out << export_report(r, format);
            if (!r.lossless || !out)
                failing.push_back(report_file_stem(r));
        }
        print_summary(spec, reports);
        std::printf("%zu reports written to %s\n", reports.size(), rf.out.c_str());
        for (const auto &name : failing)
            std::fprintf(stderr, "failed: %s\n", name.c_str());
        return failing.empty() ? 0 : 1;
    }

    int cmd_verify(const std::string &golden_dir, bool goldens_only, std::size_t jobs)
    {
        int failed = 0;
        for (const auto &g : verify_goldens(golden_dir))
        {
            std::printf("%s golden %s%s%s\n", std::string(to_string(g.status)).c_str(), g.name.c_str(),
                        g.detail.empty() ? "" : ": ", g.detail.c_str());
            failed += g.status == GoldenStatus::Pass ? 0 : 1;
        }
        std::fflush(stdout);
        if (!goldens_only)
        {
            AcceptanceOptions options;
            options.jobs = jobs;
            options.on_result = [&](const CriterionResult &r) {
                std::printf("%s criterion %d %s: %s\n", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str(),
                            r.detail.c_str());
                std::fflush(stdout);
                failed += r.passed ? 0 : 1;
            };
            run_acceptance(options);
        }
        return failed == 0 ? 0 : 1;
    }

    int cmd_oracle_dump(const ConfigFlags &f, RequestId request, std::size_t len)
    {
        const SimConfig c = build_config(f, {});
        const TokenStreamOracle oracle(c.seed);
        for (const Token &t : oracle.reference_slice(request, 0, len))
            std::printf("%llu\n", static_cast<unsigned long long>(t.value));
        return 0;
    }

    int cmd_presets()
    {
        for (const auto &p : presets())
        {
            std::printf("%-14s %s\n", p.name.c_str(), p.description.c_str());
            std::printf("%-14s axis %s:", "", p.sweep.axis.c_str());
            for (const auto &pt : p.sweep.points)
                std::printf(" %s", pt.label.c_str());
            std::printf(" | variants:");
            for (PolicyVariant v : p.sweep.variants)
                std::printf(" %s", std::string(to_string(v)).c_str());
            std::printf(" | replicates %zu\n", p.sweep.replicates);
        }
        return 0;
    }
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Speculative decoding coordination simulator.\n"
                 "Config precedence: defaults < preset < --config file < SPECSIM_<KEY> environment < --set/--seed."};
    app.require_subcommand(1);

    ConfigFlags model_flags, run_flags, dump_flags;
    std::size_t grid = 10;
    auto *model = app.add_subcommand("model", "Evaluate the throughput formulas as a one-row CSV");
    add_config_flags(model, model_flags);
    model->add_option("--grid", grid, "Number of fallback-ratio intervals on [0,1]")->check(CLI::PositiveNumber);

    RunFlags rf;
    auto *runc = app.add_subcommand("run", "Run a preset sweep or a single config, write reports, print a summary");
    add_config_flags(runc, run_flags);
    runc->add_option("--preset", rf.preset, "Preset name (see `presets`)");
    runc->add_option("--out", rf.out, "Report output directory");
    runc->add_option("--format", rf.format, "Report format")->check(CLI::IsMember({"csv", "json"}));
    runc->add_option("--replicates", rf.replicates, "Replicates per sweep point")->check(CLI::PositiveNumber);
    runc->add_option("--jobs", rf.jobs, "Worker threads (0 = all cores)");
    runc->add_option("--variant", rf.variants, "Restrict to variants: AR, ORDINARY, PARALLEL, HYBRID");
    runc->add_option("--trace", rf.trace, "Write an envelope/round trace of the first run to this file");

    std::string golden_dir;
    bool goldens_only = false;
    std::size_t verify_jobs = 0;
    auto *verify = app.add_subcommand("verify", "Check goldens and every acceptance criterion");
    verify->add_option("--golden", golden_dir, "Golden directory")->required();
    verify->add_flag("--goldens-only", goldens_only, "Skip the acceptance criteria");
    verify->add_option("--jobs", verify_jobs, "Worker threads (0 = all cores)");

    std::string golden_out;
    auto *golden = app.add_subcommand("golden", "Generate golden files");
    golden->add_option("--out", golden_out, "Output directory")->required();

    auto *oracle = app.add_subcommand("oracle", "Reference stream tools");
    oracle->require_subcommand(1);
    RequestId request = 0;
    std::size_t len = 16;
    auto *dump = oracle->add_subcommand("dump", "Print a request's reference prefix, one token per line");
    add_config_flags(dump, dump_flags);
    dump->add_option("--request", request, "Request id")->required();
    dump->add_option("--len", len, "Prefix length")->required();

    auto *list = app.add_subcommand("presets", "List shipped experiment presets");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (model->parsed())
            return cmd_model(model_flags, grid);
        if (runc->parsed())
            return cmd_run(run_flags, rf);
        if (verify->parsed())
            return cmd_verify(golden_dir, goldens_only, verify_jobs);
        if (golden->parsed())
        {
            write_goldens(golden_out);
            for (const auto &name : golden_files())
                std::printf("wrote %s\n", (std::filesystem::path(golden_out) / name).string().c_str());
            return 0;
        }
        if (dump->parsed())
            return cmd_oracle_dump(dump_flags, request, len);
        if (list->parsed())
            return cmd_presets();
    }
    catch (const std::exception &e)
    {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
