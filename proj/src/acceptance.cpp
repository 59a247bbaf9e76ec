#include "specsim/acceptance.hpp"

#include "specsim/analytics.hpp"
#include "specsim/draft_engine.hpp"
#include "specsim/metrics.hpp"
#include "specsim/oracle.hpp"
#include "specsim/presets.hpp"
#include "specsim/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace specsim
{
    namespace
    {
        std::string strf(const char *fmt, ...)
        {
            char buf[1024];
            va_list args;
            va_start(args, fmt);
            std::vsnprintf(buf, sizeof buf, fmt, args);
            va_end(args);
            return buf;
        }

        double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

        class Stopwatch
        {
        public:
            double seconds() const
            {
                return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
            }

        private:
            std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
        };

        CriterionResult finish(int id, std::string name, bool passed, std::string detail, const Stopwatch &sw)
        {
            return CriterionResult{id, std::move(name), passed, std::move(detail), sw.seconds()};
        }

        Workload all_at_zero(const SimConfig &c)
        {
            Workload w;
            for (std::size_t i = 0; i < c.num_requests; ++i)
                w.items.push_back(WorkloadItem{0.0, c.prompt_len, c.output_len, TrafficClass::Target});
            return w;
        }

        ThroughputParams params_from(const SimConfig &c, double batch, double l, double r = 0.0)
        {
            ThroughputParams p;
            p.batch = batch;
            p.accept_length = l;
            p.gamma = static_cast<double>(c.gamma);
            p.t_draft = c.effective_t_draft();
            p.t_target = c.t_target;
            p.fallback_ratio = r;
            return p;
        }
    } // namespace

    CriterionResult check_formula_fidelity()
    {
        Stopwatch sw;
        ThroughputParams p{32.0, 3.0, 4.0, 0.005, 0.050, 0.2};
        const double ord = ordinary_throughput(p);
        const double par = parallel_throughput(p);
        const double rs = critical_fallback_ratio(p);
        const double e1 = rel_err(ord, 96.0 / 0.065);
        const double e2 = rel_err(par, 32.0 * 2.6 / 0.05);
        const double e3 = rel_err(rs, 0.045 / 0.130);
        const double worst = std::max({e1, e2, e3});
        const bool ok = worst <= 1e-6 && sw.seconds() < 1.0;
        return finish(1, "formula fidelity", ok,
                      strf("Thr_ord=%.6f Thr_par=%.6f r*=%.8f max rel err %.2e (tol 1e-6)", ord, par, rs, worst), sw);
    }

    CriterionResult check_crossover_identity()
    {
        Stopwatch sw;
        SplitMix64 rng(20240601);
        auto uni = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
        double worst = 0.0;
        std::size_t flips_wrong = 0;
        const int draws = 1000;
        for (int i = 0; i < draws; ++i)
        {
            ThroughputParams p;
            p.gamma = static_cast<double>(2 + rng() % 7);
            p.batch = static_cast<double>(1 + rng() % 256);
            p.accept_length = uni(1.01, p.gamma + 1.0);
            p.t_target = uni(0.005, 0.2);
            p.t_draft = uni(0.0005, p.t_target / p.gamma);
            const double rs = critical_fallback_ratio(p);

            p.fallback_ratio = rs;
            worst = std::max(worst, rel_err(parallel_throughput(p), ordinary_throughput(p)));

            p.fallback_ratio = rs * (1.0 - 1e-6);
            const bool below = parallel_throughput(p) > ordinary_throughput(p);
            p.fallback_ratio = rs * (1.0 + 1e-6);
            const bool above = parallel_throughput(p) < ordinary_throughput(p);
            if (!below || !above)
                ++flips_wrong;
        }
        const bool ok = worst <= 1e-9 && flips_wrong == 0 && sw.seconds() < 5.0;
        return finish(2, "crossover identity", ok,
                      strf("%d draws, max rel gap at r* %.2e (tol 1e-9), sign flips wrong %zu", draws, worst, flips_wrong),
                      sw);
    }

    CriterionResult check_model_agreement(std::size_t)
    {
        Stopwatch sw;
        bool ok = true;
        std::string detail;
        const std::size_t batches[] = {1, 16, 32, 64, 128};

        auto base = [](std::size_t b, double alpha) {
            SimConfig c;
            c.batch_size = b;
            c.num_requests = b;
            c.alpha = alpha;
            c.delay_kind = DelayKind::Constant;
            c.delay_a = 0.0;
            c.delay_b = 0.0;
            c.output_len = 1024;
            c.seed = 7 + b;
            return c;
        };

        double worst_ord = 0.0;
        double worst_par = 0.0;
        for (std::size_t b : batches)
        {
            const SimConfig c = base(b, 1.0);
            const MetricsReport o = run(c, PolicyVariant::Ordinary, all_at_zero(c));
            const double model_o = ordinary_throughput(params_from(c, o.mean_batch, o.mean_accepted_length));
            const double eo = rel_err(o.target_throughput, model_o);
            worst_ord = std::max(worst_ord, eo);

            const MetricsReport p = run(c, PolicyVariant::Parallel, all_at_zero(c));
            const double model_p =
                parallel_throughput(params_from(c, p.mean_batch, p.speculative_accept_length, p.fallback_fraction));
            const double ep = rel_err(p.target_throughput, model_p);
            worst_par = std::max(worst_par, ep);

            ok = ok && eo <= 0.02 && ep <= 0.05;
            detail += strf("B=%zu ord %.1f/%.1f (%.2f%%) par %.1f/%.1f (%.2f%%); ", b, o.target_throughput, model_o,
                           100 * eo, p.target_throughput, model_p, 100 * ep);
        }

        // Imperfect drafting: fallback rounds appear and the measured ratio enters the formula.
        {
            const SimConfig c = base(32, 0.9);
            const MetricsReport p = run(c, PolicyVariant::Parallel, all_at_zero(c));
            const double model_p =
                parallel_throughput(params_from(c, p.mean_batch, p.speculative_accept_length, p.fallback_fraction));
            const double ep = rel_err(p.target_throughput, model_p);
            worst_par = std::max(worst_par, ep);
            ok = ok && ep <= 0.05;
            detail += strf("alpha=0.9 B=32 par r=%.3f L=%.3f %.1f/%.1f (%.2f%%); ", p.fallback_fraction,
                           p.speculative_accept_length, p.target_throughput, model_p, 100 * ep);
        }
        ok = ok && sw.seconds() < 120.0;
        detail = strf("worst ordinary %.2f%% (tol 2%%), worst parallel %.2f%% (tol 5%%) | ", 100 * worst_ord,
                      100 * worst_par) +
                 detail;
        return finish(3, "sim-model agreement", ok, detail, sw);
    }

    std::vector<CriterionResult> check_hybrid_sweep(std::size_t jobs)
    {
        Stopwatch sw;
        const std::vector<std::string> alphas = {"0.05", "0.15", "0.3", "0.45", "0.6",
                                                 "0.75", "0.85", "0.9",  "0.95", "0.99"};
        SimConfig c;
        c.batch_size = 32;
        c.num_requests = 64;
        c.seed = 1234;
        const std::size_t reps = 5;
        const std::vector<PolicyVariant> variants = {PolicyVariant::Ordinary, PolicyVariant::Parallel,
                                                     PolicyVariant::Hybrid};
        const auto reports = run_sweep(c, variants, "alpha", alphas, reps, jobs);

        // point -> variant -> (throughput sum, accepted length sum, rollback sum)
        struct Acc
        {
            double thr = 0, len = 0, rhat = 0;
        };
        std::map<std::string, std::map<std::string, Acc>> acc;
        for (const auto &r : reports)
        {
            auto &a = acc[r.point][r.variant];
            a.thr += r.target_throughput / reps;
            a.len += r.mean_accepted_length / reps;
            a.rhat += r.mean_rollback_ratio / reps;
        }

        bool dominance = true;
        bool ordering = true;
        bool strict = false;
        double worst_ratio = 1e9;
        double rmin = 1.0, rmax = 0.0;
        std::string d4, d5;
        for (const auto &a : alphas)
        {
            const Acc &o = acc[a]["ORDINARY"];
            const Acc &p = acc[a]["PARALLEL"];
            const Acc &h = acc[a]["HYBRID"];
            const double best = std::max(o.thr, p.thr);
            const double ratio = h.thr / best;
            worst_ratio = std::min(worst_ratio, ratio);
            dominance = dominance && ratio >= 0.97;
            rmin = std::min(rmin, h.rhat);
            rmax = std::max(rmax, h.rhat);
            d4 += strf("a=%s O=%.0f P=%.0f H=%.0f (%.3f) r=%.2f; ", a.c_str(), o.thr, p.thr, h.thr, ratio, h.rhat);

            const bool ord_ok = o.len >= h.len && h.len >= p.len;
            ordering = ordering && ord_ok;
            strict = strict || (o.len > h.len || h.len > p.len);
            d5 += strf("a=%s %.3f>=%.3f>=%.3f%s; ", a.c_str(), o.len, h.len, p.len, ord_ok ? "" : " VIOLATED");
        }
        const bool span = rmin <= 0.1 && rmax >= 0.9;
        const double secs = sw.seconds();
        CriterionResult c4{4, "hybrid dominance",
                           dominance && span && secs < 300.0,
                           strf("worst H/max(O,P)=%.4f (tol 0.97), hybrid r_hat span [%.3f, %.3f], %zu reps | ",
                                worst_ratio, rmin, rmax, reps) +
                               d4,
                           secs};
        CriterionResult c5{5, "accepted-length ordering", ordering && strict,
                           std::string(strict ? "strict somewhere" : "never strict") + " | " + d5, 0.0};
        return {c4, c5};
    }

    CriterionResult check_chaos_losslessness(std::size_t jobs)
    {
        Stopwatch sw;
        const ExperimentPreset &preset = find_preset("chaos");
        SimConfig c = preset_config(preset);
        c.seed = 99;
        const auto reports = run_sweep(c, preset.sweep, jobs);
        std::uint64_t mismatches = 0;
        std::size_t bad = 0;
        std::uint64_t drops = 0, stale = 0, timeouts = 0, trips = 0;
        std::string failures;
        for (const auto &r : reports)
        {
            mismatches += r.mismatches;
            drops += r.messages_dropped;
            stale += r.messages_stale;
            timeouts += r.timeouts;
            trips += r.breaker_activations;
            if (!r.lossless || r.requests_finished != c.num_requests)
            {
                ++bad;
                failures += r.variant + "/" + r.point + " ";
            }
        }
        const bool ok = bad == 0 && mismatches == 0 && sw.seconds() < 300.0;
        return finish(6, "losslessness under chaos", ok,
                      strf("%zu runs, mismatched tokens %llu, failing runs %zu; exercised: %llu dropped, %llu stale, "
                           "%llu timeouts, %llu breaker trips",
                           reports.size(), (unsigned long long)mismatches, bad, (unsigned long long)drops,
                           (unsigned long long)stale, (unsigned long long)timeouts, (unsigned long long)trips) +
                          (failures.empty() ? "" : " | " + failures),
                      sw);
    }

    CriterionResult check_scheduler_fairness()
    {
        Stopwatch sw;
        // Part 1: synthetic trace straight through the scheduler, capacity far below demand.
        std::deque<DraftQueueItem> spec, reg;
        FairnessCounter counter{0, 10};
        SplitMix64 rng(4242);
        std::size_t run = 0, worst = 0;
        const int rounds = 10000;
        for (int i = 0; i < rounds; ++i)
        {
            const int new_spec = static_cast<int>(rng() % 6);
            for (int k = 0; k < new_spec; ++k)
                spec.push_back(DraftQueueItem{QueueClass::Speculative, rng(), double(i), 4, std::nullopt});
            if (rng() % 3 == 0)
                reg.push_back(DraftQueueItem{QueueClass::Regular, rng(), double(i), 1, std::nullopt});
            const bool waiting = !reg.empty();
            const ScheduleResult s = schedule_round(spec, reg, counter, 4);
            if (waiting && s.regular == 0)
                worst = std::max(worst, ++run);
            else
                run = 0;
            if (spec.size() > 64)
                spec.erase(spec.begin(), spec.begin() + 32);
        }

        // Part 2: the full simulator with background tenants, inside the overlap regime.
        SimConfig c;
        c.background_qps = 8;
        c.background_requests = 256;
        c.seed = 31;
        const RunResult rr = run_detailed(c, PolicyVariant::Hybrid, make_workload(c));
        double worst_round = 0.0;
        for (const auto &d : rr.draft_rounds)
            if (d.speculative > 0)
                worst_round = std::max(worst_round, static_cast<double>(c.gamma) * d.step_latency);
        const bool regime = worst_round <= c.t_target;
        const bool deadlines = rr.report.timeouts == 0 && rr.report.conservative_rounds == 0;
        const bool ok = worst <= 10 && regime && deadlines && rr.draft.max_starved_run <= 10 && sw.seconds() < 30.0;
        return finish(7, "scheduler fairness", ok,
                      strf("%d-round trace: max consecutive starved rounds %zu (K=10); sim: max starved %zu, "
                           "gamma*T_D^mix max %.4fs <= T_T %.3fs, timeouts %llu, late prepared rounds %llu, "
                           "background tokens %llu",
                           rounds, worst, rr.draft.max_starved_run, worst_round, c.t_target,
                           (unsigned long long)rr.report.timeouts, (unsigned long long)rr.report.conservative_rounds,
                           (unsigned long long)rr.report.draft_tokens),
                      sw);
    }

    CriterionResult check_circuit_breaker()
    {
        Stopwatch sw;
        SimConfig c;
        c.batch_size = 16;
        c.num_requests = 16;
        c.output_len = 1024;
        c.draft_outage_start = 1.0;
        c.draft_outage_end = 3.0;
        c.seed = 5;
        const RunResult rr = run_detailed(c, PolicyVariant::Hybrid, all_at_zero(c));
        const auto &rounds = rr.target_rounds;

        std::size_t windows = 0;
        bool lengths_ok = true;
        bool preceded_ok = true;
        bool one_token_ok = true;
        double window_tokens = 0.0, window_time = 0.0, window_batch = 0.0;
        std::size_t window_rounds = 0;
        for (std::size_t i = 0; i < rounds.size();)
        {
            if (!rounds[i].breaker_disabled)
            {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < rounds.size() && rounds[j].breaker_disabled)
            {
                const auto &r = rounds[j];
                one_token_ok = one_token_ok && r.committed == r.batch && r.fallback == r.batch && r.queries == 0;
                window_tokens += static_cast<double>(r.committed);
                window_time += r.end - r.start;
                window_batch += static_cast<double>(r.batch);
                ++window_rounds;
                ++j;
            }
            ++windows;
            const bool truncated = j == rounds.size();
            if (truncated ? (j - i) > c.breaker_cooldown : (j - i) != c.breaker_cooldown)
                lengths_ok = false;

            // The last breaker_threshold rounds that issued queries must all have timed out.
            std::size_t seen = 0;
            for (std::size_t k = i; k-- > 0 && seen < c.breaker_threshold;)
            {
                if (rounds[k].queries == 0)
                    continue;
                ++seen;
                if (rounds[k].timeouts == 0)
                    preceded_ok = false;
            }
            if (seen < c.breaker_threshold)
                preceded_ok = false;
            i = j;
        }
        const double thr = window_time > 0 ? window_tokens / window_time : 0.0;
        const double expect = window_rounds ? (window_batch / window_rounds) / c.t_target : 0.0;
        const double err = expect > 0 ? rel_err(thr, expect) : 1.0;
        const bool ok = windows > 0 && lengths_ok && preceded_ok && one_token_ok && err <= 0.01 && rr.report.lossless &&
                        sw.seconds() < 30.0;
        return finish(8, "circuit breaker timing", ok,
                      strf("%zu disabled windows (H=%zu, C_max=%zu): lengths %s, preceded by timeouts %s, "
                           "1 token/request/round %s, window throughput %.1f vs B/T_T %.1f (%.3f%%)",
                           windows, c.breaker_cooldown, c.breaker_threshold, lengths_ok ? "ok" : "WRONG",
                           preceded_ok ? "ok" : "WRONG", one_token_ok ? "ok" : "WRONG", thr, expect, 100 * err),
                      sw);
    }

    CriterionResult check_compression_contract()
    {
        Stopwatch sw;
        SplitMix64 rng(77);
        std::size_t failures = 0;
        const int cases = 10000;
        for (int i = 0; i < cases; ++i)
        {
            const std::size_t s = rng() % 2001;
            const std::uint64_t k = rng() % 1001; // p = k / 1000
            const double p = static_cast<double>(k) / 1000.0;
            std::vector<Token> in(s);
            for (auto &t : in)
                t = Token{rng() >> 1};
            const auto out = compress_prompt(in, p);
            const std::size_t keep = static_cast<std::size_t>(k * s / 2000);
            const std::size_t want = std::min(s, 2 * keep);
            bool good = out.size() == want;
            if (good && 2 * keep < s)
            {
                good = std::equal(out.begin(), out.begin() + keep, in.begin()) &&
                       std::equal(out.begin() + keep, out.end(), in.end() - keep);
            }
            else if (good)
            {
                good = out == in;
            }
            // Subsequence check independent of the construction above.
            std::size_t j = 0;
            for (std::size_t x = 0; x < in.size() && j < out.size(); ++x)
                if (in[x] == out[j])
                    ++j;
            good = good && j == out.size();
            failures += good ? 0 : 1;
        }
        std::vector<Token> hundred(100);
        for (std::size_t i = 0; i < 100; ++i)
            hundred[i] = Token{i};
        const auto ten = compress_prompt(hundred, 0.1);
        const bool example = ten.size() == 10 && ten.front() == Token{0} && ten.back() == Token{99};
        const bool ok = failures == 0 && example && sw.seconds() < 5.0;
        return finish(9, "compression contract", ok,
                      strf("%d random cases, %zu failures; S=100 p=0.1 -> %zu tokens", cases, failures, ten.size()), sw);
    }

    CriterionResult check_mixed_traffic(std::size_t jobs)
    {
        Stopwatch sw;
        const ExperimentPreset &preset = find_preset("mixed-traffic");
        SimConfig c = preset_config(preset);
        c.seed = 2024;
        SweepSpec spec = preset.sweep;
        spec.variants = {PolicyVariant::Hybrid};
        spec.replicates = 5;
        const auto reports = run_sweep(c, spec, jobs);
        std::vector<double> thr(spec.points.size(), 0.0);
        std::vector<double> draft(spec.points.size(), 0.0);
        for (std::size_t i = 0; i < reports.size(); ++i)
        {
            const std::size_t point = i / spec.replicates;
            thr[point] += reports[i].target_throughput / static_cast<double>(spec.replicates);
            draft[point] += reports[i].draft_throughput / static_cast<double>(spec.replicates);
        }
        bool monotone = true;
        std::string detail;
        for (std::size_t i = 0; i < thr.size(); ++i)
        {
            if (i > 0 && thr[i] > thr[i - 1])
                monotone = false;
            detail += strf("bg=%s target %.2f draft %.1f; ", spec.points[i].label.c_str(), thr[i], draft[i]);
        }
        const double degradation = 1.0 - thr[1] / thr[0];
        const bool ok = monotone && degradation < 0.05 && sw.seconds() < 120.0;
        return finish(10, "mixed-traffic degradation", ok,
                      strf("monotone %s, degradation at lightest load %.3f%% (tol 5%%) | ", monotone ? "yes" : "NO",
                           100 * degradation) +
                          detail,
                      sw);
    }

    CriterionResult check_benefit_formula()
    {
        Stopwatch sw;
        PricingConfig with{3.0, 0.45, 1, 1, true};
        PricingConfig without = with;
        without.include_draft_revenue = false;
        const double a = benefit_efficiency(2000.0, 500.0, with);
        const double b = benefit_efficiency(2000.0, 500.0, without);
        const double z = benefit_efficiency(0.0, 0.0, with);
        const bool ok = rel_err(a, 3.1125) <= 1e-12 && rel_err(b, 3.0) <= 1e-12 && z == 0.0;
        return finish(11, "benefit formula", ok, strf("include draft %.10g (want 3.1125), exclude %.10g (want 3)", a, b),
                      sw);
    }

    std::vector<CriterionResult> run_acceptance(const AcceptanceOptions &options)
    {
        std::vector<CriterionResult> out;
        auto add = [&](CriterionResult r) {
            if (options.on_result)
                options.on_result(r);
            out.push_back(std::move(r));
        };
        add(check_formula_fidelity());
        add(check_crossover_identity());
        add(check_model_agreement(options.jobs));
        for (auto &r : check_hybrid_sweep(options.jobs))
            add(std::move(r));
        add(check_chaos_losslessness(options.jobs));
        add(check_scheduler_fairness());
        add(check_circuit_breaker());
        add(check_compression_contract());
        add(check_mixed_traffic(options.jobs));
        add(check_benefit_formula());
        return out;
    }

    std::string_view to_string(GoldenStatus s) noexcept
    {
        switch (s)
        {
        case GoldenStatus::Pass:
            return "PASS";
        case GoldenStatus::Fail:
            return "FAIL";
        case GoldenStatus::Missing:
            return "MISSING";
        }
        return "?";
    }

    namespace
    {
        constexpr std::uint64_t kGoldenSeed = 42;
        constexpr std::size_t kGoldenLength = 1024;
        constexpr RequestId kGoldenRequests[] = {0, 1, 7};
    } // namespace

    std::vector<std::string> golden_files()
    {
        std::vector<std::string> names;
        for (RequestId r : kGoldenRequests)
            names.push_back("oracle_seed" + std::to_string(kGoldenSeed) + "_request" + std::to_string(r) + ".txt");
        names.push_back("report_header.csv");
        return names;
    }

    std::string golden_content(const std::string &name)
    {
        if (name == "report_header.csv")
            return csv_header() + "\n";
        const TokenStreamOracle oracle(kGoldenSeed);
        for (RequestId r : kGoldenRequests)
        {
            if (name != "oracle_seed" + std::to_string(kGoldenSeed) + "_request" + std::to_string(r) + ".txt")
                continue;
            std::string out;
            for (const Token &t : oracle.reference_slice(r, 0, kGoldenLength))
                out += std::to_string(t.value) + "\n";
            return out;
        }
        throw std::invalid_argument("unknown golden file '" + name + "'");
    }

    void write_goldens(const std::string &dir)
    {
        std::filesystem::create_directories(dir);
        for (const auto &name : golden_files())
        {
            std::ofstream out(std::filesystem::path(dir) / name, std::ios::binary);
            if (!out)
                throw std::runtime_error("cannot write golden file in '" + dir + "'");
            out << golden_content(name);
        }
    }

    std::vector<GoldenCheck> verify_goldens(const std::string &dir)
    {
        std::vector<GoldenCheck> out;
        for (const auto &name : golden_files())
        {
            const auto path = std::filesystem::path(dir) / name;
            std::ifstream in(path, std::ios::binary);
            if (!in)
            {
                out.push_back(GoldenCheck{name, GoldenStatus::Missing, "not found: " + path.string()});
                continue;
            }
            std::stringstream ss;
            ss << in.rdbuf();
            const std::string have = ss.str();
            const std::string want = golden_content(name);
            if (have == want)
            {
                out.push_back(GoldenCheck{name, GoldenStatus::Pass, ""});
                continue;
            }
            std::size_t line = 1;
            const std::size_t n = std::min(have.size(), want.size());
            for (std::size_t i = 0; i < n && have[i] == want[i]; ++i)
                line += have[i] == '\n' ? 1 : 0;
            out.push_back(GoldenCheck{name, GoldenStatus::Fail, "first difference at line " + std::to_string(line)});
        }
        return out;
    }
} // namespace specsim
