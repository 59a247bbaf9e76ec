#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "specsim/analytics.hpp"
#include "specsim/sim.hpp"

#include <cmath>
#include <fstream>
#include <set>

using namespace specsim;

namespace
{
    Workload burst(std::size_t n, std::size_t output_len)
    {
        Workload w;
        for (std::size_t i = 0; i < n; ++i)
            w.items.push_back(WorkloadItem{0.0, 16, output_len, TrafficClass::Target});
        return w;
    }

    SimConfig deterministic(std::size_t batch, double alpha)
    {
        SimConfig c;
        c.batch_size = batch;
        c.num_requests = batch;
        c.alpha = alpha;
        c.delay_a = 0.0;
        c.delay_b = 0.0;
        return c;
    }

    double rel(double got, double want) { return std::abs(got - want) / want; }
} // namespace

TEST_CASE("poisson arrivals")
{
    SplitMix64 rng(1);
    CHECK(generate_arrivals(4.0, 0, rng).empty());
    const auto t = generate_arrivals(4.0, 100000, rng);
    REQUIRE(t.size() == 100000);
    CHECK(std::is_sorted(t.begin(), t.end()));
    CHECK(std::abs(t.back() / 100000 - 0.25) <= 0.003);
}

TEST_CASE("workload from config and from file")
{
    SimConfig c;
    c.num_requests = 10;
    c.background_qps = 2.0;
    c.background_requests = 5;
    const Workload w = make_workload(c);
    CHECK(w.items.size() == 15);
    const Workload again = make_workload(c);
    for (std::size_t i = 0; i < w.items.size(); ++i)
        CHECK(w.items[i].arrival == again.items[i].arrival);

    {
        std::ofstream f("arrivals.txt");
        f << "0\n0.5\n\n1.25\n";
    }
    const Workload file = load_arrival_file("arrivals.txt", c);
    REQUIRE(file.items.size() == 3);
    CHECK(file.items[2].arrival == 1.25);
    {
        std::ofstream f("arrivals_bad.txt");
        f << "1\n0.5\n";
    }
    CHECK_THROWS_AS(load_arrival_file("arrivals_bad.txt", c), ConfigError);
}

TEST_CASE("conservative regime check")
{
    CHECK(conservative_mode_check(4, 0.015, 0.050));
    CHECK(conservative_round_latency(4, 0.015, 0.050) == doctest::Approx(0.060));
    CHECK_FALSE(conservative_mode_check(4, 0.005, 0.050));
    CHECK(conservative_round_latency(4, 0.005, 0.050) == 0.050);
    CHECK_FALSE(conservative_mode_check(4, 0.0125, 0.050));
}

TEST_CASE("autoregressive baseline runs at batch over target latency")
{
    const SimConfig c = deterministic(32, 0.8);
    const MetricsReport r = run(c, PolicyVariant::AR, burst(32, 100));
    CHECK(rel(r.target_throughput, 32 / 0.05) <= 0.01);
    CHECK(r.mean_accepted_length == 1.0);
    CHECK(r.messages_sent == 0);
    CHECK(r.lossless);
}

TEST_CASE("ordinary mode with a perfect drafter matches the formula")
{
    const SimConfig c = deterministic(16, 1.0);
    const MetricsReport r = run(c, PolicyVariant::Ordinary, burst(16, 1024));
    ThroughputParams p{r.mean_batch, r.mean_accepted_length, 4.0, c.t_draft, c.t_target, 0.0};
    CHECK(rel(r.target_throughput, ordinary_throughput(p)) <= 0.02);
    CHECK(r.lossless);
}

TEST_CASE("parallel mode with about one fifth fallback matches the formula")
{
    SimConfig c = deterministic(32, 0.95);
    const MetricsReport r = run(c, PolicyVariant::Parallel, burst(32, 1024));
    CHECK(r.fallback_fraction > 0.1);
    CHECK(r.fallback_fraction < 0.3);
    ThroughputParams p{r.mean_batch, r.speculative_accept_length, 4.0, c.t_draft, c.t_target, r.fallback_fraction};
    CHECK(rel(r.target_throughput, parallel_throughput(p)) <= 0.05);
}

TEST_CASE("runs are deterministic and concurrency stays within the batch cap")
{
    SimConfig c;
    c.num_requests = 24;
    c.batch_size = 8;
    c.output_len = 200;
    c.reorder_prob = 0.1;
    c.drop_prob = 0.02;
    c.delay_kind = DelayKind::Exponential;
    c.delay_a = 0.002;
    for (PolicyVariant v : all_variants())
    {
        const RunResult a = run_detailed(c, v, make_workload(c));
        const RunResult b = run_detailed(c, v, make_workload(c));
        CHECK(a.report == b.report);
        CHECK(a.report.max_in_flight <= c.batch_size);
        CHECK(a.report.requests_finished == 24);
        CHECK(a.report.lossless);
        CHECK(a.transport_conserved);
        CHECK(a.clock_monotone);
        std::uint64_t committed = 0;
        for (const auto &f : a.finished)
            committed += f.committed.size();
        CHECK(committed == a.report.total_committed);
    }
}

TEST_CASE("every finished request equals the reference prefix under heavy faults")
{
    SimConfig c;
    c.num_requests = 16;
    c.batch_size = 8;
    c.output_len = 300;
    c.delay_kind = DelayKind::Exponential;
    c.delay_a = 0.03;
    c.reorder_prob = 0.2;
    c.drop_prob = 0.05;
    for (PolicyVariant v : {PolicyVariant::Ordinary, PolicyVariant::Parallel, PolicyVariant::Hybrid})
    {
        const RunResult r = run_detailed(c, v, make_workload(c));
        CHECK(r.report.mismatches == 0);
        CHECK(r.report.requests_finished == 16);
        CHECK(r.report.timeouts > 0);
        const TokenStreamOracle oracle(c.seed);
        for (const auto &f : r.finished)
            CHECK(f.committed == oracle.reference_slice(f.id, 0, c.output_len));
    }
}

TEST_CASE("draft outage trips the breaker and the run still completes")
{
    SimConfig c = deterministic(8, 0.8);
    c.draft_outage_start = 0.5;
    c.draft_outage_end = 1.5;
    const RunResult r = run_detailed(c, PolicyVariant::Hybrid, burst(8, 400));
    CHECK(r.report.breaker_activations >= 1);
    CHECK(r.report.lossless);
    bool disabled = false;
    for (const auto &round : r.target_rounds)
        disabled = disabled || round.breaker_disabled;
    CHECK(disabled);
}

TEST_CASE("slow drafter runs in the conservative regime")
{
    SimConfig c = deterministic(8, 0.8);
    c.t_draft = 0.015;
    const RunResult r = run_detailed(c, PolicyVariant::Parallel, burst(8, 200));
    CHECK(r.report.conservative_rounds > 0);
    CHECK(r.report.lossless);
    for (const auto &round : r.target_rounds)
        if (round.conservative)
            CHECK(round.end - round.dispatch >= 4 * 0.015 - 1e-9);
}

TEST_CASE("hybrid switches modes as agreement changes")
{
    const SimConfig c = deterministic(32, 0.9);
    const MetricsReport r = run(c, PolicyVariant::Hybrid, burst(32, 512));
    std::set<Mode> seen(r.mode_timeline.begin(), r.mode_timeline.end());
    CHECK(seen.size() == 2);
    CHECK(r.rollback_ratio_series.size() == r.rounds);
}

TEST_CASE("seed derivation")
{
    std::set<std::uint64_t> seeds;
    for (std::uint64_t p = 0; p < 20; ++p)
        for (std::uint64_t r = 0; r < 20; ++r)
            seeds.insert(derive_seed(42, p, r));
    CHECK(seeds.size() == 400);
    CHECK(derive_seed(42, 3, 4) == derive_seed(42, 3, 4));
}

TEST_CASE("sweeps")
{
    SimConfig c;
    c.num_requests = 8;
    c.batch_size = 8;
    c.output_len = 64;
    const std::vector<std::string> batches = {"1", "16", "32", "64", "128"};
    const auto reports = run_sweep(c, all_variants(), "batch_size", batches, 1, 4);
    CHECK(reports.size() == 5 * all_variants().size());
    for (PolicyVariant v : all_variants())
        CHECK(std::count_if(reports.begin(), reports.end(),
                            [&](const MetricsReport &r) { return r.variant == to_string(v); }) == 5);
    CHECK(run_sweep(c, all_variants(), "batch_size", {}, 1, 4).empty());

    // Thread count does not change results; variants share a seed per point.
    const auto serial = run_sweep(c, all_variants(), "batch_size", batches, 1, 1);
    CHECK(serial == reports);
    CHECK(reports[0].seed == reports[1].seed);

    SweepSpec spec{"alpha", {{"a", {{"alpha", "0.5"}}}, {"b", {{"alpha", "0.9"}}}}, {PolicyVariant::Hybrid}, 2, true};
    const auto common = run_sweep(c, spec, 2);
    REQUIRE(common.size() == 4);
    CHECK(common[0].seed == common[2].seed);
    CHECK(common[0].seed != common[1].seed);

    CHECK_THROWS_AS(run_sweep(c, all_variants(), "no_such_key", {"1"}, 1, 1), ConfigError);
}

TEST_CASE("variant names")
{
    for (PolicyVariant v : all_variants())
        CHECK(parse_variant(to_string(v)) == v);
    CHECK(parse_variant("hybrid") == PolicyVariant::Hybrid);
    CHECK_THROWS(parse_variant("fastest"));
}
