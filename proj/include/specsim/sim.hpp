#pragma once

// Deterministic discrete-event engine binding target, draft and transport:
// virtual clock, (time, seq)-ordered events, Poisson workload, the four
// policy variants, and sweeps over matched seeds.

#include "specsim/core.hpp"
#include "specsim/draft_engine.hpp"
#include "specsim/metrics.hpp"
#include "specsim/target_engine.hpp"
#include "specsim/transport.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace specsim
{
    enum class PolicyVariant : std::uint8_t
    {
        AR,
        Ordinary,
        Parallel,
        Hybrid,
    };

    std::string_view to_string(PolicyVariant v) noexcept;
    PolicyVariant parse_variant(std::string_view s);
    const std::vector<PolicyVariant> &all_variants();

    /// ORDINARY: threshold pinned below zero and no prepare-ahead, so every
    /// continuing request is repaired before verification. PARALLEL: threshold
    /// pinned at +inf. AR: no draft interaction at all.
    TargetPolicy policy_for(PolicyVariant v);

    class SimulationError : public std::runtime_error
    {
    public:
        explicit SimulationError(const std::string &what) : std::runtime_error(what) {}
    };

    enum class TrafficClass : std::uint8_t
    {
        Target,
        DraftBackground,
    };

    struct WorkloadItem
    {
        double arrival = 0.0;
        std::size_t prompt_len = 0;
        std::size_t output_len = 0;
        TrafficClass cls = TrafficClass::Target;
    };

    struct Workload
    {
        std::vector<WorkloadItem> items; // sorted by arrival within each class
    };

    /// n arrival times with i.i.d. exponential gaps of mean 1/qps, starting at the first gap.
    std::vector<double> generate_arrivals(double qps, std::size_t n, SplitMix64 &rng);

    /// Target traffic from (qps, num_requests) plus background draft traffic
    /// from (background_qps, background_requests), seeded from config.seed.
    Workload make_workload(const SimConfig &config);

    /// Target traffic at explicit times, one float per line.
    Workload load_arrival_file(const std::string &path, const SimConfig &config);

    /// True iff gamma * t_d_mix > t_t, i.e. the draft cannot hide behind verification.
    bool conservative_mode_check(std::size_t gamma, double t_d_mix, double t_t) noexcept;

    /// Effective round latency: max(t_t, gamma * t_d_mix) under the check above.
    double conservative_round_latency(std::size_t gamma, double t_d_mix, double t_t) noexcept;

    enum class EventKind : std::uint8_t
    {
        Arrival,
        BackgroundArrival,
        TargetTimer,
        DraftRoundDone,
        DraftKick,
        Delivery,
        Heartbeat,
        RequestDone,
    };

    struct SimEvent
    {
        double at = 0.0;
        std::uint64_t seq = 0;
        EventKind kind = EventKind::Arrival;
        std::uint64_t subject = 0;
        std::uint64_t token = 0;
        int aux = 0;
    };

    struct RunOptions
    {
        /// Receives one JSON line per envelope lifecycle step and per target round.
        std::function<void(std::string_view)> trace_sink;
    };

    struct FinishedRequest
    {
        RequestId id = 0;
        double arrival = 0.0;
        double finished = 0.0;
        std::vector<Token> committed;
    };

    struct RunResult
    {
        MetricsReport report;
        std::vector<TargetRoundRecord> target_rounds;
        std::vector<DraftRoundRecord> draft_rounds;
        std::vector<FinishedRequest> finished;
        ChannelCounters to_draft;
        ChannelCounters to_target;
        bool transport_conserved = true;
        bool clock_monotone = true;
        DraftStats draft;
        TargetCounters target;
        std::uint64_t events = 0;
    };

    RunResult run_detailed(const SimConfig &config, PolicyVariant variant, const Workload &workload,
                           const RunOptions &options = {});

    MetricsReport run(const SimConfig &config, PolicyVariant variant, const Workload &workload);

    /// Convenience: generated workload from the config.
    MetricsReport run(const SimConfig &config, PolicyVariant variant);

    std::uint64_t derive_seed(std::uint64_t base, std::uint64_t point, std::uint64_t replicate) noexcept;

    using Overrides = std::vector<std::pair<std::string, std::string>>;

    struct SweepPoint
    {
        std::string label;
        Overrides overrides;
    };

    struct SweepSpec
    {
        std::string axis;
        std::vector<SweepPoint> points;
        std::vector<PolicyVariant> variants;
        std::size_t replicates = 1;
        /// Reuse the same seed per replicate at every point, so points differ
        /// only by their overrides (common random numbers for load sweeps).
        bool common_seeds = false;
    };

    /// One report per (point, replicate, variant) in that nesting order. Seeds
    /// depend on point and replicate only, so variants see matched workloads.
    /// jobs = 0 picks the hardware concurrency.
    std::vector<MetricsReport> run_sweep(const SimConfig &base, const SweepSpec &spec, std::size_t jobs = 0);

    /// Sweep along a single config key.
    std::vector<MetricsReport> run_sweep(const SimConfig &base, const std::vector<PolicyVariant> &variants,
                                         const std::string &axis_key, const std::vector<std::string> &values,
                                         std::size_t replicates = 1, std::size_t jobs = 0);

    std::string round_trace_line(const TargetRoundRecord &r);
} // namespace specsim
