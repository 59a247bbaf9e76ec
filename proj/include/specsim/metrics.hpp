#pragma once

// Run reports: throughput, accepted length, rollback series, mode timeline,
// transport counters; CSV/JSON export with lossless re-import; the
// benefit-per-GPU accounting.

#include "specsim/core.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace specsim
{
    struct MetricsReport
    {
        std::string variant;
        std::string axis;
        std::string point;
        std::uint64_t seed = 0;
        std::uint64_t replicate = 0;

        double duration = 0.0;
        std::uint64_t total_committed = 0;
        double target_throughput = 0.0;
        std::uint64_t draft_tokens = 0;
        double draft_throughput = 0.0;
        double mean_accepted_length = 0.0;      // over every request-round
        double speculative_accept_length = 0.0; // over REPAIRED and CACHED request-rounds
        double fallback_fraction = 0.0;         // PADDED/FALLBACK share of request-rounds with a bonus
        double mean_batch = 0.0;
        double mean_rollback_ratio = 0.0;
        std::uint64_t rounds = 0;
        std::uint64_t requests_finished = 0;
        std::uint64_t max_in_flight = 0;

        std::vector<double> rollback_ratio_series;
        std::vector<Mode> mode_timeline;

        std::uint64_t messages_sent = 0;
        std::uint64_t messages_delivered = 0;
        std::uint64_t messages_dropped = 0;
        std::uint64_t messages_stale = 0;
        std::uint64_t messages_backpressured = 0;
        std::uint64_t replies_dropped = 0;
        std::uint64_t timeouts = 0;
        std::uint64_t breaker_activations = 0;
        std::uint64_t conservative_rounds = 0;

        bool lossless = true;
        std::uint64_t mismatches = 0;

        friend bool operator==(const MetricsReport &, const MetricsReport &) = default;
    };

    /// Arithmetic mean; throws std::invalid_argument on an empty list.
    double mean_accepted_length(std::span<const double> per_round_commits);

    struct PricingConfig
    {
        double price_target = 3.0; // dollars per million tokens
        double price_draft = 0.45;
        std::uint64_t gpus_target = 1;
        std::uint64_t gpus_draft = 1;
        bool include_draft_revenue = true;
    };

    /// Dollars earned per 1000 seconds per GPU.
    double benefit_efficiency(double target_throughput, double draft_throughput, const PricingConfig &pricing);

    enum class ReportFormat : std::uint8_t
    {
        Csv,
        Json,
    };

    ReportFormat parse_report_format(std::string_view s);

    const std::vector<std::string> &csv_columns();
    std::string csv_header();
    std::string to_csv_row(const MetricsReport &r);
    MetricsReport from_csv_row(std::string_view row);

    std::string to_json(const MetricsReport &r);
    MetricsReport from_json(std::string_view text);

    /// Header plus one row, or a single JSON object.
    std::string export_report(const MetricsReport &r, ReportFormat format);
    MetricsReport import_report(std::string_view text, ReportFormat format);

    /// `{variant}_{axis}_{value}_{seed}`
    std::string report_file_stem(const MetricsReport &r);

    struct SampleSummary
    {
        double mean = 0.0;
        double half_width = 0.0; // 95% normal interval
        std::size_t n = 0;
    };

    SampleSummary summarize(std::span<const double> samples);
} // namespace specsim
