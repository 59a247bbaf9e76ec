#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "specsim/metrics.hpp"

#include <cmath>

using namespace specsim;

namespace
{
    MetricsReport sample()
    {
        MetricsReport r;
        r.variant = "HYBRID";
        r.axis = "alpha";
        r.point = "0.8";
        r.seed = 123456789;
        r.replicate = 2;
        r.duration = 12.345678901234567;
        r.total_committed = 65536;
        r.target_throughput = 1476.923076923077;
        r.draft_tokens = 99;
        r.draft_throughput = 0.1;
        r.mean_accepted_length = 3.3616;
        r.speculative_accept_length = 4.0;
        r.fallback_fraction = 0.2;
        r.mean_batch = 31.5;
        r.mean_rollback_ratio = 0.672;
        r.rounds = 77;
        r.requests_finished = 64;
        r.max_in_flight = 32;
        r.rollback_ratio_series = {0.0, 0.5, 1.0 / 3.0};
        r.mode_timeline = {Mode::Ordinary, Mode::Parallel, Mode::Parallel};
        r.messages_sent = 10;
        r.messages_delivered = 7;
        r.messages_dropped = 1;
        r.messages_stale = 1;
        r.messages_backpressured = 1;
        r.replies_dropped = 2;
        r.timeouts = 3;
        r.breaker_activations = 1;
        r.conservative_rounds = 4;
        r.lossless = false;
        r.mismatches = 5;
        return r;
    }
} // namespace

TEST_CASE("mean accepted length")
{
    const std::vector<double> same = {3, 3, 3};
    CHECK(mean_accepted_length(same) == 3.0);
    const std::vector<double> fallback(50, 1.0);
    CHECK(mean_accepted_length(fallback) == 1.0);
    CHECK_THROWS(mean_accepted_length(std::vector<double>{}));
}

TEST_CASE("benefit efficiency")
{
    PricingConfig p;
    CHECK(benefit_efficiency(2000, 500, p) == doctest::Approx(3.1125).epsilon(1e-12));
    p.include_draft_revenue = false;
    CHECK(benefit_efficiency(2000, 500, p) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(benefit_efficiency(0, 0, p) == 0.0);
}

TEST_CASE("csv round trip")
{
    const MetricsReport r = sample();
    const std::string row = to_csv_row(r);
    CHECK(from_csv_row(row) == r);
    CHECK(import_report(export_report(r, ReportFormat::Csv), ReportFormat::Csv) == r);
    const auto header = csv_header();
    CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
    CHECK(header.rfind("variant,", 0) == 0);
}

TEST_CASE("json round trip")
{
    const MetricsReport r = sample();
    CHECK(from_json(to_json(r)) == r);
    CHECK(import_report(export_report(r, ReportFormat::Json), ReportFormat::Json) == r);
    MetricsReport empty;
    CHECK(from_json(to_json(empty)) == empty);
    CHECK(from_csv_row(to_csv_row(empty)) == empty);
}

TEST_CASE("report format parsing and file naming")
{
    CHECK(parse_report_format("csv") == ReportFormat::Csv);
    CHECK(parse_report_format("json") == ReportFormat::Json);
    CHECK_THROWS(parse_report_format("xml"));
    CHECK(report_file_stem(sample()) == "HYBRID_alpha_0.8_123456789");
}

TEST_CASE("sample summary")
{
    const std::vector<double> xs = {1, 2, 3, 4, 5};
    const auto s = summarize(xs);
    CHECK(s.n == 5);
    CHECK(s.mean == 3.0);
    CHECK(s.half_width == doctest::Approx(1.96 * std::sqrt(2.5) / std::sqrt(5.0)));
    const std::vector<double> one = {7};
    CHECK(summarize(one).half_width == 0.0);
}
