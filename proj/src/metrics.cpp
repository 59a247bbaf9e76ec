#include "specsim/metrics.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace specsim
{
    double mean_accepted_length(std::span<const double> xs)
    {
        if (xs.empty())
            throw std::invalid_argument("mean accepted length of an empty trace is undefined");
        return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    }

    double benefit_efficiency(double target_throughput, double draft_throughput, const PricingConfig &pricing)
    {
        double revenue = target_throughput * pricing.price_target;
        if (pricing.include_draft_revenue)
            revenue += draft_throughput * pricing.price_draft;
        const double gpus = static_cast<double>(pricing.gpus_target + pricing.gpus_draft);
        return revenue / 1e6 * 1000.0 / gpus;
    }

    ReportFormat parse_report_format(std::string_view s)
    {
        if (s == "csv")
            return ReportFormat::Csv;
        if (s == "json")
            return ReportFormat::Json;
        throw ConfigError("unknown report format '" + std::string(s) + "'");
    }

    namespace
    {
        std::string modes_to_string(const std::vector<Mode> &modes)
        {
            std::string out;
            out.reserve(modes.size());
            for (Mode m : modes)
                out += m == Mode::Ordinary ? 'O' : 'P';
            return out;
        }

        std::vector<Mode> modes_from_string(std::string_view s)
        {
            std::vector<Mode> out;
            out.reserve(s.size());
            for (char c : s)
                out.push_back(parse_mode(std::string_view(&c, 1)));
            return out;
        }

        std::string series_to_string(const std::vector<double> &xs)
        {
            std::string out;
            for (std::size_t i = 0; i < xs.size(); ++i)
            {
                if (i)
                    out += ';';
                out += format_double(xs[i]);
            }
            return out;
        }

        std::vector<double> series_from_string(std::string_view s)
        {
            std::vector<double> out;
            while (!s.empty())
            {
                auto semi = s.find(';');
                out.push_back(parse_double(s.substr(0, semi), "series"));
                if (semi == std::string_view::npos)
                    break;
                s.remove_prefix(semi + 1);
            }
            return out;
        }

        struct Column
        {
            std::string name;
            std::function<std::string(const MetricsReport &)> get;
            std::function<void(MetricsReport &, std::string_view)> set;
        };

        Column text_col(std::string name, std::string MetricsReport::*m)
        {
            return {name, [m](const MetricsReport &r) { return r.*m; },
                    [m](MetricsReport &r, std::string_view v) { r.*m = std::string(v); }};
        }

        Column u64_col(std::string name, std::uint64_t MetricsReport::*m)
        {
            return {name, [m](const MetricsReport &r) { return std::to_string(r.*m); },
                    [m, name](MetricsReport &r, std::string_view v) { r.*m = parse_u64(v, name); }};
        }

        Column dbl_col(std::string name, double MetricsReport::*m)
        {
            return {name, [m](const MetricsReport &r) { return format_double(r.*m); },
                    [m, name](MetricsReport &r, std::string_view v) { r.*m = parse_double(v, name); }};
        }

        const std::vector<Column> &columns()
        {
            static const std::vector<Column> cols = {
                text_col("variant", &MetricsReport::variant),
                text_col("axis", &MetricsReport::axis),
                text_col("point", &MetricsReport::point),
                u64_col("seed", &MetricsReport::seed),
                u64_col("replicate", &MetricsReport::replicate),
                dbl_col("duration", &MetricsReport::duration),
                u64_col("total_committed", &MetricsReport::total_committed),
                dbl_col("target_throughput", &MetricsReport::target_throughput),
                u64_col("draft_tokens", &MetricsReport::draft_tokens),
                dbl_col("draft_throughput", &MetricsReport::draft_throughput),
                dbl_col("mean_accepted_length", &MetricsReport::mean_accepted_length),
                dbl_col("speculative_accept_length", &MetricsReport::speculative_accept_length),
                dbl_col("fallback_fraction", &MetricsReport::fallback_fraction),
                dbl_col("mean_batch", &MetricsReport::mean_batch),
                dbl_col("mean_rollback_ratio", &MetricsReport::mean_rollback_ratio),
                u64_col("rounds", &MetricsReport::rounds),
                u64_col("requests_finished", &MetricsReport::requests_finished),
                u64_col("max_in_flight", &MetricsReport::max_in_flight),
                u64_col("messages_sent", &MetricsReport::messages_sent),
                u64_col("messages_delivered", &MetricsReport::messages_delivered),
                u64_col("messages_dropped", &MetricsReport::messages_dropped),
                u64_col("messages_stale", &MetricsReport::messages_stale),
                u64_col("messages_backpressured", &MetricsReport::messages_backpressured),
                u64_col("replies_dropped", &MetricsReport::replies_dropped),
                u64_col("timeouts", &MetricsReport::timeouts),
                u64_col("breaker_activations", &MetricsReport::breaker_activations),
                u64_col("conservative_rounds", &MetricsReport::conservative_rounds),
                Column{"lossless", [](const MetricsReport &r) { return std::string(r.lossless ? "1" : "0"); },
                       [](MetricsReport &r, std::string_view v) { r.lossless = v == "1"; }},
                u64_col("mismatches", &MetricsReport::mismatches),
                Column{"rollback_ratio_series", [](const MetricsReport &r) { return series_to_string(r.rollback_ratio_series); },
                       [](MetricsReport &r, std::string_view v) { r.rollback_ratio_series = series_from_string(v); }},
                Column{"mode_timeline", [](const MetricsReport &r) { return modes_to_string(r.mode_timeline); },
                       [](MetricsReport &r, std::string_view v) { r.mode_timeline = modes_from_string(v); }},
            };
            return cols;
        }

        std::vector<std::string_view> split_commas(std::string_view row)
        {
            std::vector<std::string_view> out;
            while (true)
            {
                auto comma = row.find(',');
                out.push_back(row.substr(0, comma));
                if (comma == std::string_view::npos)
                    break;
                row.remove_prefix(comma + 1);
            }
            return out;
        }

        void check_label(const std::string &s)
        {
            if (s.find_first_of(",\n\r") != std::string::npos)
                throw std::invalid_argument("report label '" + s + "' cannot be written to CSV");
        }
    } // namespace

    const std::vector<std::string> &csv_columns()
    {
        static const std::vector<std::string> names = [] {
            std::vector<std::string> n;
            for (const auto &c : columns())
                n.push_back(c.name);
            return n;
        }();
        return names;
    }

    std::string csv_header()
    {
        std::string out;
        for (const auto &name : csv_columns())
        {
            if (!out.empty())
                out += ',';
            out += name;
        }
        return out;
    }

    std::string to_csv_row(const MetricsReport &r)
    {
        check_label(r.variant);
        check_label(r.axis);
        check_label(r.point);
        std::string out;
        bool first = true;
        for (const auto &c : columns())
        {
            if (!first)
                out += ',';
            first = false;
            out += c.get(r);
        }
        return out;
    }

    MetricsReport from_csv_row(std::string_view row)
    {
        while (!row.empty() && (row.back() == '\n' || row.back() == '\r'))
            row.remove_suffix(1);
        const auto fields = split_commas(row);
        const auto &cols = columns();
        if (fields.size() != cols.size())
            throw std::invalid_argument("CSV row has " + std::to_string(fields.size()) + " fields, expected " +
                                        std::to_string(cols.size()));
        MetricsReport r;
        for (std::size_t i = 0; i < cols.size(); ++i)
            cols[i].set(r, fields[i]);
        return r;
    }

    std::string to_json(const MetricsReport &r)
    {
        nlohmann::ordered_json j;
        j["variant"] = r.variant;
        j["axis"] = r.axis;
        j["point"] = r.point;
        j["seed"] = r.seed;
        j["replicate"] = r.replicate;
        j["duration"] = r.duration;
        j["total_committed"] = r.total_committed;
        j["target_throughput"] = r.target_throughput;
        j["draft_tokens"] = r.draft_tokens;
        j["draft_throughput"] = r.draft_throughput;
        j["mean_accepted_length"] = r.mean_accepted_length;
        j["speculative_accept_length"] = r.speculative_accept_length;
        j["fallback_fraction"] = r.fallback_fraction;
        j["mean_batch"] = r.mean_batch;
        j["mean_rollback_ratio"] = r.mean_rollback_ratio;
        j["rounds"] = r.rounds;
        j["requests_finished"] = r.requests_finished;
        j["max_in_flight"] = r.max_in_flight;
        j["messages_sent"] = r.messages_sent;
        j["messages_delivered"] = r.messages_delivered;
        j["messages_dropped"] = r.messages_dropped;
        j["messages_stale"] = r.messages_stale;
        j["messages_backpressured"] = r.messages_backpressured;
        j["replies_dropped"] = r.replies_dropped;
        j["timeouts"] = r.timeouts;
        j["breaker_activations"] = r.breaker_activations;
        j["conservative_rounds"] = r.conservative_rounds;
        j["lossless"] = r.lossless;
        j["mismatches"] = r.mismatches;
        j["rollback_ratio_series"] = r.rollback_ratio_series;
        j["mode_timeline"] = modes_to_string(r.mode_timeline);
        return j.dump(2);
    }

    MetricsReport from_json(std::string_view text)
    {
        const auto j = nlohmann::json::parse(text);
        MetricsReport r;
        r.variant = j.at("variant").get<std::string>();
        r.axis = j.at("axis").get<std::string>();
        r.point = j.at("point").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.replicate = j.at("replicate").get<std::uint64_t>();
        r.duration = j.at("duration").get<double>();
        r.total_committed = j.at("total_committed").get<std::uint64_t>();
        r.target_throughput = j.at("target_throughput").get<double>();
        r.draft_tokens = j.at("draft_tokens").get<std::uint64_t>();
        r.draft_throughput = j.at("draft_throughput").get<double>();
        r.mean_accepted_length = j.at("mean_accepted_length").get<double>();
        r.speculative_accept_length = j.at("speculative_accept_length").get<double>();
        r.fallback_fraction = j.at("fallback_fraction").get<double>();
        r.mean_batch = j.at("mean_batch").get<double>();
        r.mean_rollback_ratio = j.at("mean_rollback_ratio").get<double>();
        r.rounds = j.at("rounds").get<std::uint64_t>();
        r.requests_finished = j.at("requests_finished").get<std::uint64_t>();
        r.max_in_flight = j.at("max_in_flight").get<std::uint64_t>();
        r.messages_sent = j.at("messages_sent").get<std::uint64_t>();
        r.messages_delivered = j.at("messages_delivered").get<std::uint64_t>();
        r.messages_dropped = j.at("messages_dropped").get<std::uint64_t>();
        r.messages_stale = j.at("messages_stale").get<std::uint64_t>();
        r.messages_backpressured = j.at("messages_backpressured").get<std::uint64_t>();
        r.replies_dropped = j.at("replies_dropped").get<std::uint64_t>();
        r.timeouts = j.at("timeouts").get<std::uint64_t>();
        r.breaker_activations = j.at("breaker_activations").get<std::uint64_t>();
        r.conservative_rounds = j.at("conservative_rounds").get<std::uint64_t>();
        r.lossless = j.at("lossless").get<bool>();
        r.mismatches = j.at("mismatches").get<std::uint64_t>();
        r.rollback_ratio_series = j.at("rollback_ratio_series").get<std::vector<double>>();
        r.mode_timeline = modes_from_string(j.at("mode_timeline").get<std::string>());
        return r;
    }

    std::string export_report(const MetricsReport &r, ReportFormat format)
    {
        if (format == ReportFormat::Json)
            return to_json(r) + "\n";
        return csv_header() + "\n" + to_csv_row(r) + "\n";
    }

    MetricsReport import_report(std::string_view text, ReportFormat format)
    {
        if (format == ReportFormat::Json)
            return from_json(text);
        auto nl = text.find('\n');
        if (nl == std::string_view::npos)
            throw std::invalid_argument("CSV report needs a header and a row");
        std::string_view header = text.substr(0, nl);
        if (!header.empty() && header.back() == '\r')
            header.remove_suffix(1);
        if (header != csv_header())
            throw std::invalid_argument("CSV header does not match the report schema");
        return from_csv_row(text.substr(nl + 1));
    }

    std::string report_file_stem(const MetricsReport &r)
    {
        return r.variant + "_" + r.axis + "_" + r.point + "_" + std::to_string(r.seed);
    }

    SampleSummary summarize(std::span<const double> xs)
    {
        SampleSummary s;
        s.n = xs.size();
        if (xs.empty())
            return s;
        s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
        if (xs.size() > 1)
        {
            double ss = 0.0;
            for (double x : xs)
                ss += (x - s.mean) * (x - s.mean);
            const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
            s.half_width = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
        }
        return s;
    }
} // namespace specsim
