#include "specsim/core.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace specsim
{
    std::string_view to_string(Mode m) noexcept
    {
        return m == Mode::Ordinary ? "ORDINARY" : "PARALLEL";
    }

    Mode parse_mode(std::string_view s)
    {
        if (s == "ORDINARY" || s == "O")
            return Mode::Ordinary;
        if (s == "PARALLEL" || s == "P")
            return Mode::Parallel;
        throw ConfigError("unknown mode '" + std::string(s) + "'");
    }

    std::string_view to_string(DelayKind k) noexcept
    {
        switch (k)
        {
        case DelayKind::Constant:
            return "constant";
        case DelayKind::Uniform:
            return "uniform";
        case DelayKind::Exponential:
            return "exponential";
        }
        return "constant";
    }

    DelayKind parse_delay_kind(std::string_view s)
    {
        if (s == "constant")
            return DelayKind::Constant;
        if (s == "uniform")
            return DelayKind::Uniform;
        if (s == "exponential")
            return DelayKind::Exponential;
        throw ConfigError("unknown delay distribution '" + std::string(s) + "'");
    }

    double SimConfig::effective_alpha() const noexcept
    {
        if (!compression)
            return alpha;
        return alpha * (1.0 - compression_penalty * (1.0 - compression_ratio));
    }

    double SimConfig::effective_t_draft() const noexcept
    {
        if (!compression)
            return t_draft;
        return t_draft * (compression_latency_floor + (1.0 - compression_latency_floor) * compression_ratio);
    }

    std::string format_double(double v)
    {
        std::array<char, 64> buf{};
        auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
        return std::string(buf.data(), res.ptr);
    }

    double parse_double(std::string_view s, std::string_view what)
    {
        std::string tmp(s);
        char *end = nullptr;
        errno = 0;
        double v = std::strtod(tmp.c_str(), &end);
        if (tmp.empty() || end != tmp.c_str() + tmp.size() || errno == ERANGE)
            throw ConfigError("invalid number for " + std::string(what) + ": '" + tmp + "'");
        return v;
    }

    std::uint64_t parse_u64(std::string_view s, std::string_view what)
    {
        std::uint64_t v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
            throw ConfigError("invalid integer for " + std::string(what) + ": '" + std::string(s) + "'");
        return v;
    }

    namespace
    {
        bool parse_bool(std::string_view s, std::string_view what)
        {
            if (s == "true" || s == "1" || s == "on" || s == "yes")
                return true;
            if (s == "false" || s == "0" || s == "off" || s == "no")
                return false;
            throw ConfigError("invalid boolean for " + std::string(what) + ": '" + std::string(s) + "'");
        }

        struct Field
        {
            std::string key;
            std::function<void(SimConfig &, std::string_view)> set;
            std::function<std::string(const SimConfig &)> get;
        };

        template <class T>
        Field size_field(std::string key, T SimConfig::*member)
        {
            return Field{
                key,
                [member, key](SimConfig &c, std::string_view v) { c.*member = static_cast<T>(parse_u64(v, key)); },
                [member](const SimConfig &c) { return std::to_string(c.*member); },
            };
        }

        Field double_field(std::string key, double SimConfig::*member)
        {
            return Field{
                key,
                [member, key](SimConfig &c, std::string_view v) { c.*member = parse_double(v, key); },
                [member](const SimConfig &c) { return format_double(c.*member); },
            };
        }

        const std::vector<Field> &fields()
        {
            static const std::vector<Field> table = [] {
                std::vector<Field> f;
                f.push_back(size_field("batch_size", &SimConfig::batch_size));
                f.push_back(size_field("gamma", &SimConfig::gamma));
                f.push_back(double_field("t_target", &SimConfig::t_target));
                f.push_back(double_field("t_draft", &SimConfig::t_draft));
                f.push_back(double_field("alpha", &SimConfig::alpha));
                f.push_back(double_field("qps", &SimConfig::qps));
                f.push_back(size_field("num_requests", &SimConfig::num_requests));
                f.push_back(size_field("output_len", &SimConfig::output_len));
                f.push_back(size_field("prompt_len", &SimConfig::prompt_len));
                f.push_back(size_field("fairness_period", &SimConfig::fairness_period));
                f.push_back(size_field("draft_capacity", &SimConfig::draft_capacity));
                f.push_back(double_field("draft_latency_slope", &SimConfig::draft_latency_slope));
                f.push_back(size_field("draft_reference_batch", &SimConfig::draft_reference_batch));
                f.push_back(size_field("breaker_threshold", &SimConfig::breaker_threshold));
                f.push_back(size_field("breaker_cooldown", &SimConfig::breaker_cooldown));
                f.push_back(double_field("reply_timeout", &SimConfig::reply_timeout));
                f.push_back(Field{
                    "compression",
                    [](SimConfig &c, std::string_view v) { c.compression = parse_bool(v, "compression"); },
                    [](const SimConfig &c) { return std::string(c.compression ? "true" : "false"); },
                });
                f.push_back(double_field("compression_ratio", &SimConfig::compression_ratio));
                f.push_back(double_field("compression_penalty", &SimConfig::compression_penalty));
                f.push_back(double_field("compression_latency_floor", &SimConfig::compression_latency_floor));
                f.push_back(double_field("ema_decay", &SimConfig::ema_decay));
                f.push_back(double_field("accept_length", &SimConfig::accept_length));
                f.push_back(double_field("target_latency_slope", &SimConfig::target_latency_slope));
                f.push_back(Field{
                    "delay_kind",
                    [](SimConfig &c, std::string_view v) { c.delay_kind = parse_delay_kind(v); },
                    [](const SimConfig &c) { return std::string(to_string(c.delay_kind)); },
                });
                f.push_back(double_field("delay_a", &SimConfig::delay_a));
                f.push_back(double_field("delay_b", &SimConfig::delay_b));
                f.push_back(double_field("reorder_prob", &SimConfig::reorder_prob));
                f.push_back(double_field("reorder_extra", &SimConfig::reorder_extra));
                f.push_back(double_field("drop_prob", &SimConfig::drop_prob));
                f.push_back(size_field("channel_capacity", &SimConfig::channel_capacity));
                f.push_back(double_field("stale_timeout", &SimConfig::stale_timeout));
                f.push_back(double_field("heartbeat_interval", &SimConfig::heartbeat_interval));
                f.push_back(double_field("heartbeat_expiry", &SimConfig::heartbeat_expiry));
                f.push_back(double_field("draft_outage_start", &SimConfig::draft_outage_start));
                f.push_back(double_field("draft_outage_end", &SimConfig::draft_outage_end));
                f.push_back(double_field("background_qps", &SimConfig::background_qps));
                f.push_back(size_field("background_requests", &SimConfig::background_requests));
                f.push_back(size_field("background_output_len", &SimConfig::background_output_len));
                f.push_back(double_field("livelock_horizon", &SimConfig::livelock_horizon));
                f.push_back(size_field("seed", &SimConfig::seed));
                return f;
            }();
            return table;
        }

        const Field &find_field(std::string_view key)
        {
            for (const auto &f : fields())
                if (f.key == key)
                    return f;
            throw ConfigError("unknown config key '" + std::string(key) + "'");
        }

        std::string_view trim(std::string_view s)
        {
            while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
                s.remove_prefix(1);
            while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
                s.remove_suffix(1);
            return s;
        }

        bool in_unit(double p) { return p >= 0.0 && p <= 1.0; }
    } // namespace

    ConfigCheck validate_config(const SimConfig &c)
    {
        ConfigCheck out;
        auto err = [&](std::string s) { out.errors.push_back(std::move(s)); };

        if (c.batch_size == 0)
            err("batch_size (B) must be >= 1");
        if (c.gamma == 0)
            err("gamma must be >= 1");
        if (!(c.t_target > 0.0))
            err("t_target must be > 0");
        if (!(c.t_draft > 0.0))
            err("t_draft must be > 0");
        if (!(c.qps > 0.0))
            err("qps must be > 0");
        if (c.output_len == 0)
            err("output_len must be >= 1");
        if (c.fairness_period == 0)
            err("fairness_period (K) must be >= 1");
        if (c.draft_capacity == 0)
            err("draft_capacity must be >= 1");
        if (c.breaker_threshold == 0)
            err("breaker_threshold (C_max) must be >= 1");
        if (c.channel_capacity == 0)
            err("channel_capacity must be >= 1");
        if (c.reply_timeout < 0.0)
            err("reply_timeout must be >= 0");
        if (c.stale_timeout < 0.0)
            err("stale_timeout must be >= 0");
        if (!(c.heartbeat_interval > 0.0))
            err("heartbeat_interval must be > 0");
        if (!(c.heartbeat_expiry > 0.0))
            err("heartbeat_expiry must be > 0");
        if (c.draft_latency_slope < 0.0)
            err("draft_latency_slope must be >= 0");
        if (c.target_latency_slope < 0.0)
            err("target_latency_slope must be >= 0");
        if (c.background_qps < 0.0)
            err("background_qps must be >= 0");
        if (!(c.livelock_horizon > 0.0))
            err("livelock_horizon must be > 0");
        if (c.accept_length != 0.0 && c.accept_length < 1.0)
            err("accept_length must be >= 1 (or 0 to estimate online)");
        if (c.delay_a < 0.0 || c.delay_b < 0.0 || c.reorder_extra < 0.0)
            err("transport delays must be >= 0");
        if (c.delay_kind == DelayKind::Uniform && c.delay_b < c.delay_a)
            err("uniform delay requires delay_b >= delay_a");

        const std::pair<const char *, double> probs[] = {
            {"alpha", c.alpha},
            {"reorder_prob", c.reorder_prob},
            {"drop_prob", c.drop_prob},
            {"compression_ratio", c.compression_ratio},
            {"compression_penalty", c.compression_penalty},
            {"compression_latency_floor", c.compression_latency_floor},
            {"ema_decay", c.ema_decay},
        };
        for (const auto &[name, p] : probs)
            if (!in_unit(p))
                err(std::string(name) + " must lie in [0,1]");

        if (c.gamma > 0 && c.t_draft > 0.0 && c.t_target > 0.0 &&
            !(static_cast<double>(c.gamma) * c.t_draft < c.t_target))
            out.warnings.emplace_back(kOverlapWarning);
        return out;
    }

    SimConfig require_valid(const SimConfig &config)
    {
        auto check = validate_config(config);
        if (!check.ok())
        {
            std::string msg = "invalid config:";
            for (const auto &e : check.errors)
                msg += "\n  - " + e;
            throw ConfigError(msg);
        }
        return config;
    }

    void apply_override(SimConfig &config, std::string_view key, std::string_view value)
    {
        find_field(trim(key)).set(config, trim(value));
    }

    const std::vector<std::string> &config_keys()
    {
        static const std::vector<std::string> keys = [] {
            std::vector<std::string> k;
            for (const auto &f : fields())
                k.push_back(f.key);
            return k;
        }();
        return keys;
    }

    std::string get_config_value(const SimConfig &config, std::string_view key)
    {
        return find_field(key).get(config);
    }

    SimConfig parse_config_text(std::string_view text, SimConfig base)
    {
        std::size_t line_no = 0;
        while (!text.empty())
        {
            ++line_no;
            auto nl = text.find('\n');
            std::string_view line = text.substr(0, nl);
            text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

            if (auto hash = line.find('#'); hash != std::string_view::npos)
                line = line.substr(0, hash);
            line = trim(line);
            if (line.empty())
                continue;
            auto eq = line.find('=');
            if (eq == std::string_view::npos)
                throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
            apply_override(base, line.substr(0, eq), line.substr(eq + 1));
        }
        return base;
    }

    SimConfig load_config_file(const std::string &path, SimConfig base)
    {
        std::ifstream in(path);
        if (!in)
            throw ConfigError("cannot open config file '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_config_text(ss.str(), std::move(base));
    }

    std::string to_config_text(const SimConfig &config)
    {
        std::string out;
        for (const auto &f : fields())
            out += f.key + " = " + f.get(config) + "\n";
        return out;
    }

    void apply_env_overrides(SimConfig &config,
                             const std::function<std::optional<std::string>(const std::string &)> &getenv_fn)
    {
        for (const auto &f : fields())
        {
            std::string var = "SPECSIM_";
            for (char ch : f.key)
                var += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            if (auto v = getenv_fn(var))
                f.set(config, trim(*v));
        }
    }

    void apply_process_env_overrides(SimConfig &config)
    {
        apply_env_overrides(config, [](const std::string &name) -> std::optional<std::string> {
            if (const char *v = std::getenv(name.c_str()))
                return std::string(v);
            return std::nullopt;
        });
    }
} // namespace specsim
