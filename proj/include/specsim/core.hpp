#pragma once

// Shared vocabulary for the speculative-decoding coordination harness:
// tokens, identifiers, speculative segments, execution modes and the
// simulation configuration with its flat key=value text form.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace specsim
{
    /// Opaque symbol. Only equality is meaningful.
    struct Token
    {
        std::uint64_t value = 0;

        friend constexpr bool operator==(Token a, Token b) noexcept { return a.value == b.value; }
    };

    /// Padding entry of a candidate sequence; never produced by any oracle.
    inline constexpr Token kPad{std::numeric_limits<std::uint64_t>::max()};

    using RequestId = std::uint64_t;
    using RoundId = std::uint64_t;

    /// Draft tokens proposed for consecutive output positions, 0-based.
    struct SpeculativeSegment
    {
        std::vector<Token> tokens;
        RoundId origin_round = 0;
        std::size_t start_position = 0;

        std::size_t size() const noexcept { return tokens.size(); }
        bool empty() const noexcept { return tokens.empty(); }
        std::size_t end_position() const noexcept { return start_position + tokens.size(); }

        friend bool operator==(const SpeculativeSegment &, const SpeculativeSegment &) = default;
    };

    enum class Mode : std::uint8_t
    {
        Ordinary,
        Parallel,
    };

    std::string_view to_string(Mode m) noexcept;
    Mode parse_mode(std::string_view s);

    enum class DelayKind : std::uint8_t
    {
        Constant,
        Uniform,
        Exponential,
    };

    std::string_view to_string(DelayKind k) noexcept;
    DelayKind parse_delay_kind(std::string_view s);

    class ConfigError : public std::runtime_error
    {
    public:
        explicit ConfigError(const std::string &what) : std::runtime_error(what) {}
    };

    struct SimConfig
    {
        // Batch size B; also the target's max-concurrency cap.
        std::size_t batch_size = 32;
        std::size_t gamma = 4;
        double t_target = 0.050;
        double t_draft = 0.005;
        double alpha = 0.8;
        double qps = 8.0;
        std::size_t num_requests = 64;
        std::size_t output_len = 1024;
        std::size_t prompt_len = 512;

        // Fairness period K of the draft scheduler.
        std::size_t fairness_period = 10;
        std::size_t draft_capacity = 256;
        // T_D^mix = t_draft_eff + slope * max(0, batch - reference_batch)
        double draft_latency_slope = 0.00002;
        std::size_t draft_reference_batch = 128;

        // Circuit breaker: C_max consecutive timeouts disable speculation for H rounds.
        std::size_t breaker_threshold = 3;
        std::size_t breaker_cooldown = 5;
        // 0 selects 2 * t_target.
        double reply_timeout = 0.0;

        // Prompt compression (retained ratio p).
        bool compression = false;
        double compression_ratio = 1.0;
        // alpha' = alpha * (1 - penalty * (1 - p)) while compression is on.
        double compression_penalty = 0.1;
        // Fraction of the draft step cost that does not shrink with context.
        double compression_latency_floor = 0.5;

        // Running accepted-length estimate for r*; 0 means estimate online.
        double ema_decay = 0.9;
        double accept_length = 0.0;
        // Relative growth of T_T per request beyond the first; 0 keeps T_T constant.
        double target_latency_slope = 0.0;

        // Transport fault injection.
        DelayKind delay_kind = DelayKind::Constant;
        double delay_a = 0.0005;
        double delay_b = 0.0005;
        double reorder_prob = 0.0;
        double reorder_extra = 0.002;
        double drop_prob = 0.0;
        std::size_t channel_capacity = 4096;
        // 0 selects the effective reply timeout.
        double stale_timeout = 0.0;
        double heartbeat_interval = 0.1;
        double heartbeat_expiry = 0.3;
        // Window of simulated time during which the draft server ignores queries.
        double draft_outage_start = 0.0;
        double draft_outage_end = 0.0;

        // Background (regular) tenant traffic on the draft server.
        double background_qps = 0.0;
        std::size_t background_requests = 64;
        std::size_t background_output_len = 256;

        double livelock_horizon = 60.0;
        std::uint64_t seed = 42;

        double effective_reply_timeout() const noexcept { return reply_timeout > 0.0 ? reply_timeout : 2.0 * t_target; }
        double effective_stale_timeout() const noexcept { return stale_timeout > 0.0 ? stale_timeout : effective_reply_timeout(); }
        double effective_alpha() const noexcept;
        double effective_t_draft() const noexcept;

        friend bool operator==(const SimConfig &, const SimConfig &) = default;
    };

    struct ConfigCheck
    {
        std::vector<std::string> errors;
        std::vector<std::string> warnings;

        bool ok() const noexcept { return errors.empty(); }
    };

    inline constexpr std::string_view kOverlapWarning = "overlap assumption violated";

    /// Names every violated invariant; warnings do not make a config invalid.
    ConfigCheck validate_config(const SimConfig &config);

    /// Returns the config unchanged or throws ConfigError listing all errors.
    SimConfig require_valid(const SimConfig &config);

    /// Sets one field from its textual key=value form.
    void apply_override(SimConfig &config, std::string_view key, std::string_view value);

    /// Key order used by serialization.
    const std::vector<std::string> &config_keys();

    std::string get_config_value(const SimConfig &config, std::string_view key);

    /// Flat key=value text, '#' comments, blank lines ignored.
    SimConfig parse_config_text(std::string_view text, SimConfig base = {});
    SimConfig load_config_file(const std::string &path, SimConfig base = {});
    std::string to_config_text(const SimConfig &config);

    /// Applies SPECSIM_<KEY> variables; the getter abstracts the environment for tests.
    void apply_env_overrides(SimConfig &config,
                             const std::function<std::optional<std::string>(const std::string &)> &getenv_fn);
    void apply_process_env_overrides(SimConfig &config);

    std::string format_double(double v);
    double parse_double(std::string_view s, std::string_view what);
    std::uint64_t parse_u64(std::string_view s, std::string_view what);

    /// Stateless 64-bit mixer used for keyed derivations.
    constexpr std::uint64_t mix64(std::uint64_t x) noexcept
    {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) noexcept { return mix64(a ^ mix64(b)); }

    /// Counter-based generator; satisfies UniformRandomBitGenerator.
    class SplitMix64
    {
    public:
        using result_type = std::uint64_t;

        constexpr explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

        static constexpr result_type min() noexcept { return 0; }
        static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

        constexpr result_type operator()() noexcept
        {
            std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            return z ^ (z >> 31);
        }

    private:
        std::uint64_t state_;
    };

    /// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
    template <class Urbg>
    double uniform01(Urbg &rng)
    {
        return static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }
} // namespace specsim
