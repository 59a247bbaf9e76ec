#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "specsim/core.hpp"

#include <algorithm>
#include <map>

using namespace specsim;

namespace
{
    bool mentions(const std::vector<std::string> &msgs, std::string_view needle)
    {
        return std::any_of(msgs.begin(), msgs.end(), [&](const std::string &m) { return m.find(needle) != std::string::npos; });
    }
} // namespace

TEST_CASE("default config is valid and inside the overlap regime")
{
    const ConfigCheck c = validate_config(SimConfig{});
    CHECK(c.ok());
    CHECK(c.warnings.empty());
}

TEST_CASE("slow drafter triggers the overlap warning but stays valid")
{
    SimConfig cfg;
    cfg.t_draft = 0.015;
    const ConfigCheck c = validate_config(cfg);
    CHECK(c.ok());
    REQUIRE(c.warnings.size() == 1);
    CHECK(mentions(c.warnings, kOverlapWarning));
}

TEST_CASE("gamma zero is rejected by name")
{
    SimConfig cfg;
    cfg.gamma = 0;
    const ConfigCheck c = validate_config(cfg);
    CHECK_FALSE(c.ok());
    CHECK(mentions(c.errors, "gamma"));
    CHECK_THROWS_AS(require_valid(cfg), ConfigError);
}

TEST_CASE("every violated invariant is listed")
{
    SimConfig cfg;
    cfg.batch_size = 0;
    cfg.drop_prob = 1.5;
    cfg.alpha = -0.1;
    const ConfigCheck c = validate_config(cfg);
    CHECK(c.errors.size() >= 3);
    CHECK(mentions(c.errors, "batch_size"));
    CHECK(mentions(c.errors, "drop_prob"));
    CHECK(mentions(c.errors, "alpha"));
}

TEST_CASE("config text round-trips through every key")
{
    SimConfig cfg;
    cfg.alpha = 0.37;
    cfg.gamma = 6;
    cfg.delay_kind = DelayKind::Exponential;
    cfg.compression = true;
    cfg.seed = 123456789012345ULL;
    cfg.t_target = 0.1 / 3.0;
    const SimConfig back = parse_config_text(to_config_text(cfg));
    CHECK(back == cfg);
    for (const auto &key : config_keys())
        CHECK(get_config_value(back, key) == get_config_value(cfg, key));
}

TEST_CASE("config text accepts comments and blank lines, rejects junk")
{
    const SimConfig c = parse_config_text("# header\n\nbatch_size = 8  # trailing\n gamma=3\n");
    CHECK(c.batch_size == 8);
    CHECK(c.gamma == 3);
    CHECK_THROWS_AS(parse_config_text("no_such_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("batch_size 8\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("batch_size = eight\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("batch_size = -1\n"), ConfigError);
}

TEST_CASE("environment overrides use the SPECSIM_ prefix")
{
    const std::map<std::string, std::string> env = {{"SPECSIM_ALPHA", "0.5"}, {"SPECSIM_BATCH_SIZE", "4"}};
    SimConfig c;
    apply_env_overrides(c, [&](const std::string &k) -> std::optional<std::string> {
        auto it = env.find(k);
        if (it == env.end())
            return std::nullopt;
        return it->second;
    });
    CHECK(c.alpha == 0.5);
    CHECK(c.batch_size == 4);
    CHECK(c.gamma == SimConfig{}.gamma);
}

TEST_CASE("format_double is exact for round trips")
{
    for (double v : {0.0, 1.0, 0.1, 1476.923076923077, 1e-300, 0.1 + 0.2})
        CHECK(parse_double(format_double(v), "v") == v);
}

TEST_CASE("SplitMix64 is deterministic and uniform01 stays in [0,1)")
{
    SplitMix64 a(7), b(7);
    double sum = 0;
    for (int i = 0; i < 100000; ++i)
    {
        REQUIRE(a() == b());
        const double u = uniform01(a);
        b();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / 100000 == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("mode and delay names parse back")
{
    CHECK(parse_mode(to_string(Mode::Ordinary)) == Mode::Ordinary);
    CHECK(parse_mode(to_string(Mode::Parallel)) == Mode::Parallel);
    for (DelayKind k : {DelayKind::Constant, DelayKind::Uniform, DelayKind::Exponential})
        CHECK(parse_delay_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_mode("sideways"), ConfigError);
}
