#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "specsim/presets.hpp"

#include <set>

using namespace specsim;

TEST_CASE("shipped presets")
{
    std::set<std::string> names;
    for (const auto &p : presets())
        names.insert(p.name);
    CHECK(names == std::set<std::string>{"crossover", "batch-scaling", "mixed-traffic", "tp-imbalance", "chaos"});
    CHECK_THROWS_AS(find_preset("nope"), ConfigError);
}

TEST_CASE("every preset point yields a valid config")
{
    for (const auto &p : presets())
    {
        CHECK_FALSE(p.description.empty());
        CHECK_FALSE(p.sweep.points.empty());
        CHECK_FALSE(p.sweep.variants.empty());
        const SimConfig base = preset_config(p);
        for (const auto &pt : p.sweep.points)
        {
            SimConfig c = base;
            for (const auto &[k, v] : pt.overrides)
                apply_override(c, k, v);
            CHECK_MESSAGE(validate_config(c).ok(), p.name << "/" << pt.label);
        }
    }
}

TEST_CASE("preset shapes")
{
    const auto &cross = find_preset("crossover");
    CHECK(cross.sweep.variants.size() == 4);
    CHECK(cross.sweep.points.size() >= 9);

    std::set<std::string> b;
    for (const auto &pt : find_preset("batch-scaling").sweep.points)
        b.insert(pt.label);
    CHECK(b == std::set<std::string>{"1", "16", "32", "64", "128"});

    const auto &mixed = find_preset("mixed-traffic");
    CHECK(mixed.sweep.common_seeds);
    CHECK(mixed.sweep.points.front().label == "0");

    const SimConfig tp = preset_config(find_preset("tp-imbalance"));
    CHECK(tp.t_target == doctest::Approx(SimConfig{}.t_target / 4));

    const auto &chaos = find_preset("chaos");
    CHECK(chaos.sweep.points.size() == 12);
    CHECK(chaos.sweep.variants.size() == 3);
}

TEST_CASE("preset plus seed is self-describing")
{
    const auto &p = find_preset("crossover");
    SimConfig a = preset_config(p);
    SimConfig b = preset_config(p);
    a.seed = b.seed = 9;
    CHECK(a == b);
    // Base values override defaults but leave the caller's base otherwise untouched.
    SimConfig mine;
    mine.seed = 77;
    CHECK(preset_config(p, mine).seed == 77);
}
