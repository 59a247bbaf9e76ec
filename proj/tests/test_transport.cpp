#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "specsim/transport.hpp"

#include <json.hpp>

using namespace specsim;

namespace
{
    ChannelConfig quiet(double delay = 0.001)
    {
        ChannelConfig c;
        c.delay = DelayModel{DelayKind::Constant, delay, delay};
        c.stale_timeout = 10.0;
        return c;
    }

    Envelope query(RequestId r, RoundId round = 1)
    {
        Envelope e;
        e.request = r;
        e.round = round;
        return e;
    }
} // namespace

TEST_CASE("constant delay without loss")
{
    BoundedChannel ch("t", quiet(), 1);
    for (int i = 0; i < 100; ++i)
    {
        double at = 0;
        const double now = i * 0.01;
        REQUIRE(ch.send(query(i), now, &at) == SendResult::Queued);
        CHECK(at == doctest::Approx(now + 0.001));
    }
}

TEST_CASE("capacity limit yields backpressure")
{
    ChannelConfig cfg = quiet();
    cfg.capacity = 1;
    BoundedChannel ch("t", cfg, 1);
    CHECK(ch.send(query(1), 0.0) == SendResult::Queued);
    CHECK(ch.send(query(2), 0.0) == SendResult::Backpressure);
    CHECK(ch.counters().backpressured == 1);
    CHECK(ch.counters().sent == 1);
}

TEST_CASE("drop probability calibration")
{
    ChannelConfig cfg = quiet();
    cfg.drop_prob = 0.1;
    cfg.capacity = 1u << 20;
    BoundedChannel ch("t", cfg, 9);
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        ch.send(query(i), 0.0);
    const auto got = ch.poll(1.0);
    CHECK(std::abs(got.size() / double(n) - 0.9) <= 0.005);
    CHECK(ch.conserved());
}

TEST_CASE("poll respects delivery time and staleness")
{
    BoundedChannel empty("t", quiet(), 1);
    CHECK(empty.poll(0.0).empty());

    BoundedChannel ch("t", quiet(0.5), 1);
    ch.send(query(1), 0.0);
    CHECK(ch.poll(0.1).empty());
    CHECK(ch.queued() == 1);
    CHECK(ch.next_delivery_time() == doctest::Approx(0.5));
    CHECK(ch.poll(0.5).size() == 1);

    ChannelConfig cfg = quiet(0.5);
    cfg.stale_timeout = 0.2;
    BoundedChannel old("t", cfg, 1);
    old.send(query(1), 0.0);
    CHECK(old.poll(0.6).empty());
    CHECK(old.counters().stale == 1);
    CHECK(old.conserved());
}

TEST_CASE("delivery order follows delivery time, then send order")
{
    ChannelConfig cfg = quiet(0.001);
    cfg.reorder_prob = 0.5;
    cfg.reorder_extra = 0.01;
    BoundedChannel ch("t", cfg, 3);
    for (int i = 0; i < 200; ++i)
        ch.send(query(i), i * 0.0001);
    const auto got = ch.poll(10.0);
    REQUIRE(got.size() == 200);
    bool reordered = false;
    for (std::size_t i = 1; i < got.size(); ++i)
    {
        CHECK(got[i - 1].deliver_at <= got[i].deliver_at);
        reordered = reordered || got[i].request < got[i - 1].request;
    }
    CHECK(reordered);
}

TEST_CASE("conservation holds under mixed faults")
{
    ChannelConfig cfg;
    cfg.capacity = 64;
    cfg.drop_prob = 0.2;
    cfg.reorder_prob = 0.3;
    cfg.stale_timeout = 0.01;
    cfg.delay = DelayModel{DelayKind::Exponential, 0.005, 0.0};
    BoundedChannel ch("t", cfg, 17);
    for (int i = 0; i < 5000; ++i)
    {
        ch.send(query(i), i * 0.001);
        if (i % 7 == 0)
            ch.poll(i * 0.001);
        REQUIRE(ch.conserved());
    }
    const auto &c = ch.counters();
    CHECK(c.sent == c.delivered + c.dropped + c.stale + ch.queued());
    CHECK(c.dropped > 0);
    CHECK(c.stale > 0);
}

TEST_CASE("same seed gives the same delivery trace")
{
    auto trace = [](std::uint64_t seed) {
        ChannelConfig cfg;
        cfg.drop_prob = 0.1;
        cfg.reorder_prob = 0.2;
        cfg.delay = DelayModel{DelayKind::Uniform, 0.001, 0.003};
        BoundedChannel ch("t", cfg, seed);
        std::vector<std::string> lines;
        ch.set_trace([&](std::string_view ev, const Envelope &e, double now) {
            lines.push_back(envelope_trace_line("t", ev, e, now));
        });
        for (int i = 0; i < 300; ++i)
        {
            ch.send(query(i), i * 0.001);
            ch.poll(i * 0.001);
        }
        return lines;
    };
    const auto a = trace(5);
    CHECK(a == trace(5));
    CHECK(a != trace(6));
    const auto j = nlohmann::json::parse(a.front());
    CHECK(j.contains("event"));
}

TEST_CASE("delay distributions")
{
    SplitMix64 rng(4);
    const DelayModel uni{DelayKind::Uniform, 0.001, 0.003};
    const DelayModel expo{DelayKind::Exponential, 0.002, 0.0};
    double su = 0, se = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
    {
        const double u = uni.sample(rng);
        REQUIRE(u >= 0.001);
        REQUIRE(u <= 0.003);
        su += u;
        se += expo.sample(rng);
    }
    CHECK(su / n == doctest::Approx(0.002).epsilon(0.01));
    CHECK(se / n == doctest::Approx(0.002).epsilon(0.02));
}

TEST_CASE("liveness from heartbeats")
{
    LivenessRegistry reg(3.0);
    CHECK_FALSE(reg.is_alive("draft", 0.0));
    reg.tick("draft", 0.0);
    CHECK(reg.is_alive("draft", 2.0));
    CHECK_FALSE(reg.is_alive("draft", 4.0));
    CHECK(reg.last_seen("draft") == 0.0);
    CHECK_FALSE(reg.last_seen("other").has_value());
}
