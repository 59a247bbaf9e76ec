#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "specsim/oracle.hpp"
#include "specsim/target_engine.hpp"

#include <cmath>

using namespace specsim;

namespace
{
    const TokenStreamOracle kOracle(42);

    // A request that has committed the first `pos` reference tokens.
    RequestState at_position(RequestId id, std::size_t pos, std::size_t output_len = 1000)
    {
        RequestState s = make_request(id, output_len);
        s.committed = kOracle.reference_slice(id, 0, pos);
        s.committed_pos = pos;
        if (pos > 0)
            s.pending_bonus = s.committed.back();
        return s;
    }

    SpeculativeSegment segment(std::vector<Token> tokens, std::size_t start)
    {
        SpeculativeSegment s;
        s.tokens = std::move(tokens);
        s.start_position = start;
        return s;
    }
} // namespace

TEST_CASE("rollback set")
{
    const std::size_t gamma = 4;
    const RequestState a = at_position(1, 10);
    const RequestState b = at_position(2, 10);
    VerificationBatch batch;
    batch.candidates.push_back(CandidateSequence{1, kOracle.reference_slice(1, 10, gamma), CandidateKind::Cached, 10});
    auto partial = kOracle.reference_slice(2, 10, gamma);
    partial[2] = mismatch_token(partial[2]);
    batch.candidates.push_back(CandidateSequence{2, partial, CandidateKind::Cached, 10});
    std::vector<VerifyOutcome> outcomes;
    for (const auto &c : batch.candidates)
        outcomes.push_back(kOracle.verify(c.request, c.start, c.tokens));

    // Prepared segments whose head equals the bonus.
    std::vector<std::optional<SpeculativeSegment>> prepared = {
        segment(kOracle.reference_slice(1, 14, gamma), 14),
        segment(kOracle.reference_slice(2, 14, gamma), 14),
    };
    CHECK(compute_rollback_set(batch, outcomes, prepared) == std::vector<RequestId>{2});
    (void)a;
    (void)b;

    // Head mismatch and absent prepared segments both force rollback.
    prepared[0]->tokens[0] = mismatch_token(prepared[0]->tokens[0]);
    CHECK(compute_rollback_set(batch, outcomes, prepared) == std::vector<RequestId>{1, 2});
    prepared[0].reset();
    CHECK(compute_rollback_set(batch, outcomes, prepared) == std::vector<RequestId>{1, 2});
}

TEST_CASE("rollback ratio of one simulated round at alpha 0.8")
{
    // Keeping a request needs all gamma tokens accepted and the prepared head
    // equal to the bonus; each token independently matches with probability alpha.
    const std::size_t gamma = 4;
    const std::size_t batch_size = 1000;
    SplitMix64 rng(8);
    double total = 0;
    const int rounds = 5;
    for (int r = 0; r < rounds; ++r)
    {
        VerificationBatch batch;
        std::vector<VerifyOutcome> outcomes;
        std::vector<std::optional<SpeculativeSegment>> prepared;
        for (std::size_t i = 0; i < batch_size; ++i)
        {
            const RequestId id = r * batch_size + i;
            const auto cand = kOracle.draft_propose(id, 20, gamma, 0.8, rng);
            batch.candidates.push_back(CandidateSequence{id, cand.tokens, CandidateKind::Cached, 20});
            outcomes.push_back(kOracle.verify(id, 20, cand.tokens));
            prepared.push_back(kOracle.draft_propose(id, 20 + gamma, gamma, 0.8, rng));
        }
        const double ratio = observe_rollback_ratio(compute_rollback_set(batch, outcomes, prepared).size(), batch_size);
        CHECK(std::abs(ratio - (1 - std::pow(0.8, 5))) <= 0.05);
        total += ratio;
    }
    CHECK(std::abs(total / rounds - 0.672) <= 0.02);
}

TEST_CASE("observed rollback ratio")
{
    CHECK(observe_rollback_ratio(16, 32) == 0.5);
    CHECK(observe_rollback_ratio(0, 32) == 0.0);
    CHECK(observe_rollback_ratio(32, 32) == 1.0);
    CHECK_THROWS(observe_rollback_ratio(0, 0));
}

TEST_CASE("ordinary assembly merges repaired and cached candidates by request")
{
    const std::size_t gamma = 4;
    std::vector<RequestState> reqs = {at_position(1, 10), at_position(2, 10), at_position(3, 10), at_position(4, 10)};
    reqs[2].cached_segment = segment(kOracle.reference_slice(3, 10, gamma), 10);
    reqs[3].cached_segment = segment(kOracle.reference_slice(4, 10, gamma), 10);
    std::map<RequestId, SpeculativeSegment> repaired = {
        {1, segment(kOracle.reference_slice(1, 10, gamma - 1), 10)},
        {2, segment(kOracle.reference_slice(2, 10, gamma - 1), 10)},
    };
    const auto batch = assemble_ordinary(3, reqs, repaired, gamma);
    REQUIRE(batch.candidates.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(batch.candidates[i].request == reqs[i].id);

    const auto &rep = batch.candidates[0];
    CHECK(rep.kind == CandidateKind::Repaired);
    CHECK(rep.start == 9);
    REQUIRE(rep.tokens.size() == gamma);
    CHECK(rep.tokens[0] == *reqs[0].pending_bonus);
    CHECK(std::equal(rep.tokens.begin() + 1, rep.tokens.end(), repaired[1].tokens.begin()));

    CHECK(batch.candidates[2].kind == CandidateKind::Cached);
    CHECK(batch.candidates[2].tokens == reqs[2].cached_segment->tokens);

    std::map<RequestId, SpeculativeSegment> missing = {{1, repaired[1]}};
    CHECK_THROWS_AS(assemble_ordinary(3, reqs, missing, gamma), AssemblyError);
}

TEST_CASE("parallel assembly pads rolled-back requests")
{
    const std::size_t gamma = 4;
    std::vector<RequestState> reqs = {at_position(1, 10), at_position(2, 10)};
    const auto batch = assemble_parallel(1, reqs, gamma);
    for (const auto &c : batch.candidates)
    {
        CHECK(c.kind == CandidateKind::Padded);
        CHECK(c.tokens == std::vector<Token>{*reqs[c.request - 1].pending_bonus, kPad, kPad, kPad});
        CHECK(c.real_length() == 1);
    }

    // Every request padded: each commits exactly one token.
    for (std::size_t i = 0; i < reqs.size(); ++i)
    {
        const auto &c = batch.candidates[i];
        CHECK(commit_round(reqs[i], c, kOracle.verify(c.request, c.start, c.tokens)) == 1);
        CHECK(reqs[i].committed == kOracle.reference_slice(reqs[i].id, 0, 11));
    }

    // Without rollbacks both modes agree.
    std::vector<RequestState> cached = {at_position(5, 10)};
    cached[0].cached_segment = segment(kOracle.reference_slice(5, 10, gamma), 10);
    const auto o = assemble_ordinary(1, cached, {}, gamma);
    const auto p = assemble_parallel(1, cached, gamma);
    CHECK(o.candidates[0].tokens == p.candidates[0].tokens);
    CHECK(o.candidates[0].kind == p.candidates[0].kind);
}

TEST_CASE("commit advances by accepted tokens plus bonus")
{
    const std::size_t gamma = 4;
    RequestState full = at_position(1, 10);
    CandidateSequence c{1, kOracle.reference_slice(1, 10, gamma), CandidateKind::Cached, 10};
    CHECK(commit_round(full, c, kOracle.verify(1, 10, c.tokens)) == 5);
    CHECK(full.committed_pos == 15);
    CHECK(full.committed == kOracle.reference_slice(1, 0, 15));
    CHECK(*full.pending_bonus == kOracle.reference_token(1, 14));

    RequestState none = at_position(2, 10);
    CandidateSequence bad{2, kOracle.reference_slice(2, 10, gamma), CandidateKind::Cached, 10};
    for (auto &t : bad.tokens)
        t = mismatch_token(t);
    CHECK(commit_round(none, bad, kOracle.verify(2, 10, bad.tokens)) == 1);
    CHECK(none.committed_pos == 11);

    // Repaired candidates re-include the bonus without counting it twice.
    RequestState rep = at_position(3, 10);
    auto toks = kOracle.reference_slice(3, 9, gamma);
    CandidateSequence r{3, toks, CandidateKind::Repaired, 9};
    CHECK(commit_round(rep, r, kOracle.verify(3, 9, toks)) == 4);
    CHECK(rep.committed == kOracle.reference_slice(3, 0, 14));

    // Output length caps the commit.
    RequestState tail = at_position(4, 8, 10);
    CandidateSequence t{4, kOracle.reference_slice(4, 8, gamma), CandidateKind::Cached, 8};
    CHECK(commit_round(tail, t, kOracle.verify(4, 8, t.tokens)) == 2);
    CHECK(tail.done);

    RequestState other = at_position(5, 10);
    CHECK_THROWS_AS(commit_round(other, c, kOracle.verify(1, 10, c.tokens)), ProtocolViolation);
}

TEST_CASE("fallback commits exactly one token, fresh or continuing")
{
    RequestState fresh = make_request(9, 100);
    auto c = fallback_candidate(fresh);
    CHECK(c.tokens.empty());
    CHECK(commit_round(fresh, c, kOracle.verify(9, c.start, c.tokens)) == 1);
    for (int i = 0; i < 20; ++i)
    {
        c = fallback_candidate(fresh);
        CHECK(c.kind == CandidateKind::Fallback);
        CHECK(commit_round(fresh, c, kOracle.verify(9, c.start, c.tokens)) == 1);
    }
    CHECK(fresh.committed == kOracle.reference_slice(9, 0, 21));
}

TEST_CASE("prepared suffix reuse")
{
    RequestState s = at_position(1, 15);
    const Token bonus = *s.pending_bonus;
    auto good = segment({bonus, Token{1}, Token{2}, Token{3}}, 14);
    reuse_or_discard_suffix(s, good);
    CHECK_FALSE(s.in_rollback);
    REQUIRE(s.cached_segment);
    CHECK(s.cached_segment->start_position == 15);
    CHECK(s.cached_segment->tokens == std::vector<Token>{Token{1}, Token{2}, Token{3}});

    auto wrong = good;
    wrong.tokens[0] = mismatch_token(bonus);
    reuse_or_discard_suffix(s, wrong);
    CHECK(s.in_rollback);
    CHECK_FALSE(s.cached_segment);

    s.in_rollback = false;
    reuse_or_discard_suffix(s, std::nullopt);
    CHECK(s.in_rollback);
}

TEST_CASE("reply matching by request, round and kind")
{
    Envelope reply;
    reply.kind = EnvelopeKind::DraftReply;
    reply.reply_to = EnvelopeKind::SyncPrefix;
    reply.request = 7;
    reply.round = 3;
    CHECK(handle_draft_reply(reply, ActiveQuery{7, 3, EnvelopeKind::SyncPrefix}));
    reply.round = 2;
    CHECK_FALSE(handle_draft_reply(reply, ActiveQuery{7, 3, EnvelopeKind::SyncPrefix}));
    reply.round = 3;
    CHECK_FALSE(handle_draft_reply(reply, ActiveQuery{7, 3, EnvelopeKind::DraftQuery}));
    // Once the round advances the duplicate no longer matches.
    CHECK_FALSE(handle_draft_reply(reply, ActiveQuery{7, 4, EnvelopeKind::SyncPrefix}));
}

TEST_CASE("circuit breaker")
{
    CircuitBreakerState cb;
    CHECK(circuit_breaker_step(cb, false, 1));
    CHECK(circuit_breaker_step(cb, false, 2));
    CHECK_FALSE(circuit_breaker_step(cb, false, 3));
    CHECK(cb.activations == 1);
    for (RoundId r = 4; r <= 3 + cb.cooldown; ++r)
        CHECK(cb.disabled(r));
    CHECK_FALSE(cb.disabled(4 + cb.cooldown));

    CircuitBreakerState reset;
    circuit_breaker_step(reset, false, 1);
    circuit_breaker_step(reset, false, 2);
    CHECK(reset.consecutive_timeouts == 2);
    circuit_breaker_step(reset, true, 3);
    CHECK(reset.consecutive_timeouts == 0);
    CHECK(reset.activations == 0);
}

TEST_CASE("verification chain")
{
    CandidateSequence c{1, {Token{1}, Token{2}, Token{3}, Token{4}}, CandidateKind::Cached, 0};
    const auto chain = to_verification_chain(c);
    CHECK(chain.nodes.size() == 4);
    CHECK(chain.traverse() == c.tokens);
    CHECK(to_verification_chain(CandidateSequence{}).traverse().empty());
}

TEST_CASE("engine without speculation commits one token per request per round")
{
    SimConfig cfg;
    cfg.batch_size = 4;
    struct Timer
    {
        double at;
        TargetTimer timer;
        std::uint64_t token;
    };
    std::vector<Timer> timers;
    std::vector<RequestState> done;
    std::size_t sent = 0;
    TargetHost host;
    host.send = [&](Envelope) { ++sent; };
    host.schedule = [&](double at, TargetTimer t, std::uint64_t tok) { timers.push_back({at, t, tok}); };
    host.request_done = [&](const RequestState &s) { done.push_back(s); };
    TargetEngine engine(cfg, TargetPolicy{false, false, std::nullopt}, kOracle, host);
    for (RequestId i = 0; i < 6; ++i)
        engine.admit(make_request(i, 8), 0.0);
    // The first admission starts a round on its own; the rest join at the next boundary.
    CHECK(engine.in_flight() == 1);
    CHECK(engine.max_in_flight() <= cfg.batch_size);

    double now = 0;
    while (!timers.empty())
    {
        auto it = std::min_element(timers.begin(), timers.end(), [](auto &a, auto &b) { return a.at < b.at; });
        const Timer t = *it;
        timers.erase(it);
        now = t.at;
        engine.on_timer(t.timer, t.token, now);
    }
    CHECK(sent == 0);
    REQUIRE(done.size() == 6);
    for (const auto &s : done)
        CHECK(s.committed == kOracle.reference_slice(s.id, 0, 8));
    std::size_t committed = 0;
    for (const auto &r : engine.rounds())
    {
        CHECK(r.committed == r.batch);
        CHECK(r.batch <= cfg.batch_size);
        CHECK(r.end - r.start == doctest::Approx(cfg.t_target));
        committed += r.committed;
    }
    CHECK(committed == 6 * 8);
    CHECK(now == doctest::Approx(engine.rounds().size() * cfg.t_target));
}
