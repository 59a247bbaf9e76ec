#include "specsim/target_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace specsim
{
    RequestState make_request(RequestId id, std::size_t output_len, double arrival)
    {
        RequestState s;
        s.id = id;
        s.output_len = output_len;
        s.arrival = arrival;
        s.committed.reserve(output_len);
        return s;
    }

    std::string_view to_string(CandidateKind k) noexcept
    {
        switch (k)
        {
        case CandidateKind::Repaired:
            return "REPAIRED";
        case CandidateKind::Cached:
            return "CACHED";
        case CandidateKind::Padded:
            return "PADDED";
        case CandidateKind::Fallback:
            return "FALLBACK";
        }
        return "?";
    }

    std::size_t CandidateSequence::real_length() const noexcept
    {
        auto it = std::find(tokens.begin(), tokens.end(), kPad);
        return static_cast<std::size_t>(it - tokens.begin());
    }

    CandidateSequence fallback_candidate(const RequestState &state)
    {
        CandidateSequence c;
        c.request = state.id;
        c.kind = CandidateKind::Fallback;
        if (state.pending_bonus)
        {
            c.tokens = {*state.pending_bonus};
            c.start = state.committed_pos - 1;
        }
        else
        {
            c.start = state.committed_pos;
        }
        return c;
    }

    std::vector<RequestId> compute_rollback_set(const VerificationBatch &batch, const std::vector<VerifyOutcome> &outcomes,
                                                const std::vector<std::optional<SpeculativeSegment>> &prepared)
    {
        std::vector<RequestId> out;
        for (std::size_t i = 0; i < batch.candidates.size(); ++i)
        {
            const auto &c = batch.candidates[i];
            const auto &o = outcomes.at(i);
            const auto &p = prepared.at(i);
            const bool rejected = o.accepted_count < c.real_length();
            const bool unusable = !p || p->empty() || !(p->tokens.front() == o.bonus) ||
                                  p->start_position + 1 != o.new_position;
            if (rejected || unusable)
                out.push_back(c.request);
        }
        return out;
    }

    double observe_rollback_ratio(std::size_t rollback_count, std::size_t batch)
    {
        if (batch == 0)
            throw std::invalid_argument("rollback ratio needs a non-empty batch");
        return static_cast<double>(rollback_count) / static_cast<double>(batch);
    }

    VerificationBatch assemble_batch(RoundId round, Mode mode, const std::vector<RequestState> &requests,
                                     const std::map<RequestId, SpeculativeSegment> &repaired, std::size_t gamma,
                                     const std::set<RequestId> &fallback)
    {
        VerificationBatch batch;
        batch.round = round;
        batch.mode = mode;
        batch.candidates.reserve(requests.size());
        for (const auto &s : requests)
        {
            if (!s.pending_bonus || fallback.contains(s.id))
            {
                batch.candidates.push_back(fallback_candidate(s));
                continue;
            }
            if (s.cached_segment && s.cached_segment->start_position == s.committed_pos)
            {
                batch.candidates.push_back(
                    CandidateSequence{s.id, s.cached_segment->tokens, CandidateKind::Cached, s.committed_pos});
                continue;
            }

            CandidateSequence c;
            c.request = s.id;
            c.start = s.committed_pos - 1;
            c.tokens.push_back(*s.pending_bonus);
            if (mode == Mode::Parallel)
            {
                c.kind = CandidateKind::Padded;
                c.tokens.resize(std::max<std::size_t>(gamma, 1), kPad);
            }
            else
            {
                auto it = repaired.find(s.id);
                if (it == repaired.end())
                    throw AssemblyError("request " + std::to_string(s.id) + " has no repaired segment");
                if (it->second.start_position != s.committed_pos)
                {
                    batch.candidates.push_back(fallback_candidate(s));
                    continue;
                }
                c.kind = CandidateKind::Repaired;
                c.tokens.insert(c.tokens.end(), it->second.tokens.begin(), it->second.tokens.end());
            }
            batch.candidates.push_back(std::move(c));
        }
        return batch;
    }

    VerificationBatch assemble_ordinary(RoundId round, const std::vector<RequestState> &requests,
                                        const std::map<RequestId, SpeculativeSegment> &repaired, std::size_t gamma)
    {
        return assemble_batch(round, Mode::Ordinary, requests, repaired, gamma);
    }

    VerificationBatch assemble_parallel(RoundId round, const std::vector<RequestState> &requests, std::size_t gamma)
    {
        return assemble_batch(round, Mode::Parallel, requests, {}, gamma);
    }

    std::size_t commit_round(RequestState &state, const CandidateSequence &candidate, const VerifyOutcome &outcome)
    {
        if (candidate.request != state.id)
            throw ProtocolViolation("candidate for request " + std::to_string(candidate.request) +
                                    " committed to request " + std::to_string(state.id));
        const std::size_t new_pos = std::min(outcome.new_position, state.output_len);
        if (new_pos < state.committed_pos)
            throw ProtocolViolation("request " + std::to_string(state.id) + " committed position would regress from " +
                                    std::to_string(state.committed_pos) + " to " + std::to_string(new_pos));
        if (candidate.start > state.committed_pos)
            throw ProtocolViolation("candidate for request " + std::to_string(state.id) + " starts past the committed position");

        for (std::size_t pos = state.committed_pos; pos < new_pos; ++pos)
            state.committed.push_back(outcome.committed[pos - candidate.start]);
        const std::size_t delta = new_pos - state.committed_pos;
        state.committed_pos = new_pos;
        if (!state.committed.empty())
            state.pending_bonus = state.committed.back();
        state.cached_segment.reset();
        ++state.round;
        state.done = state.committed_pos >= state.output_len;
        return delta;
    }

    void reuse_or_discard_suffix(RequestState &state, const std::optional<SpeculativeSegment> &prepared)
    {
        const bool usable = prepared && !prepared->empty() && state.pending_bonus && state.committed_pos > 0 &&
                            prepared->start_position + 1 == state.committed_pos &&
                            prepared->tokens.front() == *state.pending_bonus;
        if (!usable)
        {
            state.cached_segment.reset();
            state.in_rollback = true;
            return;
        }
        SpeculativeSegment rest;
        rest.origin_round = prepared->origin_round;
        rest.start_position = state.committed_pos;
        rest.tokens.assign(prepared->tokens.begin() + 1, prepared->tokens.end());
        state.cached_segment = std::move(rest);
        state.in_rollback = false;
    }

    bool handle_draft_reply(const Envelope &reply, const ActiveQuery &active) noexcept
    {
        return reply.kind == EnvelopeKind::DraftReply && reply.request == active.request &&
               reply.round == active.round && reply.reply_to == active.kind;
    }

    bool circuit_breaker_step(CircuitBreakerState &cb, bool reply_timely, RoundId current_round)
    {
        if (reply_timely)
        {
            cb.consecutive_timeouts = 0;
        }
        else if (++cb.consecutive_timeouts >= cb.threshold)
        {
            cb.disabled_until_round = current_round + 1 + cb.cooldown;
            cb.consecutive_timeouts = 0;
            ++cb.activations;
        }
        return !cb.disabled(current_round + 1);
    }

    std::vector<Token> VerificationChain::traverse() const
    {
        std::vector<Token> out;
        if (nodes.empty())
            return out;
        std::optional<std::size_t> at = 0;
        while (at)
        {
            out.push_back(nodes[*at].token);
            at = nodes[*at].child;
        }
        return out;
    }

    VerificationChain to_verification_chain(const CandidateSequence &candidate)
    {
        VerificationChain chain;
        chain.nodes.reserve(candidate.tokens.size());
        for (std::size_t i = 0; i < candidate.tokens.size(); ++i)
        {
            std::optional<std::size_t> child;
            if (i + 1 < candidate.tokens.size())
                child = i + 1;
            chain.nodes.push_back(ChainNode{candidate.tokens[i], child});
        }
        return chain;
    }

    TargetEngine::TargetEngine(const SimConfig &config, TargetPolicy policy, const TokenStreamOracle &oracle,
                               TargetHost host)
        : config_(config), policy_(policy), oracle_(oracle), host_(std::move(host)),
          timeout_(config.effective_reply_timeout()), liveness_(config.heartbeat_expiry)
    {
        breaker_.threshold = config.breaker_threshold;
        breaker_.cooldown = config.breaker_cooldown;
    }

    double TargetEngine::current_r_star() const
    {
        if (policy_.r_star_override)
            return *policy_.r_star_override;
        const double l = config_.accept_length > 0.0 ? config_.accept_length : accept_estimate_.value_or(0.0);
        if (!(l > 1.0))
            return std::numeric_limits<double>::infinity();
        ThroughputParams p;
        p.batch = static_cast<double>(config_.batch_size);
        p.accept_length = l;
        p.gamma = static_cast<double>(config_.gamma);
        p.t_draft = config_.effective_t_draft();
        p.t_target = config_.t_target;
        return critical_fallback_ratio(p);
    }

    void TargetEngine::arm(TargetTimer t, double at)
    {
        const std::uint64_t token = next_token_++;
        timer_tokens_[static_cast<int>(t)] = token;
        host_.schedule(at, t, token);
    }

    void TargetEngine::disarm(TargetTimer t)
    {
        timer_tokens_[static_cast<int>(t)] = 0;
    }

    RequestState *TargetEngine::find_active(RequestId id)
    {
        for (auto &s : active_)
            if (s.id == id)
                return &s;
        return nullptr;
    }

    void TargetEngine::admit(RequestState request, double now)
    {
        waiting_.push_back(std::move(request));
        if (phase_ == Phase::Idle)
            start_round(now);
    }

    void TargetEngine::start_round(double now)
    {
        while (active_.size() < config_.batch_size && !waiting_.empty())
        {
            active_.push_back(std::move(waiting_.front()));
            waiting_.pop_front();
        }
        max_in_flight_ = std::max(max_in_flight_, active_.size());
        if (active_.empty())
        {
            phase_ = Phase::Idle;
            return;
        }

        ++round_index_;
        rec_ = TargetRoundRecord{};
        rec_.index = round_index_;
        rec_.start = now;
        rec_.mode = mode_;
        rec_.batch = active_.size();
        rec_.draft_alive = liveness_.is_alive(std::string(kDraftEndpoint), now);
        rec_.breaker_disabled = breaker_.disabled(round_index_);
        speculation_ = policy_.speculation && !rec_.breaker_disabled && rec_.draft_alive;
        rec_.speculation = speculation_;

        repaired_.clear();
        repair_timed_out_.clear();
        expected_repair_.clear();

        if (!speculation_)
        {
            for (auto &s : active_)
            {
                s.cached_segment.reset();
                s.in_rollback = s.pending_bonus.has_value();
            }
            dispatch(now);
            return;
        }

        if (mode_ == Mode::Ordinary)
        {
            for (auto &s : active_)
            {
                if (!s.pending_bonus || (s.cached_segment && s.cached_segment->start_position == s.committed_pos))
                    continue;
                if (config_.gamma == 1)
                {
                    repaired_[s.id] = SpeculativeSegment{{}, s.round, s.committed_pos};
                    continue;
                }
                Envelope q;
                q.request = s.id;
                q.round = s.round;
                q.kind = EnvelopeKind::SyncPrefix;
                q.payload = s.committed;
                q.start_position = s.committed_pos;
                q.count = config_.gamma - 1;
                expected_repair_[s.id] = s.round;
                ++rec_.queries;
                host_.send(std::move(q));
            }
        }

        if (expected_repair_.empty())
        {
            dispatch(now);
            return;
        }
        phase_ = Phase::AwaitRepairs;
        arm(TargetTimer::RepairDeadline, now + timeout_);
    }

    void TargetEngine::dispatch(double now)
    {
        disarm(TargetTimer::RepairDeadline);
        const Mode mode = speculation_ ? mode_ : Mode::Ordinary;
        std::set<RequestId> fallback = repair_timed_out_;
        if (!speculation_)
            for (const auto &s : active_)
                fallback.insert(s.id);
        batch_ = assemble_batch(round_index_, mode, active_, repaired_, config_.gamma, fallback);
        repaired_.clear();
        rec_.dispatch = now;

        expected_prepare_.clear();
        prepared_.clear();
        if (speculation_ && policy_.prepare_ahead)
        {
            for (std::size_t i = 0; i < active_.size(); ++i)
            {
                const RequestState &s = active_[i];
                const CandidateSequence &c = batch_.candidates[i];
                // Prefix the draft should see if every real candidate token is accepted.
                std::vector<Token> prefix = s.committed;
                const std::size_t real = c.real_length();
                for (std::size_t j = 0; j < real; ++j)
                    if (c.start + j >= s.committed_pos)
                        prefix.push_back(c.tokens[j]);
                if (prefix.size() + 1 >= s.output_len)
                    continue;

                Envelope q;
                q.request = s.id;
                q.round = s.round + 1;
                q.kind = EnvelopeKind::DraftQuery;
                q.start_position = prefix.size();
                q.payload = std::move(prefix);
                q.count = config_.gamma;
                expected_prepare_[s.id] = s.round + 1;
                ++rec_.queries;
                host_.send(std::move(q));
            }
            if (!expected_prepare_.empty())
                arm(TargetTimer::PrepareDeadline, now + timeout_);
        }

        const double n = static_cast<double>(active_.size());
        const double latency = config_.t_target * (1.0 + config_.target_latency_slope * (n - 1.0));
        phase_ = Phase::Verifying;
        arm(TargetTimer::VerifyDone, now + latency);
    }

    bool TargetEngine::awaiting_prepared() const
    {
        return !expected_prepare_.empty();
    }

    void TargetEngine::verify_done(double now)
    {
        disarm(TargetTimer::VerifyDone);
        rec_.verify_done = now;
        outcomes_.clear();
        outcomes_.reserve(batch_.candidates.size());
        for (std::size_t i = 0; i < active_.size(); ++i)
        {
            RequestState &s = active_[i];
            const CandidateSequence &c = batch_.candidates[i];
            const bool had_bonus = s.pending_bonus.has_value();
            VerifyOutcome o = oracle_.verify(s.id, c.start, c.tokens);
            const std::size_t delta = commit_round(s, c, o);
            outcomes_.push_back(std::move(o));

            rec_.committed += delta;
            ++counters_.request_rounds;
            counters_.committed += delta;
            switch (c.kind)
            {
            case CandidateKind::Repaired:
                ++rec_.repaired;
                break;
            case CandidateKind::Cached:
                ++rec_.cached;
                break;
            case CandidateKind::Padded:
                ++rec_.padded;
                break;
            case CandidateKind::Fallback:
                ++rec_.fallback;
                break;
            }
            if (c.kind == CandidateKind::Repaired || c.kind == CandidateKind::Cached)
            {
                ++counters_.speculative_rounds;
                counters_.speculative_committed += delta;
                rec_.speculative_committed += delta;
            }
            else if (had_bonus)
            {
                ++counters_.fallback_rounds;
            }
            if (s.done)
            {
                s.finished = now;
                expected_prepare_.erase(s.id);
            }
        }

        if (awaiting_prepared())
        {
            phase_ = Phase::AwaitPrepared;
            return;
        }
        finish_round(now);
    }

    void TargetEngine::finish_round(double now)
    {
        disarm(TargetTimer::PrepareDeadline);
        rec_.end = now;
        rec_.conservative = now > rec_.verify_done;
        counters_.conservative_rounds += rec_.conservative ? 1 : 0;

        std::size_t continuing = 0;
        std::size_t rollbacks = 0;
        for (std::size_t i = 0; i < active_.size(); ++i)
        {
            RequestState &s = active_[i];
            if (s.done)
                continue;
            ++continuing;
            std::optional<SpeculativeSegment> p;
            if (auto it = prepared_.find(s.id); it != prepared_.end())
                p = it->second;
            reuse_or_discard_suffix(s, p);
            rollbacks += s.in_rollback ? 1 : 0;
        }
        rec_.continuing = continuing;
        rec_.rollbacks = rollbacks;
        rec_.r_hat = continuing > 0 ? observe_rollback_ratio(rollbacks, continuing) : 0.0;

        if (rec_.queries > 0)
            circuit_breaker_step(breaker_, rec_.timeouts == 0, round_index_);
        rec_.consecutive_timeouts = breaker_.consecutive_timeouts;
        counters_.queries += rec_.queries;

        if (rec_.repaired + rec_.cached > 0)
        {
            const double mean = static_cast<double>(rec_.speculative_committed) /
                                static_cast<double>(rec_.repaired + rec_.cached);
            accept_estimate_ = accept_estimate_ ? config_.ema_decay * *accept_estimate_ + (1.0 - config_.ema_decay) * mean
                                                : mean;
        }
        rec_.r_star = current_r_star();
        mode_ = preferred_mode(rec_.r_hat, rec_.r_star);
        rec_.next_mode = mode_;
        records_.push_back(rec_);
        prepared_.clear();
        expected_prepare_.clear();

        auto finished = std::stable_partition(active_.begin(), active_.end(), [](const RequestState &s) { return !s.done; });
        std::vector<RequestState> done(std::make_move_iterator(finished), std::make_move_iterator(active_.end()));
        active_.erase(finished, active_.end());
        for (const auto &s : done)
            host_.request_done(s);

        start_round(now);
    }

    void TargetEngine::on_envelope(const Envelope &e, double now)
    {
        if (e.kind == EnvelopeKind::Heartbeat)
        {
            liveness_.tick(std::string(kDraftEndpoint), now);
            return;
        }
        if (e.kind != EnvelopeKind::DraftReply)
        {
            ++counters_.replies_dropped;
            return;
        }

        auto &expected = e.reply_to == EnvelopeKind::SyncPrefix ? expected_repair_ : expected_prepare_;
        auto it = expected.find(e.request);
        if (it == expected.end() || !handle_draft_reply(e, ActiveQuery{e.request, it->second, e.reply_to}))
        {
            ++counters_.replies_dropped;
            return;
        }
        expected.erase(it);
        ++counters_.replies_accepted;

        SpeculativeSegment seg{e.payload, e.round, e.start_position};
        if (e.reply_to == EnvelopeKind::SyncPrefix)
        {
            repaired_[e.request] = std::move(seg);
            if (phase_ == Phase::AwaitRepairs && expected_repair_.empty())
                dispatch(now);
        }
        else
        {
            prepared_[e.request] = std::move(seg);
            if (phase_ == Phase::AwaitPrepared && !awaiting_prepared())
                finish_round(now);
        }
    }

    void TargetEngine::on_timer(TargetTimer timer, std::uint64_t token, double now)
    {
        if (token == 0 || timer_tokens_[static_cast<int>(timer)] != token)
            return;
        switch (timer)
        {
        case TargetTimer::VerifyDone:
            verify_done(now);
            break;
        case TargetTimer::RepairDeadline:
            if (phase_ != Phase::AwaitRepairs)
                return;
            rec_.timeouts += expected_repair_.size();
            counters_.timeouts += expected_repair_.size();
            for (const auto &[id, round] : expected_repair_)
                repair_timed_out_.insert(id);
            expected_repair_.clear();
            dispatch(now);
            break;
        case TargetTimer::PrepareDeadline:
            disarm(TargetTimer::PrepareDeadline);
            rec_.timeouts += expected_prepare_.size();
            counters_.timeouts += expected_prepare_.size();
            expected_prepare_.clear();
            if (phase_ == Phase::AwaitPrepared)
                finish_round(now);
            break;
        }
    }
} // namespace specsim
