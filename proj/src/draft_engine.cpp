#include "specsim/draft_engine.hpp"

#include <algorithm>
#include <cmath>

namespace specsim
{
    namespace
    {
        std::size_t local_length(const DraftSessionState &s) { return s.history.size() + s.segment.size(); }

        Token local_at(const DraftSessionState &s, std::size_t i)
        {
            return i < s.history.size() ? s.history[i] : s.segment.tokens[i - s.history.size()];
        }

        void refresh_cost(DraftSessionState &s) { s.cache_cost = local_length(s); }

        // Background tenants share the id space; keep them out of the way.
        constexpr RequestId kBackgroundBit = RequestId{1} << 62;
    } // namespace

    std::vector<Token> local_sequence(const DraftSessionState &state)
    {
        std::vector<Token> out = state.history;
        out.insert(out.end(), state.segment.tokens.begin(), state.segment.tokens.end());
        return out;
    }

    std::size_t reconcile(const DraftSessionState &state, std::span<const Token> prefix)
    {
        const std::size_t overlap = std::min(prefix.size(), local_length(state));
        for (std::size_t i = 0; i < overlap; ++i)
            if (!(prefix[i] == local_at(state, i)))
                return i;
        return overlap;
    }

    RecoveryResult apply_recovery(DraftSessionState &state, std::size_t delta, std::span<const Token> prefix)
    {
        if (delta == prefix.size())
            return {};

        const std::size_t old_len = local_length(state);
        RecoveryResult res;
        res.rolled_back = delta < old_len;
        res.freed = old_len > delta ? old_len - delta : 0;

        std::vector<Token> local = local_sequence(state);
        local.resize(std::min(local.size(), delta));
        local.insert(local.end(), prefix.begin() + static_cast<std::ptrdiff_t>(local.size()), prefix.end());
        state.history = std::move(local);
        state.segment.tokens.clear();
        state.segment.start_position = state.history.size();
        refresh_cost(state);
        state.paused = false;
        return res;
    }

    std::size_t truncate_local(DraftSessionState &state, std::size_t length)
    {
        const std::size_t old_len = local_length(state);
        if (old_len <= length)
            return 0;
        if (length >= state.history.size())
        {
            state.segment.tokens.resize(length - state.history.size());
        }
        else
        {
            state.history.resize(length);
            state.segment.tokens.clear();
            state.segment.start_position = length;
        }
        refresh_cost(state);
        return old_len - length;
    }

    namespace
    {
        template <class Draw>
        SpeculativeSegment generate_with(DraftSessionState &state, std::size_t count, Draw &&draw)
        {
            state.history.insert(state.history.end(), state.segment.tokens.begin(), state.segment.tokens.end());
            SpeculativeSegment seg;
            seg.start_position = state.history.size();
            seg.tokens.reserve(count);
            for (std::size_t j = 0; j < count; ++j)
                seg.tokens.push_back(draw(seg.start_position + j));
            state.segment = seg;
            refresh_cost(state);
            state.paused = true;
            return seg;
        }
    } // namespace

    SpeculativeSegment generate_speculative(DraftSessionState &state, std::size_t count, double alpha,
                                            const TokenStreamOracle &oracle, SplitMix64 &rng)
    {
        const std::size_t start = state.history.size() + state.segment.size();
        const SpeculativeSegment drafted = oracle.draft_propose(state.request, start, count, alpha, rng);
        return generate_with(state, count, [&](std::size_t pos) { return drafted.tokens[pos - start]; });
    }

    SpeculativeSegment generate_speculative_keyed(DraftSessionState &state, std::size_t count, double alpha,
                                                  const TokenStreamOracle &oracle)
    {
        return generate_with(state, count,
                             [&](std::size_t pos) { return oracle.keyed_draft_token(state.request, pos, alpha); });
    }

    std::vector<Token> compress_prompt(std::span<const Token> tokens, double p)
    {
        const std::size_t s = tokens.size();
        // The epsilon absorbs representation error such as 0.1 * 100 / 2.
        const auto keep = static_cast<std::size_t>(std::floor(p * static_cast<double>(s) / 2.0 + 1e-9));
        if (2 * keep >= s)
            return {tokens.begin(), tokens.end()};
        std::vector<Token> out(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
        out.insert(out.end(), tokens.end() - static_cast<std::ptrdiff_t>(keep), tokens.end());
        return out;
    }

    ScheduleResult schedule_round(std::deque<DraftQueueItem> &speculative, std::deque<DraftQueueItem> &regular,
                                  FairnessCounter &counter, std::size_t capacity)
    {
        ScheduleResult res;
        auto take = [&](std::deque<DraftQueueItem> &q, std::size_t &n) {
            while (!q.empty() && res.scheduled.size() < capacity)
            {
                res.scheduled.push_back(std::move(q.front()));
                q.pop_front();
                ++n;
            }
        };

        res.forced_regular = counter.consecutive_speculative >= counter.period && !regular.empty();
        if (res.forced_regular)
        {
            take(regular, res.regular);
            take(speculative, res.speculative);
            counter.consecutive_speculative = 0;
            return res;
        }

        take(speculative, res.speculative);
        take(regular, res.regular);
        if (res.speculative > 0)
            counter.consecutive_speculative = std::min(counter.consecutive_speculative + 1, counter.period);
        else
            counter.consecutive_speculative = 0;
        return res;
    }

    double mixed_step_latency(std::size_t scheduled, const DraftLatencyModel &model)
    {
        const std::size_t excess = scheduled > model.reference_batch ? scheduled - model.reference_batch : 0;
        return model.base + model.slope * static_cast<double>(excess);
    }

    DraftServer::DraftServer(const SimConfig &config, const TokenStreamOracle &oracle)
        : config_(config), oracle_(oracle), alpha_(config.effective_alpha()),
          latency_{config.effective_t_draft(), config.draft_latency_slope, config.draft_reference_batch},
          fairness_{0, config.fairness_period}
    {
    }

    const DraftSessionState *DraftServer::session(RequestId id) const
    {
        auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : &it->second;
    }

    DraftSessionState &DraftServer::session_for(RequestId id)
    {
        auto [it, inserted] = sessions_.try_emplace(id);
        if (inserted)
        {
            it->second.request = id;
            auto prompt = oracle_.prompt(id, config_.prompt_len);
            it->second.context = config_.compression ? compress_prompt(prompt, config_.compression_ratio) : prompt;
        }
        return it->second;
    }

    void DraftServer::on_query(const Envelope &q, double now)
    {
        ++stats_.queries_received;
        if (now >= config_.draft_outage_start && now < config_.draft_outage_end)
        {
            ++stats_.queries_lost_outage;
            return;
        }
        RoundId &latest = latest_round_[q.request];
        if (q.round < latest)
        {
            ++stats_.queries_dropped_outdated;
            return;
        }
        latest = q.round;

        for (auto &item : speculative_)
        {
            if (item.request == q.request)
            {
                item.query = q;
                item.steps = q.count;
                ++stats_.queries_coalesced;
                return;
            }
        }
        speculative_.push_back(DraftQueueItem{QueueClass::Speculative, q.request, now, q.count, q});
    }

    void DraftServer::add_background(RequestId id, std::size_t tokens, double now)
    {
        regular_.push_back(DraftQueueItem{QueueClass::Regular, id | kBackgroundBit, now, tokens, std::nullopt});
    }

    std::optional<double> DraftServer::try_start_round(double now)
    {
        if (busy() || !has_work())
            return std::nullopt;

        DraftRoundRecord rec;
        rec.index = records_.size() + 1;
        rec.start = now;
        rec.regular_waiting = regular_.size();

        ScheduleResult sched = schedule_round(speculative_, regular_, fairness_, config_.draft_capacity);
        rec.speculative = sched.speculative;
        rec.regular = sched.regular;
        rec.forced_regular = sched.forced_regular;

        std::size_t steps = 1;
        if (sched.speculative > 0)
        {
            steps = 0;
            for (const auto &item : sched.scheduled)
                if (item.cls == QueueClass::Speculative)
                    steps = std::max(steps, item.steps);
            steps = std::max<std::size_t>(steps, 1);
        }
        rec.steps = steps;
        rec.step_latency = mixed_step_latency(sched.scheduled.size(), latency_);
        rec.end = now + static_cast<double>(steps) * rec.step_latency;

        if (rec.regular_waiting > 0 && sched.regular == 0)
            stats_.max_starved_run = std::max(stats_.max_starved_run, ++starved_run_);
        else
            starved_run_ = 0;

        current_ = rec;
        in_flight_ = std::move(sched);
        return rec.end;
    }

    Envelope DraftServer::serve(const DraftQueueItem &item, DraftRoundRecord &rec)
    {
        const Envelope &q = *item.query;
        DraftSessionState &s = session_for(q.request);
        const std::size_t delta = reconcile(s, q.payload);
        const RecoveryResult rr = apply_recovery(s, delta, q.payload);
        rec.rollbacks += rr.rolled_back ? 1 : 0;
        rec.freed += rr.freed + truncate_local(s, q.start_position);

        SpeculativeSegment seg = generate_speculative_keyed(s, q.count, alpha_, oracle_);
        seg.origin_round = q.round;

        Envelope reply;
        reply.request = q.request;
        reply.round = q.round;
        reply.kind = EnvelopeKind::DraftReply;
        reply.reply_to = q.kind;
        reply.payload = std::move(seg.tokens);
        reply.start_position = seg.start_position;
        reply.count = q.count;
        return reply;
    }

    std::vector<Envelope> DraftServer::finish_round(double now)
    {
        std::vector<Envelope> replies;
        if (!in_flight_)
            return replies;
        ScheduleResult sched = std::move(*in_flight_);
        in_flight_.reset();
        DraftRoundRecord rec = current_;
        rec.end = now;

        for (auto &item : sched.scheduled)
        {
            if (item.cls == QueueClass::Speculative)
            {
                replies.push_back(serve(item, rec));
                continue;
            }
            const std::size_t produced = std::min(item.steps, rec.steps);
            stats_.regular_tokens += produced;
            item.steps -= produced;
            if (item.steps > 0)
                regular_.push_back(std::move(item));
            else
                ++stats_.regular_completed;
        }
        stats_.replies += replies.size();
        records_.push_back(rec);
        return replies;
    }
} // namespace specsim
