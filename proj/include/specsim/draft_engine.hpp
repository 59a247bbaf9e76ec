#pragma once

// Draft server: persistent per-request speculative state, reconciliation
// against the target's verified prefix, speculative generation, prompt
// compression, and the speculative-priority scheduler with a fairness reset.

#include "specsim/core.hpp"
#include "specsim/oracle.hpp"
#include "specsim/transport.hpp"

#include <deque>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace specsim
{
    struct DraftSessionState
    {
        RequestId request = 0;
        std::vector<Token> context; // prompt as kept after compression
        std::vector<Token> history;
        SpeculativeSegment segment;
        std::size_t cache_cost = 0; // |history| + |segment|
        bool paused = false;
    };

    /// history followed by the speculative segment.
    std::vector<Token> local_sequence(const DraftSessionState &state);

    /// First index where the verified prefix and the local sequence disagree;
    /// min of the lengths when the overlap agrees.
    std::size_t reconcile(const DraftSessionState &state, std::span<const Token> verified_prefix);

    struct RecoveryResult
    {
        std::size_t freed = 0;
        bool rolled_back = false;
    };

    /// Leaves the state alone when the prefix is already a prefix of the local
    /// sequence; otherwise truncates to delta, appends the rest of the prefix
    /// and clears the segment.
    RecoveryResult apply_recovery(DraftSessionState &state, std::size_t delta, std::span<const Token> verified_prefix);

    /// Drops local tokens at positions >= length, segment first. Returns tokens freed.
    std::size_t truncate_local(DraftSessionState &state, std::size_t length);

    /// Folds the previous segment into history and drafts `count` tokens from
    /// position |history|, pausing the session afterwards.
    SpeculativeSegment generate_speculative(DraftSessionState &state, std::size_t count, double alpha,
                                            const TokenStreamOracle &oracle, SplitMix64 &rng);

    /// Same, with each token keyed on its position (see TokenStreamOracle::keyed_draft_token).
    SpeculativeSegment generate_speculative_keyed(DraftSessionState &state, std::size_t count, double alpha,
                                                  const TokenStreamOracle &oracle);

    /// First and last floor(p*S/2) tokens; the input when that covers everything.
    std::vector<Token> compress_prompt(std::span<const Token> tokens, double p);

    enum class QueueClass : std::uint8_t
    {
        Speculative,
        Regular,
    };

    struct DraftQueueItem
    {
        QueueClass cls = QueueClass::Regular;
        RequestId request = 0;
        double enqueue_time = 0.0;
        std::size_t steps = 1;     // tokens requested (speculative) or remaining (regular)
        std::optional<Envelope> query; // speculative items carry their query
    };

    struct FairnessCounter
    {
        std::size_t consecutive_speculative = 0;
        std::size_t period = 10;
    };

    struct ScheduleResult
    {
        std::vector<DraftQueueItem> scheduled;
        bool forced_regular = false;
        std::size_t speculative = 0;
        std::size_t regular = 0;
    };

    /// Removes the scheduled items from the queues and updates the counter.
    ScheduleResult schedule_round(std::deque<DraftQueueItem> &speculative, std::deque<DraftQueueItem> &regular,
                                  FairnessCounter &counter, std::size_t capacity);

    struct DraftLatencyModel
    {
        double base = 0.005;
        double slope = 0.00002;
        std::size_t reference_batch = 128;
    };

    /// Per-token step latency of a scheduled batch: base + slope * max(0, size - reference).
    double mixed_step_latency(std::size_t scheduled, const DraftLatencyModel &model);

    struct DraftRoundRecord
    {
        std::uint64_t index = 0;
        double start = 0.0;
        double end = 0.0;
        std::size_t speculative = 0;
        std::size_t regular = 0;
        std::size_t regular_waiting = 0; // regular items queued when the round started
        bool forced_regular = false;
        std::size_t steps = 0;
        double step_latency = 0.0;
        std::size_t rollbacks = 0;
        std::size_t freed = 0;
    };

    struct DraftStats
    {
        std::uint64_t queries_received = 0;
        std::uint64_t queries_dropped_outdated = 0;
        std::uint64_t queries_coalesced = 0;
        std::uint64_t queries_lost_outage = 0;
        std::uint64_t replies = 0;
        std::uint64_t regular_tokens = 0;
        std::uint64_t regular_completed = 0;
        std::size_t max_starved_run = 0; // consecutive rounds with regular work waiting but none served
    };

    class DraftServer
    {
    public:
        DraftServer(const SimConfig &config, const TokenStreamOracle &oracle);

        void on_query(const Envelope &query, double now);
        void add_background(RequestId id, std::size_t tokens, double now);

        bool busy() const noexcept { return in_flight_.has_value(); }
        bool has_work() const noexcept { return !speculative_.empty() || !regular_.empty(); }

        /// Starts a round if idle with work queued; returns its completion time.
        std::optional<double> try_start_round(double now);

        /// Completes the in-flight round and returns the replies to send.
        std::vector<Envelope> finish_round(double now);

        const DraftStats &stats() const noexcept { return stats_; }
        const std::vector<DraftRoundRecord> &rounds() const noexcept { return records_; }
        const DraftSessionState *session(RequestId id) const;

    private:
        DraftSessionState &session_for(RequestId id);
        Envelope serve(const DraftQueueItem &item, DraftRoundRecord &rec);

        SimConfig config_;
        const TokenStreamOracle &oracle_;
        double alpha_;
        DraftLatencyModel latency_;
        FairnessCounter fairness_;
        std::deque<DraftQueueItem> speculative_;
        std::deque<DraftQueueItem> regular_;
        std::unordered_map<RequestId, DraftSessionState> sessions_;
        std::unordered_map<RequestId, RoundId> latest_round_;
        std::optional<ScheduleResult> in_flight_;
        DraftRoundRecord current_;
        std::size_t starved_run_ = 0;
        DraftStats stats_;
        std::vector<DraftRoundRecord> records_;
    };
} // namespace specsim
