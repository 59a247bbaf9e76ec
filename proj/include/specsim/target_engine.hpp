#pragma once

// Target server: rollback detection, mode selection, batch assembly in
// ordinary and parallel form, commit under the single-count rule, reuse of
// the draft's prepared continuation, reply validation and the circuit breaker.

#include "specsim/analytics.hpp"
#include "specsim/core.hpp"
#include "specsim/oracle.hpp"
#include "specsim/transport.hpp"

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace specsim
{
    class ProtocolViolation : public std::logic_error
    {
    public:
        explicit ProtocolViolation(const std::string &what) : std::logic_error(what) {}
    };

    class AssemblyError : public std::logic_error
    {
    public:
        explicit AssemblyError(const std::string &what) : std::logic_error(what) {}
    };

    struct RequestState
    {
        RequestId id = 0;
        RoundId round = 0; // completed verification rounds
        std::size_t committed_pos = 0;
        std::size_t output_len = 0;
        std::optional<SpeculativeSegment> cached_segment;
        std::optional<Token> pending_bonus; // last committed token, reused as a verification seed
        bool in_rollback = false;
        bool done = false;
        std::vector<Token> committed;
        double arrival = 0.0;
        double finished = 0.0;
    };

    RequestState make_request(RequestId id, std::size_t output_len, double arrival = 0.0);

    enum class CandidateKind : std::uint8_t
    {
        Repaired,
        Cached,
        Padded,
        Fallback,
    };

    std::string_view to_string(CandidateKind k) noexcept;

    struct CandidateSequence
    {
        RequestId request = 0;
        std::vector<Token> tokens;
        CandidateKind kind = CandidateKind::Fallback;
        std::size_t start = 0; // output position of tokens[0]

        /// Tokens before the first PAD.
        std::size_t real_length() const noexcept;
    };

    struct VerificationBatch
    {
        RoundId round = 0;
        Mode mode = Mode::Parallel;
        std::vector<CandidateSequence> candidates;
    };

    /// [bonus] alone at the bonus position, or an empty candidate for a
    /// request that has not produced anything yet.
    CandidateSequence fallback_candidate(const RequestState &state);

    /// Requests (in batch order) whose prepared continuation cannot be reused:
    /// a rejected real token, no prepared segment, or a head/position that does
    /// not match the bonus.
    std::vector<RequestId> compute_rollback_set(const VerificationBatch &batch, const std::vector<VerifyOutcome> &outcomes,
                                                const std::vector<std::optional<SpeculativeSegment>> &prepared);

    double observe_rollback_ratio(std::size_t rollback_count, std::size_t batch);

    /// Shared assembly. Rollback requests become REPAIRED (ordinary) or PADDED
    /// (parallel); ids in `fallback` and requests without a bonus get FALLBACK.
    VerificationBatch assemble_batch(RoundId round, Mode mode, const std::vector<RequestState> &requests,
                                     const std::map<RequestId, SpeculativeSegment> &repaired, std::size_t gamma,
                                     const std::set<RequestId> &fallback = {});

    /// Throws AssemblyError when a rollback request has no repaired segment.
    VerificationBatch assemble_ordinary(RoundId round, const std::vector<RequestState> &requests,
                                        const std::map<RequestId, SpeculativeSegment> &repaired, std::size_t gamma);

    VerificationBatch assemble_parallel(RoundId round, const std::vector<RequestState> &requests, std::size_t gamma);

    /// Advances committed_pos past the accepted tokens and the bonus, capped at
    /// output_len. Returns the number of new positions.
    std::size_t commit_round(RequestState &state, const CandidateSequence &candidate, const VerifyOutcome &outcome);

    /// Keeps the prepared continuation minus its head when the head is the
    /// bonus at the bonus position; otherwise the request enters rollback.
    void reuse_or_discard_suffix(RequestState &state, const std::optional<SpeculativeSegment> &prepared);

    struct ActiveQuery
    {
        RequestId request = 0;
        RoundId round = 0;
        EnvelopeKind kind = EnvelopeKind::DraftQuery;
    };

    /// True iff the reply answers exactly the active (request, round) query.
    bool handle_draft_reply(const Envelope &reply, const ActiveQuery &active) noexcept;

    struct CircuitBreakerState
    {
        std::size_t consecutive_timeouts = 0;
        RoundId disabled_until_round = 0; // exclusive
        std::size_t threshold = 3;
        std::size_t cooldown = 5;
        std::uint64_t activations = 0;

        bool disabled(RoundId round) const noexcept { return round < disabled_until_round; }
    };

    /// Records one round's outcome; returns whether speculation is enabled for
    /// the following round.
    bool circuit_breaker_step(CircuitBreakerState &cb, bool reply_timely, RoundId current_round);

    struct ChainNode
    {
        Token token;
        std::optional<std::size_t> child;
    };

    struct VerificationChain
    {
        std::vector<ChainNode> nodes;

        std::vector<Token> traverse() const;
    };

    VerificationChain to_verification_chain(const CandidateSequence &candidate);

    struct TargetPolicy
    {
        bool speculation = true;
        bool prepare_ahead = true;
        std::optional<double> r_star_override;
    };

    enum class TargetTimer : std::uint8_t
    {
        VerifyDone,
        RepairDeadline,
        PrepareDeadline,
    };

    struct TargetHost
    {
        std::function<void(Envelope)> send;
        std::function<void(double, TargetTimer, std::uint64_t)> schedule;
        std::function<void(const RequestState &)> request_done;
    };

    struct TargetRoundRecord
    {
        RoundId index = 0;
        double start = 0.0;
        double dispatch = 0.0;
        double verify_done = 0.0;
        double end = 0.0;
        Mode mode = Mode::Parallel;
        double r_hat = 0.0;  // observed at the end of this round
        double r_star = 0.0; // threshold used to pick the next mode
        Mode next_mode = Mode::Parallel;
        std::size_t batch = 0;
        std::size_t continuing = 0;
        std::size_t rollbacks = 0;
        std::size_t committed = 0;
        bool speculation = false;
        bool breaker_disabled = false;
        bool draft_alive = false;
        std::size_t queries = 0;
        std::size_t timeouts = 0;
        std::size_t consecutive_timeouts = 0; // breaker counter after this round
        std::size_t repaired = 0;
        std::size_t cached = 0;
        std::size_t padded = 0;
        std::size_t fallback = 0;
        std::size_t speculative_committed = 0; // delta summed over REPAIRED and CACHED
        bool conservative = false; // verification finished before the prepared replies
    };

    struct TargetCounters
    {
        std::uint64_t request_rounds = 0;
        std::uint64_t committed = 0;
        std::uint64_t speculative_rounds = 0; // CACHED or REPAIRED request-rounds
        std::uint64_t speculative_committed = 0;
        std::uint64_t fallback_rounds = 0; // PADDED or FALLBACK with a bonus
        std::uint64_t replies_accepted = 0;
        std::uint64_t replies_dropped = 0;
        std::uint64_t timeouts = 0;
        std::uint64_t queries = 0;
        std::uint64_t conservative_rounds = 0;
    };

    class TargetEngine
    {
    public:
        TargetEngine(const SimConfig &config, TargetPolicy policy, const TokenStreamOracle &oracle, TargetHost host);

        void admit(RequestState request, double now);
        void on_envelope(const Envelope &e, double now);
        void on_timer(TargetTimer timer, std::uint64_t token, double now);

        bool idle() const noexcept { return phase_ == Phase::Idle; }
        std::size_t in_flight() const noexcept { return active_.size(); }
        std::size_t waiting() const noexcept { return waiting_.size(); }
        Mode mode() const noexcept { return mode_; }
        std::optional<double> accept_length_estimate() const noexcept { return accept_estimate_; }
        const CircuitBreakerState &breaker() const noexcept { return breaker_; }
        const TargetCounters &counters() const noexcept { return counters_; }
        const std::vector<TargetRoundRecord> &rounds() const noexcept { return records_; }
        std::size_t max_in_flight() const noexcept { return max_in_flight_; }

        /// Threshold the policy would use right now.
        double current_r_star() const;

    private:
        enum class Phase : std::uint8_t
        {
            Idle,
            AwaitRepairs,
            Verifying,
            AwaitPrepared,
        };

        void start_round(double now);
        void dispatch(double now);
        void verify_done(double now);
        void finish_round(double now);
        void arm(TargetTimer t, double at);
        void disarm(TargetTimer t);
        bool awaiting_prepared() const;
        RequestState *find_active(RequestId id);

        SimConfig config_;
        TargetPolicy policy_;
        const TokenStreamOracle &oracle_;
        TargetHost host_;
        double timeout_;

        Phase phase_ = Phase::Idle;
        RoundId round_index_ = 0;
        Mode mode_ = Mode::Parallel;
        bool speculation_ = false;
        std::deque<RequestState> waiting_;
        std::vector<RequestState> active_;
        std::size_t max_in_flight_ = 0;

        VerificationBatch batch_;
        std::vector<VerifyOutcome> outcomes_;
        std::unordered_map<RequestId, RoundId> expected_repair_;
        std::unordered_map<RequestId, RoundId> expected_prepare_;
        std::map<RequestId, SpeculativeSegment> repaired_;
        std::map<RequestId, SpeculativeSegment> prepared_;
        std::set<RequestId> repair_timed_out_;

        CircuitBreakerState breaker_;
        LivenessRegistry liveness_;
        std::optional<double> accept_estimate_;
        std::uint64_t timer_tokens_[3] = {0, 0, 0};
        std::uint64_t next_token_ = 1;

        TargetRoundRecord rec_;
        std::vector<TargetRoundRecord> records_;
        TargetCounters counters_;
    };

    inline constexpr std::string_view kDraftEndpoint = "draft";
} // namespace specsim
