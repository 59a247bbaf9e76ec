#pragma once

// Simulated message fabric between target and draft: version-tagged
// envelopes, injected delay/reorder/drop, bounded queues that push back,
// stale discard on poll, and heartbeat liveness.

#include "specsim/core.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace specsim
{
    enum class EnvelopeKind : std::uint8_t
    {
        DraftQuery, // prepare the next round's segment ahead of verification
        DraftReply,
        SyncPrefix, // repair a rolled-back request
        Heartbeat,
    };

    std::string_view to_string(EnvelopeKind k) noexcept;

    struct Envelope
    {
        std::uint64_t id = 0; // wire identity, assigned by the channel
        RequestId request = 0;
        RoundId round = 0;
        EnvelopeKind kind = EnvelopeKind::DraftQuery;
        EnvelopeKind reply_to = EnvelopeKind::DraftQuery; // meaningful for replies
        std::vector<Token> payload;
        std::size_t start_position = 0; // first output position the payload segment covers
        std::size_t count = 0;          // tokens requested
        double sent_at = 0.0;
        double deliver_at = 0.0;
    };

    struct DelayModel
    {
        DelayKind kind = DelayKind::Constant;
        double a = 0.0005; // constant value, uniform lower bound, or exponential mean
        double b = 0.0005; // uniform upper bound

        double sample(SplitMix64 &rng) const;
    };

    struct ChannelConfig
    {
        std::size_t capacity = 4096;
        double stale_timeout = 0.1;
        double drop_prob = 0.0;
        double reorder_prob = 0.0;
        double reorder_extra = 0.002;
        DelayModel delay;
    };

    ChannelConfig channel_config_from(const SimConfig &config);

    enum class SendResult : std::uint8_t
    {
        Queued,
        Dropped,
        Backpressure,
    };

    struct ChannelCounters
    {
        std::uint64_t sent = 0; // accepted by the channel: queued or dropped
        std::uint64_t delivered = 0;
        std::uint64_t dropped = 0;
        std::uint64_t stale = 0;
        std::uint64_t backpressured = 0; // rejected at the door, not part of `sent`
    };

    /// (event, envelope, now) for every lifecycle step: sent, dropped,
    /// delivered, stale, backpressure.
    using EnvelopeTraceSink = std::function<void(std::string_view, const Envelope &, double)>;

    class BoundedChannel
    {
    public:
        BoundedChannel(std::string name, ChannelConfig config, std::uint64_t seed);

        const std::string &name() const noexcept { return name_; }
        const ChannelConfig &config() const noexcept { return config_; }

        /// On Queued, *deliver_at (when given) receives the scheduled delivery time.
        SendResult send(Envelope envelope, double now, double *deliver_at = nullptr);

        /// Deliverable envelopes in deliver_at order; stale ones are removed and counted.
        std::vector<Envelope> poll(double now);

        std::optional<double> next_delivery_time() const;
        std::size_t queued() const noexcept { return queue_.size(); }
        const ChannelCounters &counters() const noexcept { return counters_; }

        /// sent == delivered + dropped + stale + queued
        bool conserved() const noexcept;

        void set_trace(EnvelopeTraceSink sink) { trace_ = std::move(sink); }

    private:
        void emit(std::string_view event, const Envelope &e, double now) const;

        std::string name_;
        ChannelConfig config_;
        SplitMix64 rng_;
        std::vector<Envelope> queue_; // sorted by (deliver_at, id)
        std::uint64_t next_id_ = 1;
        ChannelCounters counters_;
        EnvelopeTraceSink trace_;
    };

    class LivenessRegistry
    {
    public:
        explicit LivenessRegistry(double expiry) : expiry_(expiry) {}

        void tick(const std::string &endpoint, double now);
        bool is_alive(const std::string &endpoint, double now) const;
        std::optional<double> last_seen(const std::string &endpoint) const;

    private:
        double expiry_;
        std::map<std::string, double, std::less<>> last_;
    };

    /// One JSON object per line.
    std::string envelope_trace_line(std::string_view channel, std::string_view event, const Envelope &e, double now);
} // namespace specsim
