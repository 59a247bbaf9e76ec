#include "specsim/transport.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace specsim
{
    std::string_view to_string(EnvelopeKind k) noexcept
    {
        switch (k)
        {
        case EnvelopeKind::DraftQuery:
            return "DRAFT_QUERY";
        case EnvelopeKind::DraftReply:
            return "DRAFT_REPLY";
        case EnvelopeKind::SyncPrefix:
            return "SYNC_PREFIX";
        case EnvelopeKind::Heartbeat:
            return "HEARTBEAT";
        }
        return "?";
    }

    double DelayModel::sample(SplitMix64 &rng) const
    {
        switch (kind)
        {
        case DelayKind::Constant:
            return a;
        case DelayKind::Uniform:
            return a + (b - a) * uniform01(rng);
        case DelayKind::Exponential:
            // 1 - u lies in (0, 1], so the log is finite.
            return -a * std::log(1.0 - uniform01(rng));
        }
        return a;
    }

    ChannelConfig channel_config_from(const SimConfig &c)
    {
        ChannelConfig cc;
        cc.capacity = c.channel_capacity;
        cc.stale_timeout = c.effective_stale_timeout();
        cc.drop_prob = c.drop_prob;
        cc.reorder_prob = c.reorder_prob;
        cc.reorder_extra = c.reorder_extra;
        cc.delay = DelayModel{c.delay_kind, c.delay_a, c.delay_b};
        return cc;
    }

    BoundedChannel::BoundedChannel(std::string name, ChannelConfig config, std::uint64_t seed)
        : name_(std::move(name)), config_(config), rng_(seed)
    {
    }

    void BoundedChannel::emit(std::string_view event, const Envelope &e, double now) const
    {
        if (trace_)
            trace_(event, e, now);
    }

    SendResult BoundedChannel::send(Envelope e, double now, double *deliver_at)
    {
        e.sent_at = now;
        if (queue_.size() >= config_.capacity)
        {
            ++counters_.backpressured;
            emit("backpressure", e, now);
            return SendResult::Backpressure;
        }
        e.id = next_id_++;
        ++counters_.sent;

        // Draw all three variates unconditionally so the stream position does
        // not depend on which knobs are enabled.
        const double u_drop = uniform01(rng_);
        const double u_reorder = uniform01(rng_);
        const double delay = config_.delay.sample(rng_);

        if (u_drop < config_.drop_prob)
        {
            ++counters_.dropped;
            emit("dropped", e, now);
            return SendResult::Dropped;
        }
        e.deliver_at = now + delay;
        if (u_reorder < config_.reorder_prob)
            e.deliver_at += config_.reorder_extra;

        auto pos = std::upper_bound(queue_.begin(), queue_.end(), e, [](const Envelope &x, const Envelope &y) {
            return x.deliver_at != y.deliver_at ? x.deliver_at < y.deliver_at : x.id < y.id;
        });
        emit("sent", e, now);
        if (deliver_at)
            *deliver_at = e.deliver_at;
        queue_.insert(pos, std::move(e));
        return SendResult::Queued;
    }

    std::vector<Envelope> BoundedChannel::poll(double now)
    {
        std::vector<Envelope> out;
        std::vector<Envelope> keep;
        keep.reserve(queue_.size());
        for (auto &e : queue_)
        {
            if (now - e.sent_at > config_.stale_timeout)
            {
                ++counters_.stale;
                emit("stale", e, now);
            }
            else if (e.deliver_at <= now)
            {
                ++counters_.delivered;
                emit("delivered", e, now);
                out.push_back(std::move(e));
            }
            else
            {
                keep.push_back(std::move(e));
            }
        }
        queue_ = std::move(keep);
        return out;
    }

    std::optional<double> BoundedChannel::next_delivery_time() const
    {
        if (queue_.empty())
            return std::nullopt;
        return queue_.front().deliver_at;
    }

    bool BoundedChannel::conserved() const noexcept
    {
        return counters_.sent == counters_.delivered + counters_.dropped + counters_.stale + queue_.size();
    }

    void LivenessRegistry::tick(const std::string &endpoint, double now)
    {
        last_[endpoint] = now;
    }

    bool LivenessRegistry::is_alive(const std::string &endpoint, double now) const
    {
        auto it = last_.find(endpoint);
        return it != last_.end() && now - it->second <= expiry_;
    }

    std::optional<double> LivenessRegistry::last_seen(const std::string &endpoint) const
    {
        auto it = last_.find(endpoint);
        if (it == last_.end())
            return std::nullopt;
        return it->second;
    }

    std::string envelope_trace_line(std::string_view channel, std::string_view event, const Envelope &e, double now)
    {
        nlohmann::ordered_json j;
        j["t"] = now;
        j["channel"] = channel;
        j["event"] = event;
        j["id"] = e.id;
        j["kind"] = to_string(e.kind);
        j["request"] = e.request;
        j["round"] = e.round;
        j["sent_at"] = e.sent_at;
        j["deliver_at"] = e.deliver_at;
        j["payload_len"] = e.payload.size();
        return j.dump();
    }
} // namespace specsim
