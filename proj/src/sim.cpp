#include "specsim/sim.hpp"

#include <algorithm>
#include <cctype>
#include <atomic>
#include <cmath>
#include <deque>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <queue>
#include <thread>

#include <json.hpp>

namespace specsim
{
    std::string_view to_string(PolicyVariant v) noexcept
    {
        switch (v)
        {
        case PolicyVariant::AR:
            return "AR";
        case PolicyVariant::Ordinary:
            return "ORDINARY";
        case PolicyVariant::Parallel:
            return "PARALLEL";
        case PolicyVariant::Hybrid:
            return "HYBRID";
        }
        return "?";
    }

    PolicyVariant parse_variant(std::string_view s)
    {
        std::string upper(s);
        std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return std::toupper(ch); });
        for (PolicyVariant v : all_variants())
            if (upper == to_string(v))
                return v;
        throw ConfigError("unknown policy variant '" + std::string(s) + "'");
    }

    const std::vector<PolicyVariant> &all_variants()
    {
        static const std::vector<PolicyVariant> v = {PolicyVariant::AR, PolicyVariant::Ordinary, PolicyVariant::Parallel,
                                                     PolicyVariant::Hybrid};
        return v;
    }

    TargetPolicy policy_for(PolicyVariant v)
    {
        TargetPolicy p;
        switch (v)
        {
        case PolicyVariant::AR:
            p.speculation = false;
            p.prepare_ahead = false;
            break;
        case PolicyVariant::Ordinary:
            p.prepare_ahead = false;
            p.r_star_override = -1.0;
            break;
        case PolicyVariant::Parallel:
            p.r_star_override = std::numeric_limits<double>::infinity();
            break;
        case PolicyVariant::Hybrid:
            break;
        }
        return p;
    }

    std::vector<double> generate_arrivals(double qps, std::size_t n, SplitMix64 &rng)
    {
        if (!(qps > 0.0))
            throw ConfigError("arrival rate must be positive");
        std::vector<double> out;
        out.reserve(n);
        double t = 0.0;
        for (std::size_t i = 0; i < n; ++i)
        {
            t += -std::log(1.0 - uniform01(rng)) / qps;
            out.push_back(t);
        }
        return out;
    }

    Workload make_workload(const SimConfig &config)
    {
        Workload w;
        SplitMix64 rng(mix64(config.seed, 0x776f726b6c6f6164ULL));
        for (double t : generate_arrivals(config.qps, config.num_requests, rng))
            w.items.push_back(WorkloadItem{t, config.prompt_len, config.output_len, TrafficClass::Target});
        if (config.background_qps > 0.0)
        {
            SplitMix64 bg(mix64(config.seed, 0x6261636b67726e64ULL));
            for (double t : generate_arrivals(config.background_qps, config.background_requests, bg))
                w.items.push_back(WorkloadItem{t, 0, config.background_output_len, TrafficClass::DraftBackground});
        }
        return w;
    }

    Workload load_arrival_file(const std::string &path, const SimConfig &config)
    {
        std::ifstream in(path);
        if (!in)
            throw ConfigError("cannot open arrival file '" + path + "'");
        Workload w;
        std::string line;
        double last = 0.0;
        while (std::getline(in, line))
        {
            if (line.find_first_not_of(" \t\r") == std::string::npos)
                continue;
            const double t = parse_double(line.substr(0, line.find_last_not_of(" \t\r") + 1), "arrival time");
            if (t < last)
                throw ConfigError("arrival times must be non-decreasing");
            last = t;
            w.items.push_back(WorkloadItem{t, config.prompt_len, config.output_len, TrafficClass::Target});
        }
        return w;
    }

    bool conservative_mode_check(std::size_t gamma, double t_d_mix, double t_t) noexcept
    {
        return static_cast<double>(gamma) * t_d_mix > t_t;
    }

    double conservative_round_latency(std::size_t gamma, double t_d_mix, double t_t) noexcept
    {
        return conservative_mode_check(gamma, t_d_mix, t_t) ? static_cast<double>(gamma) * t_d_mix : t_t;
    }

    std::string round_trace_line(const TargetRoundRecord &r)
    {
        nlohmann::ordered_json j;
        j["event"] = "round";
        j["round"] = r.index;
        j["start"] = r.start;
        j["end"] = r.end;
        j["mode"] = to_string(r.mode);
        j["r_hat"] = r.r_hat;
        j["r_star"] = std::isfinite(r.r_star) ? nlohmann::ordered_json(r.r_star) : nlohmann::ordered_json("inf");
        j["batch"] = r.batch;
        j["committed"] = r.committed;
        j["rollbacks"] = r.rollbacks;
        j["speculation"] = r.speculation;
        j["breaker_disabled"] = r.breaker_disabled;
        j["timeouts"] = r.timeouts;
        j["conservative"] = r.conservative;
        return j.dump();
    }

    namespace
    {
        struct EventLater
        {
            bool operator()(const SimEvent &a, const SimEvent &b) const noexcept
            {
                return a.at != b.at ? a.at > b.at : a.seq > b.seq;
            }
        };

        constexpr int kToDraft = 0;
        constexpr int kToTarget = 1;

        class Simulator
        {
        public:
            Simulator(const SimConfig &config, PolicyVariant variant, const Workload &workload, const RunOptions &options)
                : config_(require_valid(config)), variant_(variant), workload_(workload), options_(options),
                  oracle_(config.seed),
                  channels_{BoundedChannel("to_draft", channel_config_from(config), mix64(config.seed, 0x7464ULL)),
                            BoundedChannel("to_target", channel_config_from(config), mix64(config.seed, 0x6474ULL))},
                  draft_(config_, oracle_),
                  target_(config_, policy_for(variant), oracle_,
                          TargetHost{
                              [this](Envelope e) { send(kToDraft, std::move(e)); },
                              [this](double at, TargetTimer t, std::uint64_t token) {
                                  push(at, EventKind::TargetTimer, 0, token, static_cast<int>(t));
                              },
                              [this](const RequestState &s) { on_request_done(s); },
                          })
            {
                if (options_.trace_sink)
                {
                    for (auto &ch : channels_)
                    {
                        const std::string name = ch.name();
                        ch.set_trace([this, name](std::string_view ev, const Envelope &e, double now) {
                            options_.trace_sink(envelope_trace_line(name, ev, e, now));
                        });
                    }
                }
            }

            RunResult run()
            {
                std::size_t target_count = 0;
                double first_arrival = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < workload_.items.size(); ++i)
                {
                    const auto &it = workload_.items[i];
                    if (it.cls == TrafficClass::Target)
                    {
                        ++target_count;
                        first_arrival = std::min(first_arrival, it.arrival);
                        push(it.arrival, EventKind::Arrival, i);
                    }
                    else
                    {
                        push(it.arrival, EventKind::BackgroundArrival, i);
                    }
                }
                if (target_count == 0)
                    first_arrival = 0.0;
                if (variant_ != PolicyVariant::AR)
                    push(0.0, EventKind::Heartbeat);

                RunResult result;
                double last_progress = first_arrival;
                std::uint64_t last_committed = 0;
                while (finished_.size() < target_count)
                {
                    if (events_.empty())
                        throw SimulationError("event queue drained with " +
                                              std::to_string(target_count - finished_.size()) + " requests unfinished");
                    SimEvent ev = events_.top();
                    events_.pop();
                    if (ev.at < now_)
                        result.clock_monotone = false;
                    now_ = ev.at;
                    ++result.events;
                    handle(ev);

                    const std::uint64_t committed = target_.counters().committed;
                    if (committed != last_committed || target_.in_flight() == 0)
                    {
                        last_committed = committed;
                        last_progress = now_;
                    }
                    else if (now_ - last_progress > config_.livelock_horizon)
                    {
                        throw SimulationError(livelock_message(last_progress));
                    }
                }

                const double end = last_finish_;
                const double duration = std::max(end - first_arrival, 0.0);
                for (const auto &r : target_.rounds())
                    if (options_.trace_sink)
                        options_.trace_sink(round_trace_line(r));

                result.target_rounds = target_.rounds();
                result.draft_rounds = draft_.rounds();
                result.finished = std::move(finished_);
                result.to_draft = channels_[kToDraft].counters();
                result.to_target = channels_[kToTarget].counters();
                result.transport_conserved = conserved_ && channels_[0].conserved() && channels_[1].conserved();
                result.draft = draft_.stats();
                result.target = target_.counters();
                result.report = build_report(result, duration);
                return result;
            }

        private:
            void push(double at, EventKind kind, std::uint64_t subject = 0, std::uint64_t token = 0, int aux = 0)
            {
                events_.push(SimEvent{at, seq_++, kind, subject, token, aux});
            }

            void send(int channel, Envelope e)
            {
                double at = 0.0;
                switch (channels_[channel].send(e, now_, &at))
                {
                case SendResult::Queued:
                    push(at, EventKind::Delivery, 0, 0, channel);
                    break;
                case SendResult::Dropped:
                    break;
                case SendResult::Backpressure:
                    outbox_[channel].push_back(std::move(e));
                    break;
                }
            }

            void flush_outbox(int channel)
            {
                auto &box = outbox_[channel];
                while (!box.empty() && channels_[channel].queued() < channels_[channel].config().capacity)
                {
                    Envelope e = std::move(box.front());
                    box.pop_front();
                    send(channel, std::move(e));
                }
            }

            void kick_draft() { push(now_, EventKind::DraftKick); }

            void handle(const SimEvent &ev)
            {
                switch (ev.kind)
                {
                case EventKind::Arrival: {
                    const auto &it = workload_.items[ev.subject];
                    target_.admit(make_request(ev.subject, it.output_len, it.arrival), now_);
                    break;
                }
                case EventKind::BackgroundArrival:
                    draft_.add_background(ev.subject, workload_.items[ev.subject].output_len, now_);
                    kick_draft();
                    break;
                case EventKind::TargetTimer:
                    target_.on_timer(static_cast<TargetTimer>(ev.aux), ev.token, now_);
                    break;
                case EventKind::DraftKick:
                    if (auto end = draft_.try_start_round(now_))
                        push(*end, EventKind::DraftRoundDone);
                    break;
                case EventKind::DraftRoundDone:
                    for (auto &reply : draft_.finish_round(now_))
                        send(kToTarget, std::move(reply));
                    if (auto end = draft_.try_start_round(now_))
                        push(*end, EventKind::DraftRoundDone);
                    break;
                case EventKind::Delivery: {
                    const int ch = ev.aux;
                    auto delivered = channels_[ch].poll(now_);
                    flush_outbox(ch);
                    if (ch == kToDraft)
                    {
                        for (const auto &e : delivered)
                            draft_.on_query(e, now_);
                        if (!delivered.empty())
                            kick_draft();
                    }
                    else
                    {
                        for (const auto &e : delivered)
                            target_.on_envelope(e, now_);
                    }
                    break;
                }
                case EventKind::Heartbeat: {
                    Envelope hb;
                    hb.kind = EnvelopeKind::Heartbeat;
                    send(kToTarget, std::move(hb));
                    push(now_ + config_.heartbeat_interval, EventKind::Heartbeat);
                    break;
                }
                case EventKind::RequestDone:
                    break;
                }
            }

            void on_request_done(const RequestState &s)
            {
                if (s.committed.size() != s.committed_pos || s.committed_pos != s.output_len)
                    conserved_ = false;
                for (std::size_t pos = 0; pos < s.committed.size(); ++pos)
                    if (!(s.committed[pos] == oracle_.reference_token(s.id, pos)))
                        ++mismatches_;
                last_finish_ = std::max(last_finish_, now_);
                finished_.push_back(FinishedRequest{s.id, s.arrival, now_, s.committed});
                push(now_, EventKind::RequestDone, s.id);
            }

            std::string livelock_message(double since) const
            {
                std::string msg = "no commit progress since t=" + format_double(since) + " (now " + format_double(now_) +
                                  ", " + std::to_string(target_.in_flight()) + " in flight, " +
                                  std::to_string(target_.rounds().size()) + " rounds)";
                const auto &rounds = target_.rounds();
                const std::size_t from = rounds.size() > 5 ? rounds.size() - 5 : 0;
                for (std::size_t i = from; i < rounds.size(); ++i)
                    msg += "\n  " + round_trace_line(rounds[i]);
                return msg;
            }

            MetricsReport build_report(const RunResult &res, double duration) const
            {
                MetricsReport r;
                r.variant = std::string(to_string(variant_));
                r.seed = config_.seed;
                r.duration = duration;
                r.total_committed = res.target.committed;
                r.target_throughput = duration > 0.0 ? static_cast<double>(r.total_committed) / duration : 0.0;
                r.draft_tokens = res.draft.regular_tokens;
                r.draft_throughput = duration > 0.0 ? static_cast<double>(r.draft_tokens) / duration : 0.0;
                const auto &c = res.target;
                r.mean_accepted_length =
                    c.request_rounds ? static_cast<double>(c.committed) / static_cast<double>(c.request_rounds) : 0.0;
                r.speculative_accept_length = c.speculative_rounds ? static_cast<double>(c.speculative_committed) /
                                                                         static_cast<double>(c.speculative_rounds)
                                                                   : 0.0;
                const std::uint64_t with_bonus = c.speculative_rounds + c.fallback_rounds;
                r.fallback_fraction =
                    with_bonus ? static_cast<double>(c.fallback_rounds) / static_cast<double>(with_bonus) : 0.0;

                double batch_sum = 0.0;
                double ratio_sum = 0.0;
                for (const auto &rec : res.target_rounds)
                {
                    batch_sum += static_cast<double>(rec.batch);
                    ratio_sum += rec.r_hat;
                    r.rollback_ratio_series.push_back(rec.r_hat);
                    r.mode_timeline.push_back(rec.mode);
                }
                r.rounds = res.target_rounds.size();
                if (r.rounds)
                {
                    r.mean_batch = batch_sum / static_cast<double>(r.rounds);
                    r.mean_rollback_ratio = ratio_sum / static_cast<double>(r.rounds);
                }
                r.requests_finished = res.finished.size();
                r.max_in_flight = target_.max_in_flight();

                for (const auto *ch : {&res.to_draft, &res.to_target})
                {
                    r.messages_sent += ch->sent;
                    r.messages_delivered += ch->delivered;
                    r.messages_dropped += ch->dropped;
                    r.messages_stale += ch->stale;
                    r.messages_backpressured += ch->backpressured;
                }
                r.replies_dropped = c.replies_dropped;
                r.timeouts = c.timeouts;
                r.breaker_activations = target_.breaker().activations;
                r.conservative_rounds = c.conservative_rounds;
                r.mismatches = mismatches_;
                r.lossless = mismatches_ == 0 && conserved_;
                return r;
            }

            SimConfig config_;
            PolicyVariant variant_;
            const Workload &workload_;
            const RunOptions &options_;
            TokenStreamOracle oracle_;
            BoundedChannel channels_[2];
            std::deque<Envelope> outbox_[2];
            DraftServer draft_;
            TargetEngine target_;
            std::priority_queue<SimEvent, std::vector<SimEvent>, EventLater> events_;
            std::uint64_t seq_ = 0;
            double now_ = 0.0;
            double last_finish_ = 0.0;
            std::vector<FinishedRequest> finished_;
            std::uint64_t mismatches_ = 0;
            bool conserved_ = true;
        };
    } // namespace

    RunResult run_detailed(const SimConfig &config, PolicyVariant variant, const Workload &workload,
                           const RunOptions &options)
    {
        Simulator sim(config, variant, workload, options);
        return sim.run();
    }

    MetricsReport run(const SimConfig &config, PolicyVariant variant, const Workload &workload)
    {
        return run_detailed(config, variant, workload).report;
    }

    MetricsReport run(const SimConfig &config, PolicyVariant variant)
    {
        return run(config, variant, make_workload(config));
    }

    std::uint64_t derive_seed(std::uint64_t base, std::uint64_t point, std::uint64_t replicate) noexcept
    {
        return mix64(mix64(base, point + 1), replicate + 1);
    }

    std::vector<MetricsReport> run_sweep(const SimConfig &base, const SweepSpec &spec, std::size_t jobs)
    {
        struct Task
        {
            SimConfig config;
            PolicyVariant variant;
            std::string point;
            std::uint64_t replicate;
        };
        std::vector<Task> tasks;
        for (std::size_t p = 0; p < spec.points.size(); ++p)
        {
            SimConfig cfg = base;
            for (const auto &[k, v] : spec.points[p].overrides)
                apply_override(cfg, k, v);
            for (std::size_t r = 0; r < spec.replicates; ++r)
            {
                SimConfig c = cfg;
                c.seed = derive_seed(base.seed, spec.common_seeds ? 0 : p, r);
                require_valid(c);
                for (PolicyVariant v : spec.variants)
                    tasks.push_back(Task{c, v, spec.points[p].label, r});
            }
        }

        std::vector<MetricsReport> out(tasks.size());
        if (jobs == 0)
            jobs = std::max(1u, std::thread::hardware_concurrency());
        jobs = std::min(jobs, std::max<std::size_t>(tasks.size(), 1));

        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto worker = [&] {
            for (std::size_t i = next++; i < tasks.size(); i = next++)
            {
                try
                {
                    const Task &t = tasks[i];
                    MetricsReport r = run(t.config, t.variant);
                    r.axis = spec.axis;
                    r.point = t.point;
                    r.replicate = t.replicate;
                    out[i] = std::move(r);
                }
                catch (...)
                {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        };
        if (jobs <= 1)
        {
            worker();
        }
        else
        {
            std::vector<std::thread> pool;
            for (std::size_t j = 0; j < jobs; ++j)
                pool.emplace_back(worker);
            for (auto &t : pool)
                t.join();
        }
        if (failure)
            std::rethrow_exception(failure);
        return out;
    }

    std::vector<MetricsReport> run_sweep(const SimConfig &base, const std::vector<PolicyVariant> &variants,
                                         const std::string &axis_key, const std::vector<std::string> &values,
                                         std::size_t replicates, std::size_t jobs)
    {
        SweepSpec spec;
        spec.axis = axis_key;
        spec.variants = variants;
        spec.replicates = replicates;
        for (const auto &v : values)
            spec.points.push_back(SweepPoint{v, {{axis_key, v}}});
        return run_sweep(base, spec, jobs);
    }
} // namespace specsim
