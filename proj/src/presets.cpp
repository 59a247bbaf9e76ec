#include "specsim/presets.hpp"

namespace specsim
{
    namespace
    {
        std::vector<ExperimentPreset> build()
        {
            std::vector<ExperimentPreset> out;
            const std::vector<PolicyVariant> all = all_variants();

            {
                ExperimentPreset p;
                p.name = "crossover";
                p.description = "alpha sweep across the critical fallback ratio";
                p.base = {{"batch_size", "32"}, {"num_requests", "64"}};
                p.sweep.axis = "alpha";
                p.sweep.variants = all;
                for (const char *a : {"0.05", "0.15", "0.3", "0.45", "0.6", "0.75", "0.85", "0.9", "0.95", "0.99"})
                    p.sweep.points.push_back(SweepPoint{a, {{"alpha", a}}});
                out.push_back(std::move(p));
            }
            {
                ExperimentPreset p;
                p.name = "batch-scaling";
                p.description = "batch size with arrival rate and sample count scaled jointly";
                p.sweep.axis = "batch_size";
                p.sweep.variants = all;
                const char *batch[] = {"1", "16", "32", "64", "128"};
                const char *qps[] = {"1", "4", "8", "16", "32"};
                const char *samples[] = {"8", "64", "128", "256", "512"};
                for (int i = 0; i < 5; ++i)
                    p.sweep.points.push_back(
                        SweepPoint{batch[i], {{"batch_size", batch[i]}, {"qps", qps[i]}, {"num_requests", samples[i]}}});
                out.push_back(std::move(p));
            }
            {
                ExperimentPreset p;
                p.name = "mixed-traffic";
                p.description = "background draft tenant load; first point is the unloaded baseline";
                p.base = {{"batch_size", "32"}, {"num_requests", "64"}};
                p.sweep.axis = "background_qps";
                p.sweep.variants = all;
                p.sweep.common_seeds = true;
                // Background arrivals span ~64s, longer than the target run, at every load.
                for (int q : {0, 1, 2, 4, 8})
                    p.sweep.points.push_back(SweepPoint{std::to_string(q),
                                                        {{"background_qps", std::to_string(q)},
                                                         {"background_requests", std::to_string(64 * q)}}});
                out.push_back(std::move(p));
            }
            {
                ExperimentPreset p;
                p.name = "tp-imbalance";
                p.description = "target latency shrunk 4x so drafting dominates; prompt compression on/off";
                p.base = {{"t_target", "0.0125"}, {"compression", "true"}};
                p.sweep.axis = "compression_ratio";
                p.sweep.variants = all;
                for (const char *r : {"0.1", "1.0"})
                    p.sweep.points.push_back(SweepPoint{r, {{"compression_ratio", r}}});
                out.push_back(std::move(p));
            }
            {
                ExperimentPreset p;
                p.name = "chaos";
                p.description = "delay/reorder/drop grid for end-to-end losslessness";
                p.base = {{"batch_size", "8"},      {"num_requests", "16"},        {"output_len", "256"},
                          {"qps", "16"},            {"delay_kind", "exponential"}, {"reorder_extra", "0.002"}};
                p.sweep.axis = "faults";
                p.sweep.variants = {PolicyVariant::Ordinary, PolicyVariant::Parallel, PolicyVariant::Hybrid};
                for (const char *d : {"0.0001", "0.005", "0.05"})
                    for (const char *r : {"0", "0.2"})
                        for (const char *x : {"0", "0.05"})
                            p.sweep.points.push_back(
                                SweepPoint{std::string("d") + d + "-r" + r + "-x" + x,
                                           {{"delay_a", d}, {"delay_b", d}, {"reorder_prob", r}, {"drop_prob", x}}});
                out.push_back(std::move(p));
            }
            return out;
        }
    } // namespace

    const std::vector<ExperimentPreset> &presets()
    {
        static const std::vector<ExperimentPreset> all = build();
        return all;
    }

    const ExperimentPreset &find_preset(const std::string &name)
    {
        std::string known;
        for (const auto &p : presets())
        {
            if (p.name == name)
                return p;
            known += (known.empty() ? "" : ", ") + p.name;
        }
        throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
    }

    SimConfig preset_config(const ExperimentPreset &preset, SimConfig base)
    {
        for (const auto &[k, v] : preset.base)
            apply_override(base, k, v);
        return base;
    }
} // namespace specsim
