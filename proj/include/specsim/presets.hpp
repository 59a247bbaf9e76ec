#pragma once

// Named experiment shapes runnable at desk scale. A preset plus a seed is a
// complete description of a sweep.

#include "specsim/sim.hpp"

#include <string>
#include <vector>

namespace specsim
{
    struct ExperimentPreset
    {
        std::string name;
        std::string description;
        Overrides base; // applied on top of the caller's config
        SweepSpec sweep;
    };

    const std::vector<ExperimentPreset> &presets();

    /// Throws ConfigError naming the known presets.
    const ExperimentPreset &find_preset(const std::string &name);

    SimConfig preset_config(const ExperimentPreset &preset, SimConfig base = {});
} // namespace specsim
