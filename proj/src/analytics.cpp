#include "specsim/analytics.hpp"

#include <cmath>

namespace specsim
{
    double ordinary_throughput(const ThroughputParams &p)
    {
        return p.batch * p.accept_length / (p.t_target + (p.gamma - 1.0) * p.t_draft);
    }

    double parallel_throughput(const ThroughputParams &p)
    {
        const double r = p.fallback_ratio;
        return p.batch * (r + (1.0 - r) * p.accept_length) / p.t_target;
    }

    double critical_fallback_ratio(const ThroughputParams &p)
    {
        if (!(p.accept_length > 1.0))
            throw DomainError("critical fallback ratio requires L>1 (got L=" + format_double(p.accept_length) + ")");
        const double draft = (p.gamma - 1.0) * p.t_draft;
        return draft * p.accept_length / ((p.t_target + draft) * (p.accept_length - 1.0));
    }

    Mode preferred_mode(double r_hat, double r_star) noexcept
    {
        return r_hat <= r_star ? Mode::Parallel : Mode::Ordinary;
    }

    double expected_committed_per_round(double alpha, std::size_t gamma)
    {
        const double n = static_cast<double>(gamma);
        if (alpha >= 1.0)
            return n + 1.0;
        return (1.0 - std::pow(alpha, n + 1.0)) / (1.0 - alpha);
    }
} // namespace specsim
