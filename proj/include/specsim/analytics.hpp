#pragma once

// Closed-form throughput model for ordinary (serialized) and parallel
// (overlapped) speculative decoding, and the fallback ratio where they tie.

#include "specsim/core.hpp"

#include <cstddef>
#include <stdexcept>

namespace specsim
{
    class DomainError : public std::domain_error
    {
    public:
        explicit DomainError(const std::string &what) : std::domain_error(what) {}
    };

    struct ThroughputParams
    {
        double batch = 32.0;        // B; real-valued so a measured mean batch can be fed back
        double accept_length = 3.0; // L, tokens committed per request per round
        double gamma = 4.0;
        double t_draft = 0.005;
        double t_target = 0.050;
        double fallback_ratio = 0.0; // r, only used by the parallel formula
    };

    /// B*L / (T_T + (gamma-1)*T_D)
    double ordinary_throughput(const ThroughputParams &p);

    /// B*(r + (1-r)*L) / T_T
    double parallel_throughput(const ThroughputParams &p);

    /// Fallback ratio at which both formulas agree. Not clamped to [0,1].
    /// Throws DomainError when L <= 1.
    double critical_fallback_ratio(const ThroughputParams &p);

    /// PARALLEL iff r_hat <= r_star.
    Mode preferred_mode(double r_hat, double r_star) noexcept;

    /// Expected accepted prefix plus bonus when each of `gamma` drafted tokens
    /// agrees independently with probability alpha.
    double expected_committed_per_round(double alpha, std::size_t gamma);
} // namespace specsim
