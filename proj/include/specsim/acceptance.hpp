#pragma once

// Pass/fail checks for the harness's published guarantees, shared by the
// acceptance test binary and `specsim verify`, plus golden-file snapshots.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace specsim
{
    struct CriterionResult
    {
        int id = 0;
        std::string name;
        bool passed = false;
        std::string detail;
        double seconds = 0.0;
    };

    struct AcceptanceOptions
    {
        std::size_t jobs = 0; // 0 = hardware concurrency
        /// Called with each result as soon as it is known.
        std::function<void(const CriterionResult &)> on_result;
    };

    CriterionResult check_formula_fidelity();
    CriterionResult check_crossover_identity();
    CriterionResult check_model_agreement(std::size_t jobs = 0);
    /// Criteria 4 (throughput dominance) and 5 (accepted-length ordering) share one sweep.
    std::vector<CriterionResult> check_hybrid_sweep(std::size_t jobs = 0);
    CriterionResult check_chaos_losslessness(std::size_t jobs = 0);
    CriterionResult check_scheduler_fairness();
    CriterionResult check_circuit_breaker();
    CriterionResult check_compression_contract();
    CriterionResult check_mixed_traffic(std::size_t jobs = 0);
    CriterionResult check_benefit_formula();

    /// All criteria in id order.
    std::vector<CriterionResult> run_acceptance(const AcceptanceOptions &options = {});

    enum class GoldenStatus
    {
        Pass,
        Fail,
        Missing,
    };

    struct GoldenCheck
    {
        std::string name;
        GoldenStatus status = GoldenStatus::Missing;
        std::string detail;
    };

    std::string_view to_string(GoldenStatus s) noexcept;

    /// Oracle reference prefixes and the report CSV header.
    std::vector<std::string> golden_files();
    std::string golden_content(const std::string &name);
    void write_goldens(const std::string &dir);
    std::vector<GoldenCheck> verify_goldens(const std::string &dir);
} // namespace specsim
