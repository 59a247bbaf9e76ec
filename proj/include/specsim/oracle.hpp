#pragma once

// Synthetic ground truth. The reference stream stands in for the target
// model's greedy output; the draft proposer agrees with it per token with
// probability alpha; verification is greedy exact-prefix match plus bonus.

#include "specsim/core.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace specsim
{
    struct VerifyOutcome
    {
        std::size_t accepted_count = 0;
        std::vector<Token> committed; // accepted prefix + bonus
        Token bonus{};
        std::size_t new_position = 0;
    };

    class TokenStreamOracle
    {
    public:
        explicit TokenStreamOracle(std::uint64_t seed) noexcept : seed_(seed) {}

        std::uint64_t seed() const noexcept { return seed_; }

        Token reference_token(RequestId request, std::size_t position) const noexcept;
        std::vector<Token> reference_slice(RequestId request, std::size_t start, std::size_t count) const;

        /// Prompt tokens live in a separate namespace from output positions.
        Token prompt_token(RequestId request, std::size_t position) const noexcept;
        std::vector<Token> prompt(RequestId request, std::size_t length) const;

        /// Each position matches the reference with probability alpha; one
        /// uniform draw per position, in order.
        SpeculativeSegment draft_propose(RequestId request, std::size_t start, std::size_t count,
                                         double alpha, SplitMix64 &rng) const;

        /// Draft token whose content depends only on (request, position): the
        /// agreement draw is keyed on the position rather than a running stream.
        Token keyed_draft_token(RequestId request, std::size_t position, double alpha) const noexcept;

        VerifyOutcome verify(RequestId request, std::size_t start, std::span<const Token> candidate) const;

    private:
        std::uint64_t seed_;
    };

    /// Guaranteed-different stand-in for a rejected draft position; never PAD.
    constexpr Token mismatch_token(Token reference) noexcept
    {
        constexpr std::uint64_t flip = 0x5bd1e9955bd1e995ULL;
        Token t{reference.value ^ flip};
        if (t == kPad)
            t.value ^= 1;
        return t;
    }
} // namespace specsim
