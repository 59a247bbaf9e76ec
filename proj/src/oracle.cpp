#include "specsim/oracle.hpp"

namespace specsim
{
    namespace
    {
        constexpr std::uint64_t kOutputDomain = 0x6f75747075747374ULL;
        constexpr std::uint64_t kPromptDomain = 0x70726f6d70747374ULL;
        constexpr std::uint64_t kDraftDomain = 0x6472616674737472ULL;

        constexpr Token keyed_token(std::uint64_t seed, std::uint64_t domain, RequestId request, std::size_t position)
        {
            std::uint64_t v = mix64(mix64(seed ^ domain, request), position);
            // PAD is reserved; remap the single colliding value.
            if (v == kPad.value)
                v = 0;
            return Token{v};
        }
    } // namespace

    Token TokenStreamOracle::reference_token(RequestId request, std::size_t position) const noexcept
    {
        return keyed_token(seed_, kOutputDomain, request, position);
    }

    std::vector<Token> TokenStreamOracle::reference_slice(RequestId request, std::size_t start, std::size_t count) const
    {
        std::vector<Token> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i)
            out.push_back(reference_token(request, start + i));
        return out;
    }

    Token TokenStreamOracle::prompt_token(RequestId request, std::size_t position) const noexcept
    {
        return keyed_token(seed_, kPromptDomain, request, position);
    }

    std::vector<Token> TokenStreamOracle::prompt(RequestId request, std::size_t length) const
    {
        std::vector<Token> out;
        out.reserve(length);
        for (std::size_t i = 0; i < length; ++i)
            out.push_back(prompt_token(request, i));
        return out;
    }

    SpeculativeSegment TokenStreamOracle::draft_propose(RequestId request, std::size_t start, std::size_t count,
                                                        double alpha, SplitMix64 &rng) const
    {
        SpeculativeSegment seg;
        seg.start_position = start;
        seg.tokens.reserve(count);
        for (std::size_t j = 0; j < count; ++j)
        {
            const Token ref = reference_token(request, start + j);
            seg.tokens.push_back(uniform01(rng) < alpha ? ref : mismatch_token(ref));
        }
        return seg;
    }

    Token TokenStreamOracle::keyed_draft_token(RequestId request, std::size_t position, double alpha) const noexcept
    {
        SplitMix64 rng(mix64(mix64(seed_ ^ kDraftDomain, request), position));
        const Token ref = reference_token(request, position);
        return uniform01(rng) < alpha ? ref : mismatch_token(ref);
    }

    VerifyOutcome TokenStreamOracle::verify(RequestId request, std::size_t start, std::span<const Token> candidate) const
    {
        VerifyOutcome out;
        while (out.accepted_count < candidate.size())
        {
            const Token c = candidate[out.accepted_count];
            if (c == kPad || !(c == reference_token(request, start + out.accepted_count)))
                break;
            ++out.accepted_count;
        }
        out.committed.assign(candidate.begin(), candidate.begin() + static_cast<std::ptrdiff_t>(out.accepted_count));
        out.bonus = reference_token(request, start + out.accepted_count);
        out.committed.push_back(out.bonus);
        out.new_position = start + out.accepted_count + 1;
        return out;
    }
} // namespace specsim
