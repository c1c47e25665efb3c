#include "petseg/prompts.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace petseg {

std::string_view to_string(Polarity p) { return p == Polarity::positive ? "pos" : "neg"; }

Polarity parse_polarity(std::string_view s) {
    if (s == "pos") return Polarity::positive;
    if (s == "neg") return Polarity::negative;
    throw std::invalid_argument("unknown polarity '" + std::string(s) + "'");
}

void PromptSet::add(const PointPrompt& p) {
    if (p.iteration < 0) throw std::invalid_argument("prompt iteration must be non-negative");
    if (!prompts_.empty() && p.iteration < prompts_.back().iteration)
        throw std::invalid_argument("prompt iterations must be non-decreasing");
    if (contains(p.index, p.polarity)) throw std::invalid_argument("duplicate prompt (index, polarity)");
    prompts_.push_back(p);
}

bool PromptSet::contains(const Index3& index, Polarity polarity) const {
    return std::any_of(prompts_.begin(), prompts_.end(),
                       [&](const PointPrompt& q) { return q.index == index && q.polarity == polarity; });
}

std::size_t PromptSet::count(Polarity p) const {
    return static_cast<std::size_t>(
        std::count_if(prompts_.begin(), prompts_.end(), [p](const PointPrompt& q) { return q.polarity == p; }));
}

}  // namespace petseg
