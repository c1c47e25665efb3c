#pragma once

#include "petseg/volume.hpp"

#include <string_view>
#include <vector>

namespace petseg {

enum class Polarity { positive, negative };

std::string_view to_string(Polarity p);
Polarity parse_polarity(std::string_view s);

/// A click at a voxel. Positive marks foreground, negative marks background.
struct PointPrompt {
    Index3 index = Index3::Zero();
    Polarity polarity = Polarity::positive;
    int iteration = 0;

    friend bool operator==(const PointPrompt& a, const PointPrompt& b) {
        return a.index == b.index && a.polarity == b.polarity && a.iteration == b.iteration;
    }
};

/// Accumulated clicks, ordered by iteration then insertion.
class PromptSet {
public:
    /// Throws std::invalid_argument when the iteration decreases or (index, polarity) repeats.
    void add(const PointPrompt& p);
    bool contains(const Index3& index, Polarity polarity) const;

    const std::vector<PointPrompt>& prompts() const noexcept { return prompts_; }
    std::size_t size() const noexcept { return prompts_.size(); }
    bool empty() const noexcept { return prompts_.empty(); }
    const PointPrompt& front() const { return prompts_.front(); }
    const PointPrompt& back() const { return prompts_.back(); }
    auto begin() const noexcept { return prompts_.begin(); }
    auto end() const noexcept { return prompts_.end(); }

    /// -1 when empty.
    int max_iteration() const noexcept { return prompts_.empty() ? -1 : prompts_.back().iteration; }
    std::size_t count(Polarity p) const;

private:
    std::vector<PointPrompt> prompts_;
};

}  // namespace petseg
