#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string_view>

#include "mbw/types.hpp"

namespace mbw {

enum class LabelSource
{
    Manual,
    Flow,
    Detector
};

std::string_view to_string(LabelSource source);

struct LabelEntry
{
    Landmarks2D points;
    LabelSource source = LabelSource::Manual;
    bool denoised = false;
    std::optional<double> score;
};

/// The evolving labeled set, keyed by (frame, view).
///
/// Manual entries are write-once: later insertions at a manual key are ignored.
/// Non-manual entries must be complete.
class LabelSet
{
public:
    using Map = std::map<FrameView, LabelEntry>;

    /// Returns false (and leaves the set unchanged) when `key` already holds a manual label.
    bool insert(FrameView key, LabelEntry entry);

    const LabelEntry* find(FrameView key) const;
    bool contains(FrameView key) const { return entries_.contains(key); }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t count(LabelSource source) const;

    /// Only the manual entries.
    LabelSet manual_only() const;

    const Map& entries() const { return entries_; }
    Map::const_iterator begin() const { return entries_.begin(); }
    Map::const_iterator end() const { return entries_.end(); }

    friend bool operator==(const LabelSet& a, const LabelSet& b);

private:
    Map entries_;
};

}  // namespace mbw
