#include "mbw/label_set.hpp"

#include "mbw/errors.hpp"

namespace mbw {

std::string_view to_string(LabelSource source)
{
    switch (source)
    {
    case LabelSource::Manual:
        return "manual";
    case LabelSource::Flow:
        return "flow";
    case LabelSource::Detector:
        return "detector";
    }
    return "unknown";
}

bool LabelSet::insert(FrameView key, LabelEntry entry)
{
    if (entry.source != LabelSource::Manual && !entry.points.complete())
        throw IncompleteInput("non-manual labels must be complete");
    if (entry.score && *entry.score < 0.0)
        throw Error("label score must be non-negative");
    auto it = entries_.find(key);
    if (it != entries_.end())
    {
        if (it->second.source == LabelSource::Manual)
            return false;
        it->second = std::move(entry);
        return true;
    }
    entries_.emplace(key, std::move(entry));
    return true;
}

const LabelEntry* LabelSet::find(FrameView key) const
{
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

std::size_t LabelSet::count(LabelSource source) const
{
    std::size_t n = 0;
    for (const auto& [key, e] : entries_)
        n += e.source == source ? 1 : 0;
    return n;
}

LabelSet LabelSet::manual_only() const
{
    LabelSet out;
    for (const auto& [key, e] : entries_)
        if (e.source == LabelSource::Manual)
            out.entries_.emplace(key, e);
    return out;
}

bool operator==(const LabelSet& a, const LabelSet& b)
{
    if (a.entries_.size() != b.entries_.size())
        return false;
    auto ia = a.entries_.begin();
    auto ib = b.entries_.begin();
    for (; ia != a.entries_.end(); ++ia, ++ib)
    {
        const auto& ea = ia->second;
        const auto& eb = ib->second;
        if (ia->first != ib->first || ea.source != eb.source || ea.denoised != eb.denoised || ea.score != eb.score)
            return false;
        if (ea.points.size() != eb.points.size() || (ea.points.missing != eb.points.missing).any())
            return false;
        for (Eigen::Index i = 0; i < ea.points.size(); ++i)
            if (!ea.points.missing(i) && ea.points.points.row(i) != eb.points.points.row(i))
                return false;
    }
    return true;
}

}  // namespace mbw
