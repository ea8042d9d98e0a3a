#pragma once

#include <string>
#include <utility>
#include <vector>

namespace mbw {

struct SkeletonDef
{
    std::vector<std::string> joint_names;
    std::vector<std::pair<int, int>> bones;
    int head_bone = 0;  ///< index into bones; its length normalizes PCKh

    /// Throws Error when an index is out of range.
    void validate() const;

    /// 12-joint stick figure used by the synthetic generator.
    static SkeletonDef humanoid12();
    /// Joints named j0..j{n-1} connected as a chain; bone 0 is the head bone.
    static SkeletonDef chain(int num_points);
};

}  // namespace mbw
