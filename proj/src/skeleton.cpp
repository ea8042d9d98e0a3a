#include "mbw/skeleton.hpp"

#include <string>

#include "mbw/errors.hpp"

namespace mbw {

void SkeletonDef::validate() const
{
    const auto n = static_cast<int>(joint_names.size());
    for (const auto& [a, b] : bones)
        if (a < 0 || b < 0 || a >= n || b >= n)
            throw Error("skeleton bone references a joint outside [0, " + std::to_string(n) + ")");
    if (head_bone < 0 || head_bone >= static_cast<int>(bones.size()))
        throw Error("skeleton head bone index out of range");
}

SkeletonDef SkeletonDef::humanoid12()
{
    SkeletonDef s;
    s.joint_names = {"head",    "neck",    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
                     "l_wrist", "r_wrist", "l_hip",      "r_hip",      "l_knee",  "r_knee"};
    s.bones = {{0, 1}, {1, 2}, {1, 3}, {2, 4}, {3, 5}, {4, 6}, {5, 7}, {1, 8}, {1, 9}, {8, 10}, {9, 11}};
    s.head_bone = 0;
    return s;
}

SkeletonDef SkeletonDef::chain(int num_points)
{
    if (num_points < 2)
        throw Error("chain skeleton needs at least 2 joints");
    SkeletonDef s;
    for (int i = 0; i < num_points; ++i)
        s.joint_names.push_back("j" + std::to_string(i));
    for (int i = 0; i + 1 < num_points; ++i)
        s.bones.emplace_back(i, i + 1);
    s.head_bone = 0;
    return s;
}

}  // namespace mbw
