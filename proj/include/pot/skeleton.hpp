#pragma once

#include <algorithm>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pot/errors.hpp"

namespace pot {

// Body graph: joints are nodes, bones are undirected edges. Immutable once
// built; shareable across threads.
struct Skeleton {
    int num_joints = 0;
    std::vector<std::pair<int, int>> edges;
    int root = 0;

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(static_cast<std::size_t>(num_joints));
        for (auto [a, b] : edges) {
            adj[static_cast<std::size_t>(a)].push_back(b);
            adj[static_cast<std::size_t>(b)].push_back(a);
        }
        return adj;
    }
};

// All-pairs hop counts between joints.
struct DistMatrix {
    int num_joints = 0;
    std::vector<int> d;  // row-major J x J

    int at(int i, int j) const {
        return d[static_cast<std::size_t>(i) * num_joints + j];
    }
    int& at(int i, int j) { return d[static_cast<std::size_t>(i) * num_joints + j]; }
};

// Joint partition by hop distance from the root, clamped into the last group.
struct GroupAssignment {
    std::vector<int> group;
    int num_groups = 5;
};

inline Skeleton build_skeleton(int num_joints, std::vector<std::pair<int, int>> edges, int root) {
    if (num_joints <= 0) throw IndexOutOfRange("num_joints " + std::to_string(num_joints));
    if (root < 0 || root >= num_joints) throw IndexOutOfRange("root " + std::to_string(root));
    std::set<std::pair<int, int>> seen;
    for (auto& [a, b] : edges) {
        if (a < 0 || a >= num_joints || b < 0 || b >= num_joints)
            throw IndexOutOfRange("edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
        if (a == b) throw SelfLoop("joint " + std::to_string(a));
        auto key = std::minmax(a, b);
        if (!seen.insert(key).second)
            throw DuplicateEdge("(" + std::to_string(key.first) + "," + std::to_string(key.second) + ")");
    }
    Skeleton s{num_joints, std::move(edges), root};

    // connectivity check via BFS from the root
    std::vector<char> visited(static_cast<std::size_t>(num_joints), 0);
    std::queue<int> q;
    q.push(root);
    visited[static_cast<std::size_t>(root)] = 1;
    int reached = 1;
    auto adj = s.adjacency();
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : adj[static_cast<std::size_t>(u)])
            if (!visited[static_cast<std::size_t>(v)]) {
                visited[static_cast<std::size_t>(v)] = 1;
                ++reached;
                q.push(v);
            }
    }
    if (reached != num_joints)
        throw DisconnectedGraph(std::to_string(num_joints - reached) + " joints unreachable");
    return s;
}

// BFS from every joint. Distances are exact hop counts.
inline DistMatrix distance_matrix(const Skeleton& s) {
    const int j = s.num_joints;
    DistMatrix m;
    m.num_joints = j;
    m.d.assign(static_cast<std::size_t>(j) * j, -1);
    auto adj = s.adjacency();
    for (int src = 0; src < j; ++src) {
        m.at(src, src) = 0;
        std::queue<int> q;
        q.push(src);
        while (!q.empty()) {
            int u = q.front();
            q.pop();
            for (int v : adj[static_cast<std::size_t>(u)])
                if (m.at(src, v) < 0) {
                    m.at(src, v) = m.at(src, u) + 1;
                    q.push(v);
                }
        }
    }
    return m;
}

inline GroupAssignment assign_groups(const DistMatrix& d, int root, int num_groups) {
    if (num_groups < 1) throw ConfigError("num_groups " + std::to_string(num_groups));
    GroupAssignment g;
    g.num_groups = num_groups;
    g.group.resize(static_cast<std::size_t>(d.num_joints));
    for (int i = 0; i < d.num_joints; ++i)
        g.group[static_cast<std::size_t>(i)] = std::min(d.at(i, root), num_groups - 1);
    return g;
}

// 17-joint Human3.6M tree, pelvis-rooted. The standard convention for
// 2D-to-3D lifting.
inline const std::vector<std::string>& human17_joint_names() {
    static const std::vector<std::string> names = {
        "pelvis",     "r_hip",      "r_knee",  "r_ankle", "l_hip",   "l_knee",
        "l_ankle",    "spine",      "thorax",  "neck",    "head",    "l_shoulder",
        "l_elbow",    "l_wrist",    "r_shoulder", "r_elbow", "r_wrist"};
    return names;
}

inline const std::vector<std::pair<int, int>>& human17_edges() {
    static const std::vector<std::pair<int, int>> edges = {
        {0, 1},  {1, 2},  {2, 3},   // right leg
        {0, 4},  {4, 5},  {5, 6},   // left leg
        {0, 7},  {7, 8},            // spine chain
        {8, 9},  {9, 10},           // neck, head
        {8, 11}, {11, 12}, {12, 13},  // left arm
        {8, 14}, {14, 15}, {15, 16}}; // right arm
    return edges;
}

inline Skeleton canonical_skeleton() { return build_skeleton(17, human17_edges(), 0); }

inline Skeleton skeleton_from_json(const nlohmann::json& j) {
    try {
        const int num_joints = j.at("num_joints").get<int>();
        const int root = j.at("root").get<int>();
        std::vector<std::pair<int, int>> edges;
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 2) throw SchemaViolation("edge entry must be a pair");
            edges.emplace_back(e[0].get<int>(), e[1].get<int>());
        }
        return build_skeleton(num_joints, std::move(edges), root);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaViolation(std::string("skeleton json: ") + e.what());
    }
}

inline nlohmann::json skeleton_to_json(const Skeleton& s) {
    nlohmann::json j;
    j["num_joints"] = s.num_joints;
    j["root"] = s.root;
    auto& edges = j["edges"] = nlohmann::json::array();
    for (auto [a, b] : s.edges) edges.push_back({a, b});
    return j;
}

}  // namespace pot
