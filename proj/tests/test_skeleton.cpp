#include <catch2/catch_amalgamated.hpp>

#include "pot/skeleton.hpp"
#include "support.hpp"

using namespace pot;

TEST_CASE("canonical skeleton is a valid 17-joint tree", "[skeleton]") {
    Skeleton s = canonical_skeleton();
    CHECK(s.num_joints == 17);
    CHECK(s.edges.size() == 16);  // a tree on 17 nodes
    CHECK(s.root == 0);
}

TEST_CASE("build_skeleton rejects bad graphs", "[skeleton]") {
    CHECK_THROWS_AS(build_skeleton(3, {{0, 1}}, 0), DisconnectedGraph);
    CHECK_THROWS_AS(build_skeleton(3, {{0, 1}, {1, 5}}, 0), IndexOutOfRange);
    CHECK_THROWS_AS(build_skeleton(3, {{0, 0}, {0, 1}, {1, 2}}, 0), SelfLoop);
    CHECK_THROWS_AS(build_skeleton(3, {{0, 1}, {1, 0}, {1, 2}}, 0), DuplicateEdge);
    CHECK_THROWS_AS(build_skeleton(3, {{0, 1}, {1, 2}}, 3), IndexOutOfRange);

    // missing limb chain
    auto edges = human17_edges();
    edges.resize(13);
    CHECK_THROWS_AS(build_skeleton(17, edges, 0), DisconnectedGraph);

    // smallest connected case
    Skeleton two = build_skeleton(2, {{0, 1}}, 0);
    CHECK(two.num_joints == 2);
}

TEST_CASE("distance matrix matches hand-counted hops on the canonical tree", "[skeleton]") {
    Skeleton s = canonical_skeleton();
    DistMatrix d = distance_matrix(s);
    CHECK(d.at(0, 0) == 0);
    CHECK(d.at(0, 2) == 2);    // pelvis - r_hip - r_knee
    CHECK(d.at(0, 16) == 5);   // wrist sits five hops out
    CHECK(d.at(3, 6) == 6);    // ankle to ankle across the pelvis
}

TEST_CASE("distance matrix equals the all-pairs oracle", "[skeleton]") {
    Skeleton s = canonical_skeleton();
    DistMatrix d = distance_matrix(s);
    auto oracle = support::floyd_warshall(s.num_joints, s.edges);
    for (int i = 0; i < 17; ++i)
        for (int j = 0; j < 17; ++j) CHECK(d.at(i, j) == oracle[i][j]);
}

TEST_CASE("distance matrix properties on random connected graphs", "[skeleton]") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_u64() % 11);  // up to 12 joints
        auto edges = support::random_connected_edges(n, rng);
        Skeleton s = build_skeleton(n, edges, 0);
        DistMatrix d = distance_matrix(s);
        auto oracle = support::floyd_warshall(n, edges);
        for (int i = 0; i < n; ++i) {
            REQUIRE(d.at(i, i) == 0);
            for (int j = 0; j < n; ++j) {
                REQUIRE(d.at(i, j) == oracle[i][j]);
                REQUIRE(d.at(i, j) == d.at(j, i));
                for (int k = 0; k < n; ++k) REQUIRE(d.at(i, j) <= d.at(i, k) + d.at(k, j));
            }
        }
    }
}

TEST_CASE("group assignment follows the clamped distance rule", "[skeleton]") {
    Skeleton s = canonical_skeleton();
    DistMatrix d = distance_matrix(s);
    GroupAssignment g = assign_groups(d, 0, 5);
    CHECK(g.group[0] == 0);  // root

    // hand-run BFS table for the canonical tree
    const std::vector<int> expected = {0, 1, 2, 3, 1, 2, 3, 1, 2, 3, 4, 3, 4, 4, 3, 4, 4};
    CHECK(g.group == expected);

    // clamp: a joint at hop 7 lands in the last group
    Skeleton chain = support::path_skeleton(8);
    GroupAssignment gc = assign_groups(distance_matrix(chain), 0, 5);
    CHECK(gc.group[7] == 4);

    // idempotent and only dependent on the root column
    GroupAssignment g2 = assign_groups(d, 0, 5);
    CHECK(g2.group == g.group);
    DistMatrix scrambled = d;
    for (int i = 0; i < 17; ++i)
        for (int j = 1; j < 17; ++j) scrambled.at(i, j) = 99;  // root column untouched
    CHECK(assign_groups(scrambled, 0, 5).group == g.group);
}

TEST_CASE("skeleton json round trip", "[skeleton]") {
    Skeleton s = canonical_skeleton();
    Skeleton back = skeleton_from_json(skeleton_to_json(s));
    CHECK(back.num_joints == s.num_joints);
    CHECK(back.root == s.root);
    CHECK(back.edges == s.edges);

    nlohmann::json doc = {{"num_joints", 2}, {"root", 0}, {"edges", {{0, 1}}}};
    CHECK(skeleton_from_json(doc).num_joints == 2);
    nlohmann::json bad = {{"num_joints", 2}, {"edges", {{0, 1}}}};
    CHECK_THROWS_AS(skeleton_from_json(bad), SchemaViolation);
}
