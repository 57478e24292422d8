#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace gridlevels;
using Catch::Approx;

TEST_CASE("default multilevel build matches the documented shape", "[network]") {
    MultilevelConfig cfg;
    cfg.seed = 42;
    const NetworkGraph g = build_multilevel(cfg);
    CHECK(g.size() == 111);
    CHECK(g.lines.size() == 110);
    CHECK(g.level_sets.at(5).size() == 1);
    CHECK(g.level_sets.at(4).size() == 10);
    CHECK(g.level_sets.at(3).size() == 100);
    CHECK(g.nodes[g.reference].level == 3);
    CHECK(g.reference == 11);  // ids are level-major, reference is the first Level-3 node

    SECTION("same seed reproduces the graph field-for-field") {
        const NetworkGraph g2 = build_multilevel(cfg);
        REQUIRE(g2.size() == g.size());
        for (int i = 0; i < g.size(); ++i) {
            CHECK(g.nodes[i].m == g2.nodes[i].m);
            CHECK(g.nodes[i].d == g2.nodes[i].d);
            CHECK(g.nodes[i].tau == g2.nodes[i].tau);
            CHECK(g.nodes[i].k == g2.nodes[i].k);
            CHECK(g.nodes[i].p_inj == g2.nodes[i].p_inj);
            CHECK(g.nodes[i].q_inj == g2.nodes[i].q_inj);
            CHECK(g.nodes[i].p_load == g2.nodes[i].p_load);
        }
        for (std::size_t l = 0; l < g.lines.size(); ++l) {
            CHECK(g.lines[l].from == g2.lines[l].from);
            CHECK(g.lines[l].to == g2.lines[l].to);
            CHECK(g.lines[l].b == g2.lines[l].b);
        }
    }

    SECTION("a different seed changes the draw") {
        cfg.seed = 43;
        const NetworkGraph g3 = build_multilevel(cfg);
        CHECK(g.nodes[0].m != g3.nodes[0].m);
    }
}

TEST_CASE("builder rejects invalid configs", "[network]") {
    MultilevelConfig cfg;
    SECTION("nonpositive parameter range") {
        cfg.level3.k = {0.0, 2.0};
        CHECK_THROWS_AS(build_multilevel(cfg), ConfigError);
    }
    SECTION("counts below one") {
        cfg.count_l4 = 0;
        CHECK_THROWS_AS(build_multilevel(cfg), ConfigError);
    }
    SECTION("inertia ranges must decrease between levels") {
        cfg.level4.m = {3.0, 20.0};
        CHECK_THROWS_AS(build_multilevel(cfg), ConfigError);
    }
}

TEST_CASE("validate_static on built and mutated graphs", "[network]") {
    MultilevelConfig cfg;
    cfg.seed = 7;
    NetworkGraph g = build_multilevel(cfg);
    SECTION("built graph passes every clause") {
        const ValidationReport rep = validate_static(g);
        for (const auto& c : rep.clauses) {
            INFO(c.name << ": " << c.detail);
            CHECK(c.pass);
        }
        CHECK(rep.all_pass);
    }
    SECTION("conductance on one line fails the lossless clause and names it") {
        g.lines[3].g = 0.1;
        const ValidationReport rep = validate_static(g);
        CHECK_FALSE(rep.all_pass);
        const auto* clause = rep.find("lossless");
        REQUIRE(clause != nullptr);
        CHECK_FALSE(clause->pass);
        CHECK(clause->detail.find("3") != std::string::npos);
        CHECK(rep.find("inertia_ordering")->pass);
    }
    SECTION("a heavy Level-4 node fails the inertia ordering clause") {
        g.nodes[1].m = 100.0;  // node 1 is Level 4
        const ValidationReport rep = validate_static(g);
        CHECK_FALSE(rep.all_pass);
        CHECK_FALSE(rep.find("inertia_ordering")->pass);
    }
    SECTION("negative susceptance is flagged") {
        g.lines[0].b = -1.0;
        CHECK_FALSE(validate_static(g).find("susceptance_positive")->pass);
    }
}

TEST_CASE("multilevel graphs are trees reaching every node", "[network][property]") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5, 6, 7, 8}) {
        MultilevelConfig cfg;
        cfg.seed = seed;
        cfg.count_l4 = 2 + static_cast<int>(seed % 4);
        cfg.count_l3 = 5 + static_cast<int>(seed % 11);
        const NetworkGraph g = build_multilevel(cfg);
        const Adjacency adj = Adjacency::build(g);
        CHECK(static_cast<int>(adj.bfs_order.size()) == g.size());
        CHECK(static_cast<int>(g.lines.size()) == g.size() - 1);
        int roots = 0;
        for (int i = 0; i < g.size(); ++i)
            if (adj.parent[i] < 0) ++roots;
        CHECK(roots == 1);
        CHECK(validate_static(g).all_pass);
    }
}

TEST_CASE("bottom-up demand aggregation", "[network]") {
    MultilevelConfig cfg;
    cfg.seed = 11;
    const NetworkGraph g = build_multilevel(cfg);

    SECTION("uniform unit demand aggregates by level size") {
        std::unordered_map<int, double> demand;
        for (int id : g.level_sets.at(3)) demand[id] = 1.0;
        const auto agg = aggregate_demand_bottom_up(g, demand);
        for (int id : g.level_sets.at(4)) CHECK(agg.at(id) == Approx(10.0).epsilon(1e-12));
        CHECK(agg.at(0) == Approx(100.0).epsilon(1e-12));
    }
    SECTION("zero demand aggregates to zero") {
        std::unordered_map<int, double> demand;
        for (int id : g.level_sets.at(3)) demand[id] = 0.0;
        const auto agg = aggregate_demand_bottom_up(g, demand);
        for (const auto& [id, v] : agg) CHECK(v == 0.0);
    }
    SECTION("a single loaded node propagates along its path only") {
        const int leaf = g.level_sets.at(3)[5];
        const Adjacency adj = Adjacency::build(g);
        const auto agg = aggregate_demand_bottom_up(g, {{leaf, 2.5}});
        CHECK(agg.at(leaf) == 2.5);
        CHECK(agg.at(adj.parent[leaf]) == 2.5);
        CHECK(agg.at(0) == 2.5);
        for (int id : g.level_sets.at(4))
            if (id != adj.parent[leaf]) CHECK(agg.at(id) == 0.0);
    }
    SECTION("demand keyed by a non Level-3 node is rejected") {
        CHECK_THROWS_AS(aggregate_demand_bottom_up(g, {{0, 1.0}}), KeyError);
        CHECK_THROWS_AS(aggregate_demand_bottom_up(g, {{-3, 1.0}}), KeyError);
    }
    SECTION("root aggregate conserves the total demand") {
        Rng rng(99);
        for (int rep = 0; rep < 10; ++rep) {
            std::unordered_map<int, double> demand;
            double total = 0.0;
            for (int id : g.level_sets.at(3)) {
                demand[id] = rng.uniform(0.0, 3.0);
                total += demand[id];
            }
            const auto agg = aggregate_demand_bottom_up(g, demand);
            CHECK(agg.at(0) == Approx(total).epsilon(1e-12));
        }
    }
}

TEST_CASE("graph serialization round-trips losslessly", "[network]") {
    MultilevelConfig cfg;
    cfg.seed = 2024;
    const NetworkGraph g = build_multilevel(cfg);
    const json doc = graph_to_json(g);
    const NetworkGraph h = graph_from_json(json::parse(doc.dump()));
    REQUIRE(h.size() == g.size());
    CHECK(h.reference == g.reference);
    CHECK(h.seed == g.seed);
    for (int i = 0; i < g.size(); ++i) {
        CHECK(h.nodes[i].level == g.nodes[i].level);
        CHECK(h.nodes[i].m == g.nodes[i].m);
        CHECK(h.nodes[i].d == g.nodes[i].d);
        CHECK(h.nodes[i].tau == g.nodes[i].tau);
        CHECK(h.nodes[i].k == g.nodes[i].k);
        CHECK(h.nodes[i].p_inj == g.nodes[i].p_inj);
        CHECK(h.nodes[i].p_sol == g.nodes[i].p_sol);
        CHECK(h.nodes[i].p_wind == g.nodes[i].p_wind);
        CHECK(h.nodes[i].p_bm == g.nodes[i].p_bm);
        CHECK(h.nodes[i].p_nuclear == g.nodes[i].p_nuclear);
        CHECK(h.nodes[i].p_load == g.nodes[i].p_load);
        CHECK(h.nodes[i].q_inj == g.nodes[i].q_inj);
        CHECK(h.nodes[i].q_load == g.nodes[i].q_load);
    }
    for (std::size_t l = 0; l < g.lines.size(); ++l) {
        CHECK(h.lines[l].from == g.lines[l].from);
        CHECK(h.lines[l].to == g.lines[l].to);
        CHECK(h.lines[l].b == g.lines[l].b);
        CHECK(h.lines[l].g == g.lines[l].g);
    }
    CHECK(h.level_sets == g.level_sets);
}

TEST_CASE("structural validation catches malformed graphs", "[network]") {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(3), q = Eigen::VectorXd::Zero(3);
    SECTION("two parents") {
        NetworkGraph g = gltest::make_toy(3, {{0, 2, 1.0}, {1, 2, 1.0}}, p, q);
        CHECK_THROWS_AS(validate_structure(g), ConfigError);
    }
    SECTION("nuclear injection below Level 5") {
        NetworkGraph g = gltest::make_toy(3, {{0, 1, 1.0}, {1, 2, 1.0}}, p, q);
        g.nodes[2].p_nuclear = 0.5;
        CHECK_THROWS_AS(validate_structure(g), ConfigError);
    }
    SECTION("breakdown identity violated") {
        NetworkGraph g = gltest::make_toy(3, {{0, 1, 1.0}, {1, 2, 1.0}}, p, q);
        g.nodes[1].p_inj = 0.25;
        CHECK_THROWS_AS(validate_structure(g), ConfigError);
    }
    SECTION("builder output is structurally valid") {
        MultilevelConfig cfg;
        cfg.seed = 5;
        CHECK_NOTHROW(validate_structure(build_multilevel(cfg)));
    }
}

TEST_CASE("nuclear share appears only at Level 5 in built graphs", "[network]") {
    MultilevelConfig cfg;
    cfg.seed = 3;
    const NetworkGraph g = build_multilevel(cfg);
    for (const auto& nd : g.nodes) {
        if (nd.level == 5)
            CHECK(nd.p_nuclear > 0.0);
        else
            CHECK(nd.p_nuclear == 0.0);
    }
}
