#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "shill/evaluation.hpp"
#include "support/fixtures.hpp"

using namespace shill;
using namespace shill::testsupport;

namespace {

struct StubVictim final : Victim {
    Tensor scores;  // users x items
    void fit(const RatingMatrix&, std::uint64_t) override {}
    double predict(std::size_t u, std::size_t i) const override { return scores.at(u, i); }
    std::vector<double> scores_row(std::size_t u) const override {
        return std::vector<double>(scores.row_ptr(u), scores.row_ptr(u) + scores.cols);
    }
    std::size_t num_users() const override { return scores.rows; }
    std::size_t num_items() const override { return scores.cols; }
    const char* name() const override { return "stub"; }
};

// Full-sort re-ranking oracle for the hit ratio.
double hit_ratio_brute(const StubVictim& v, const RatingMatrix& train, std::size_t target,
                       std::size_t k, std::size_t num_eval) {
    std::size_t evaluated = 0, hits = 0;
    for (std::size_t u = 0; u < num_eval; ++u) {
        if (train.has_rating(u, target)) continue;
        ++evaluated;
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t i = 0; i < train.num_items(); ++i)
            if (!train.has_rating(u, i)) ranked.emplace_back(-v.scores.at(u, i), i);
        std::sort(ranked.begin(), ranked.end());
        for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r)
            if (ranked[r].second == target) {
                ++hits;
                break;
            }
    }
    return evaluated ? static_cast<double>(hits) / static_cast<double>(evaluated) : -1.0;
}

// Diverse real users drawn from 3 tight taste groups over a shared popular
// core, plus identical clone rows that match none of the taste directions.
RatingMatrix clone_fixture(std::size_t clones, Rng& rng) {
    RatingMatrixBuilder b;
    const std::size_t per_group = 40, core = 10, block = 13;
    for (std::size_t g = 0; g < 3; ++g)
        for (std::size_t u = 0; u < per_group; ++u) {
            std::string uid = "real" + std::to_string(g * per_group + u);
            for (std::size_t j = 0; j < core; ++j)
                b.add(uid, "i" + std::to_string(j), rng.uniform() < 0.3 ? 4.0 : 5.0);
            for (std::size_t j = 0; j < block; ++j)
                b.add(uid, "i" + std::to_string(core + g * block + j), 5.0);
        }
    for (std::size_t c = 0; c < clones; ++c) {
        std::string uid = "clone" + std::to_string(c);
        b.add(uid, "i11", 5.0);
        b.add(uid, "i25", 5.0);
        b.add(uid, "i40", 5.0);
        b.add(uid, "i48", 1.0);
    }
    return b.build();
}

}  // namespace

TEST_CASE("hit ratio worked cases") {
    // item indices by first appearance: A=0, B=1, C=2, D=3 (D = target)
    RatingMatrixBuilder bld;
    bld.add("u0", "A", 5);
    bld.add("u0", "B", 3);
    bld.add("u1", "A", 4);
    bld.add("u1", "C", 2);
    bld.add("u2", "D", 1);
    RatingMatrix train = bld.build();

    StubVictim v;
    v.scores = Tensor(3, 4);
    // u0 candidates {C, D}: D on top -> hit at K=1
    v.scores.at(0, 3) = 2.0;
    v.scores.at(0, 2) = 1.0;
    // u1 candidates {B, D}: B on top -> miss at K=1, hit at K=2
    v.scores.at(1, 1) = 2.0;
    v.scores.at(1, 3) = 1.0;
    CHECK(hit_ratio(v, train, 3, 1, 2) == 0.5);
    CHECK(hit_ratio(v, train, 3, 2, 2) == 1.0);
    CHECK(hit_ratio(v, train, 3, 100, 2) == 1.0);  // K beyond the catalog

    // users who rated the target never enter the denominator
    CHECK_THROWS_AS(hit_ratio(v, train, 0, 1, 2), ValidationError);  // both rated A
}

TEST_CASE("hit ratio requires evaluation users") {
    RatingMatrix train = dense_matrix({{5, 3}});
    StubVictim v;
    v.scores = Tensor(1, 2);
    CHECK_THROWS_AS(hit_ratio(v, train, 0, 1, 1), ValidationError);  // everyone rated it
}

TEST_CASE("hit ratio equals the full-sort oracle on random fixtures") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        std::size_t users = 5 + rng.below(16), items = 5 + rng.below(26);
        RatingMatrix train = random_matrix(rng, users, items, 0.4);
        StubVictim v;
        v.scores = Tensor(train.num_users(), train.num_items());
        for (auto& s : v.scores.v) s = rng.gaussian();
        std::size_t target = rng.below(train.num_items());
        std::size_t k = 1 + rng.below(10);
        double brute = hit_ratio_brute(v, train, target, k, train.num_users());
        if (brute < 0.0) continue;  // no eval users in this draw
        CHECK(hit_ratio(v, train, target, k, train.num_users()) == brute);
    }
}

TEST_CASE("precision and recall") {
    CHECK(precision_recall({1, 2, 3}, {1, 2, 3}) == std::pair<double, double>{1.0, 1.0});
    CHECK(precision_recall({4, 5}, {1, 2}) == std::pair<double, double>{0.0, 0.0});
    CHECK(precision_recall({}, {1}) == std::pair<double, double>{0.0, 0.0});
    auto [p, r] = precision_recall({1, 2}, {2, 3});
    CHECK(p == 0.5);
    CHECK(r == 0.5);
}

TEST_CASE("precision equals recall whenever the set sizes match") {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        std::size_t n = 1 + rng.below(20);
        auto flagged = rng.sample_without_replacement(50, n);
        auto truth = rng.sample_without_replacement(50, n);
        auto [p, r] = precision_recall(flagged, truth);
        CHECK(p == r);
    }
}

TEST_CASE("detector flags clone profiles") {
    Rng rng(11);
    RatingMatrix m = clone_fixture(10, rng);
    REQUIRE(m.num_users() == 130);
    DetectionResult res = detect(m, 10, 3);
    CHECK(res.components_used == 3);
    std::size_t caught = 0;
    for (std::size_t u : res.flagged)
        if (m.user_id(u).rfind("clone", 0) == 0) ++caught;
    CHECK(caught >= 8);  // recall >= 0.8 on the clone fixture
}

TEST_CASE("detector edge cases") {
    Rng rng(13);
    RatingMatrix m = random_matrix(rng, 12, 10, 0.5);
    CHECK(detect(m, 0, 3).flagged.empty());
    DetectionResult all = detect(m, m.num_users(), 3);
    CHECK(all.flagged.size() == m.num_users());
    CHECK_THROWS_AS(detect(m, m.num_users() + 1, 3), ValidationError);
    CHECK_THROWS_AS(detect(m, 1, 0), ValidationError);

    // rank-deficient input: identical rows leave a single usable component
    RatingMatrix flat = dense_matrix({{5, 3, 1}, {5, 3, 1}, {5, 3, 1}, {5, 3, 1}});
    DetectionResult d = detect(flat, 1, 3);
    CHECK(d.components_used < 3);
}

TEST_CASE("projection export format") {
    RatingMatrix m = dense_matrix({{5, 1, 3, 0}, {5, 1, 3, 0}, {1, 5, 0, 3}, {2, 4, 1, 0}});
    std::string path = (std::filesystem::temp_directory_path() / "proj.csv").string();
    export_projection(m, {false, false, true, true}, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "user_id,x,y,is_fake");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    REQUIRE(lines.size() == m.num_users());

    // identical rows project to identical coordinates
    auto coords = [](const std::string& l) {
        auto p1 = l.find(','), p2 = l.find(',', l.find(',') + 1);
        auto p3 = l.rfind(',');
        return l.substr(p1 + 1, p3 - p1 - 1) + "|" + l.substr(p2 + 1);
    };
    CHECK(coords(lines[0]) == coords(lines[1]));
    CHECK(lines[2].back() == '1');

    CHECK_THROWS_AS(export_projection(m, {true}, path), ValidationError);
}

TEST_CASE("run_attack_cell with the null attacker is a fixed point") {
    Rng rng(17);
    RatingMatrix base = random_matrix(rng, 25, 15, 0.45);
    DatasetSplit ds = split(base, 0.2, 3);
    AttackBudget budget = make_budget(3, 4, {}, {2});
    AttackFn none = [](const RatingMatrix&, const AttackBudget&, std::uint64_t) {
        return AttackOutcome{};
    };
    VictimConfig vc;
    vc.svd_factors = 4;
    vc.svd_epochs = 15;
    CellSeeds seeds{101, 202};
    ExperimentReport rep = run_attack_cell(ds, "none", none, VictimKind::svd, vc, budget, seeds,
                                           DetectorConfig{3, 2}, 5);
    CHECK(rep.hr_after == rep.hr_before);  // bit-for-bit
    CHECK(rep.users_after == rep.users_before);
    CHECK(rep.precision == 0.0);
    CHECK(rep.recall == 0.0);
}

TEST_CASE("run_attack_cell records injection and detection accounting") {
    Rng rng(19);
    RatingMatrix base = random_matrix(rng, 30, 15, 0.45);
    DatasetSplit ds = split(base, 0.2, 5);
    AttackBudget budget = make_budget(5, 4, {}, {3});
    AttackFn rnd = [](const RatingMatrix& train, const AttackBudget& b, std::uint64_t seed) {
        return AttackOutcome{random_attack(stats(train), b, seed), {}};
    };
    VictimConfig vc;
    vc.svd_factors = 4;
    vc.svd_epochs = 15;
    CellSeeds seeds{7, 8};
    DetectorConfig dc{0, 2};  // num_flag 0 -> flag as many as injected
    ExperimentReport rep =
        run_attack_cell(ds, "random", rnd, VictimKind::svd, vc, budget, seeds, dc, 5);
    CHECK(rep.users_after == rep.users_before + 5);
    CHECK(rep.flagged == 5);
    CHECK(rep.precision == rep.recall);  // |flagged| == |truth|
    CHECK(rep.hr_before >= 0.0);
    CHECK(rep.hr_after >= 0.0);
    CHECK(rep.attacker == "random");
    CHECK(rep.target_ext == ds.train.item_id(3));

    ExperimentReport rep2 =
        run_attack_cell(ds, "random", rnd, VictimKind::svd, vc, budget, seeds, dc, 5);
    CHECK(rep2.hr_before == rep.hr_before);
    CHECK(rep2.hr_after == rep.hr_after);

    AttackBudget two_targets = make_budget(5, 4, {}, {3, 4});
    CHECK_THROWS_AS(
        run_attack_cell(ds, "random", rnd, VictimKind::svd, vc, two_targets, seeds, dc, 5),
        ValidationError);
}
