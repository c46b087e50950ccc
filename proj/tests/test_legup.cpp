#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "shill/legup.hpp"
#include "support/fixtures.hpp"

using namespace shill;
using namespace shill::testsupport;

namespace {

// Linear scan over the five cumulative-threshold segments.
int segment_scan_rating(double x, const std::array<double, 5>& tau) {
    double lo = 0.0;
    for (int k = 0; k < 5; ++k) {
        double hi = lo + tau[k];
        if (x > lo && x <= hi) return k + 1;
        lo = hi;
    }
    return 5;  // x above the last cumulative bound
}

std::array<double, 5> random_tau(Rng& rng) {
    std::array<double, 5> t{};
    double sum = 0.0;
    for (auto& x : t) {
        x = 0.05 + rng.uniform();
        sum += x;
    }
    for (auto& x : t) x /= sum;
    return t;
}

}  // namespace

TEST_CASE("template sampling respects the profile size") {
    // u0 rated 3 items, u1 rated 8
    std::vector<std::vector<double>> rows(2, std::vector<double>(8, 0.0));
    rows[0][0] = 5;
    rows[0][3] = 3;
    rows[0][7] = 4;
    for (std::size_t i = 0; i < 8; ++i) rows[1][i] = 1.0 + (i % 5);
    RatingMatrix m = dense_matrix(rows);

    AttackBudget budget = make_budget(40, 5, {}, {6});
    TemplateBatch tb = sample_templates(m, budget, 4);
    REQUIRE(tb.rows.size() == 40);
    for (std::size_t v = 0; v < tb.rows.size(); ++v) {
        std::size_t u = tb.source_users[v];
        if (u == 0) CHECK(tb.rows[v].size() == 3);  // fewer items than P: keep all
        else CHECK(tb.rows[v].size() == 5);         // exactly P
        for (const auto& [i, r] : tb.rows[v]) CHECK(m.rating(u, i) == r);
    }
    TemplateBatch tb2 = sample_templates(m, budget, 4);
    CHECK(tb2.rows == tb.rows);
    CHECK(tb2.source_users == tb.source_users);
}

TEST_CASE("heaviside approximation: endpoints, center, worked value") {
    Rng rng(3);
    for (int rep = 0; rep < 100; ++rep) {
        double tau = 0.05 + 0.9 * rng.uniform();
        double xi = 0.01 + 0.4 * rng.uniform();
        CHECK(heaviside_soft(0.0, tau, xi) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(heaviside_soft(1.0, tau, xi) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(heaviside_soft(tau, tau, xi) == doctest::Approx(0.5).epsilon(1e-12));
    }
    CHECK(std::fabs(heaviside_soft(0.3, 0.5, 0.1) - 0.18) < 1e-12);
}

TEST_CASE("heaviside approximation is continuous and nondecreasing") {
    Rng rng(5);
    for (int rep = 0; rep < 1000; ++rep) {
        double tau = 0.05 + 0.9 * rng.uniform();
        double xi = 0.01 + 0.4 * rng.uniform();
        double tau_m = std::min(tau, 1.0 - tau);
        for (double bp : {tau - tau_m / 2.0, tau + tau_m / 2.0}) {
            double left = heaviside_soft(std::nextafter(bp, 0.0), tau, xi);
            double right = heaviside_soft(std::nextafter(bp, 1.0), tau, xi);
            CHECK(std::fabs(left - right) <= 1e-12);
        }
        double x1 = rng.uniform(), x2 = rng.uniform();
        if (x1 > x2) std::swap(x1, x2);
        CHECK(heaviside_soft(x1, tau, xi) <= heaviside_soft(x2, tau, xi) + 1e-15);
    }
}

TEST_CASE("heaviside partial derivatives match finite differences") {
    Rng rng(7);
    const double h = 1e-7;
    int checked = 0;
    while (checked < 200) {
        double tau = 0.1 + 0.8 * rng.uniform();
        double xi = 0.05 + 0.3 * rng.uniform();
        double x = rng.uniform();
        double tau_m = std::min(tau, 1.0 - tau);
        // skip the piecewise kinks in x and the tau_m kink at tau = 0.5
        if (std::fabs(x - (tau - tau_m / 2)) < 1e-3 ||
            std::fabs(x - (tau + tau_m / 2)) < 1e-3 || std::fabs(tau - 0.5) < 1e-3)
            continue;
        ++checked;
        HeavisidePartials p = heaviside_soft_partials(x, tau, xi);
        double nx = (heaviside_soft(x + h, tau, xi) - heaviside_soft(x - h, tau, xi)) / (2 * h);
        double nt = (heaviside_soft(x, tau + h, xi) - heaviside_soft(x, tau - h, xi)) / (2 * h);
        CHECK(std::fabs(p.dx - nx) / std::max({1.0, std::fabs(p.dx), std::fabs(nx)}) <= 1e-5);
        CHECK(std::fabs(p.dtau - nt) / std::max({1.0, std::fabs(p.dtau), std::fabs(nt)}) <= 1e-5);
    }
}

TEST_CASE("hard discretization matches the segment-scan oracle") {
    Rng rng(9);
    for (int rep = 0; rep < 10000; ++rep) {
        auto tau = random_tau(rng);
        double x = std::clamp(rng.uniform(), 1e-9, 1.0 - 1e-9);
        CHECK(hard_rating(x, tau) == segment_scan_rating(x, tau));
    }
}

TEST_CASE("uniform thresholds reproduce the rounding table") {
    std::array<double, 5> uniform{0.2, 0.2, 0.2, 0.2, 0.2};
    int expected[] = {1, 1, 2, 2, 3, 3, 4, 4, 5, 5};
    int idx = 0;
    for (double x = 0.05; x < 1.0; x += 0.10, ++idx) {
        CHECK(hard_rating(x, uniform) == expected[idx]);
        CHECK(rounding_rating(x) == expected[idx]);
    }
    // skewed thresholds: cumulative (0.5, 0.7, 0.8, 0.9), x = 0.55 -> 2
    CHECK(hard_rating(0.55, {0.5, 0.2, 0.1, 0.1, 0.1}) == 2);
}

TEST_CASE("soft discretization approaches hard as xi shrinks") {
    Rng rng(11);
    for (int rep = 0; rep < 300; ++rep) {
        auto tau = random_tau(rng);
        double x = std::clamp(rng.uniform(), 0.01, 0.99);
        double cum = 0.0;
        bool near_boundary = false;
        for (int k = 0; k < 4; ++k) {
            cum += tau[k];
            double tm = std::min(cum, 1.0 - cum);
            if (std::fabs(x - cum) <= tm / 2.0) near_boundary = true;
        }
        if (near_boundary) continue;
        for (double xi : {1e-2, 1e-3, 1e-4}) {
            double soft = soft_rating(x, tau, xi);
            double hard = static_cast<double>(hard_rating(x, tau));
            CHECK(std::fabs(soft - hard) <= 5.0 * xi);
        }
    }
}

TEST_CASE("tau rows are a valid simplex with increasing cumulative sums") {
    Rng rng(13);
    Generator gen(GenMode::autoencoder, 6, 4, 8, 1);
    for (auto& v : gen.threshold_logits.v) v = rng.gaussian(0.0, 2.0);
    Tensor tau = gen.tau();
    for (std::size_t v = 0; v < tau.rows; ++v) {
        double sum = 0.0, cum = 0.0, prev = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
            CHECK(tau.at(v, k) > 0.0);
            sum += tau.at(v, k);
        }
        CHECK(std::fabs(sum - 1.0) < 1e-12);
        for (std::size_t k = 0; k < 4; ++k) {
            cum += tau.at(v, k);
            CHECK(cum > prev);
            prev = cum;
        }
    }
}

TEST_CASE("preference learner: zero parameters give 0.5 on the support") {
    RatingMatrix m = dense_matrix({{5, 0, 3}, {0, 2, 4}});
    AttackBudget budget = make_budget(2, 2, {}, {1});
    TemplateBatch tb = sample_templates(m, budget, 3);
    auto [vals, mask] = tb.to_dense(3);

    Generator simple(GenMode::simple, 3, 2, 8, 1);  // omega starts at zero
    Tensor pref = simple.preference_forward(vals, mask);
    for (std::size_t k = 0; k < pref.size(); ++k) {
        if (mask.v[k] != 0.0) CHECK(pref.v[k] == 0.5);
        else CHECK(pref.v[k] == 0.0);
    }

    Generator ae(GenMode::autoencoder, 3, 2, 8, 2);
    for (auto& x : ae.enc.w.v) x = 0.0;
    for (auto& x : ae.dec.w.v) x = 0.0;
    Tensor pae = ae.preference_forward(vals, mask);
    for (std::size_t k = 0; k < pae.size(); ++k) {
        if (mask.v[k] != 0.0) CHECK(pae.v[k] == 0.5);  // tanh(0) remapped
        else CHECK(pae.v[k] == 0.0);
    }
}

TEST_CASE("discriminator outputs probabilities") {
    Discriminator dis(6, 5, 4, 3);
    Tensor row(1, 6);
    row.v = {5, 0, 0, 3, 0, 1};
    double p = discriminate(dis, row);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    CHECK(discriminate(dis, row) == p);  // deterministic

    Discriminator zero(6, 5, 4, 4);
    for (Tensor* t : zero.parameters()) std::fill(t->v.begin(), t->v.end(), 0.0);
    CHECK(discriminate(zero, row) == 0.5);  // sigmoid of zero bias
}

TEST_CASE("loss functions: worked values") {
    Tensor x = Tensor::row({1, 2, 3});
    Tensor support = Tensor::row({1, 1, 1});
    CHECK(generation_indirect(x, x, support) == 0.0);

    CHECK(discrimination({0.5}, {0.5}) == doctest::Approx(2.0 * std::log(0.5)));

    Tensor scores(1, 4);  // uniform scores: -log softmax = log 4
    CHECK(generation_direct(scores, {2}) == doctest::Approx(std::log(4.0)));

    // softmax shift invariance
    Rng rng(17);
    Tensor s2(3, 6);
    for (auto& v : s2.v) v = rng.gaussian(0, 2);
    double base = generation_direct(s2, {1});
    Tensor shifted = s2;
    for (std::size_t u = 0; u < 3; ++u)
        for (std::size_t j = 0; j < 6; ++j) shifted.at(u, j) += 7.25;
    CHECK(std::fabs(generation_direct(shifted, {1}) - base) < 1e-9);

    // nuke flips the sign
    CHECK(generation_direct(s2, {1}, true) == doctest::Approx(-base));
}

TEST_CASE("in-segment users and loss") {
    // selected = {0, 1}; u0 rates both >= 4, u1 fails on item 1, u2 rates both 5
    RatingMatrix m = dense_matrix({{4, 5, 1}, {5, 3, 0}, {5, 5, 2}});
    auto seg = in_segment_users(m, {0, 1});
    CHECK(seg == std::vector<std::size_t>({0, 2}));
    CHECK_THROWS_AS(in_segment_users(m, {}), ValidationError);

    Rng rng(19);
    Tensor scores(3, 5);
    for (auto& v : scores.v) v = rng.gaussian();
    std::vector<std::size_t> all{0, 1, 2};
    CHECK(in_segment_loss(scores, {3}, all) == doctest::Approx(generation_direct(scores, {3})));
    std::vector<std::size_t> one{1};
    double expected = softmax_nll(Tensor::row({scores.at(1, 0), scores.at(1, 1), scores.at(1, 2),
                                               scores.at(1, 3), scores.at(1, 4)}),
                                  3);
    CHECK(in_segment_loss(scores, {3}, one) == doctest::Approx(expected));
    CHECK_THROWS_AS(in_segment_loss(scores, {3}, {}), ValidationError);
}

TEST_CASE("generator chain gradient matches finite differences end to end") {
    Rng rng(21);
    RatingMatrix real = random_matrix(rng, 4, 6, 0.7);
    AttackBudget budget = make_budget(2, 3, {}, {5});
    TemplateBatch tb = sample_templates(real, budget, 23);
    auto [vals, mask] = tb.to_dense(real.num_items());
    Tensor grad_mask = mask;
    for (std::size_t v = 0; v < grad_mask.rows; ++v) grad_mask.at(v, 5) = 0.0;

    const double xi = 0.1;
    WrmfConfig wcfg;
    wcfg.factors = 2;
    wcfg.w_miss = 0.05;
    WrmfModel prefit(real.num_users() + 2, real.num_items(), wcfg);
    prefit.init(31);
    const double inner_lr = 0.05;

    Generator base(GenMode::autoencoder, real.num_items(), 2, 5, 33);

    auto soft_rows_of = [&](Generator& g) {
        Tensor pref = g.preference_forward(vals, mask);
        Tensor tau = g.tau();
        Tensor rows(pref.rows, pref.cols);
        for (std::size_t v = 0; v < pref.rows; ++v) {
            std::array<double, 5> tr{tau.at(v, 0), tau.at(v, 1), tau.at(v, 2), tau.at(v, 3),
                                     tau.at(v, 4)};
            for (std::size_t i = 0; i < pref.cols; ++i)
                if (mask.at(v, i) != 0.0) rows.at(v, i) = soft_rating(pref.at(v, i), tr, xi);
        }
        for (std::size_t v = 0; v < rows.rows; ++v) rows.at(v, 5) = 5.0;
        return rows;
    };

    // loss(params) = push loss after one unrolled surrogate step on the rows
    auto loss_of = [&](Generator& g) {
        Tensor rows = soft_rows_of(g);
        WrmfModel model = prefit;
        return unrolled_attack_grad(model, real, rows, {5}, inner_lr).lgen;
    };

    auto grads_of = [&](Generator& g) {
        Tensor pref;
        Tensor rows = [&] {
            Tensor p = g.preference_forward(vals, mask);
            pref = p;
            Tensor tau = g.tau();
            Tensor r(p.rows, p.cols);
            for (std::size_t v = 0; v < p.rows; ++v) {
                std::array<double, 5> tr{tau.at(v, 0), tau.at(v, 1), tau.at(v, 2), tau.at(v, 3),
                                         tau.at(v, 4)};
                for (std::size_t i = 0; i < p.cols; ++i)
                    if (mask.at(v, i) != 0.0) r.at(v, i) = soft_rating(p.at(v, i), tr, xi);
            }
            for (std::size_t v = 0; v < r.rows; ++v) r.at(v, 5) = 5.0;
            return r;
        }();
        WrmfModel model = prefit;
        UnrolledGrad ug = unrolled_attack_grad(model, real, rows, {5}, inner_lr);
        Tensor g_rows = ug.fake_grad;
        for (std::size_t k = 0; k < g_rows.size(); ++k) g_rows.v[k] *= grad_mask.v[k];

        for (Tensor* p : g.parameters(true)) {
            p->ensure_grad();
            p->zero_grad();
        }
        // backward through the soft discretization and the preference learner
        Tensor g_pref(pref.rows, pref.cols);
        Tensor g_cum(pref.rows, 4);
        Tensor tau = g.tau();
        for (std::size_t v = 0; v < pref.rows; ++v) {
            double cums[4], acc = 0.0;
            for (std::size_t k = 0; k < 4; ++k) {
                acc += tau.at(v, k);
                cums[k] = acc;
            }
            for (std::size_t i = 0; i < pref.cols; ++i) {
                double gr = g_rows.at(v, i);
                if (gr == 0.0) continue;
                double dsdx = 0.0;
                for (std::size_t k = 0; k < 4; ++k) {
                    HeavisidePartials hp = heaviside_soft_partials(pref.at(v, i), cums[k], xi);
                    dsdx += hp.dx;
                    g_cum.at(v, k) += gr * hp.dtau;
                }
                g_pref.at(v, i) += gr * dsdx;
            }
        }
        g.preference_backward(g_pref);
        g.tau_backward(g_cum);
    };

    auto params = base.parameters(true);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor point = *params[pi];
        ScalarFn fn{
            [&, pi](const Tensor& t) {
                Generator g = base;
                *g.parameters(true)[pi] = t;
                return loss_of(g);
            },
            [&, pi](const Tensor& t) {
                Generator g = base;
                *g.parameters(true)[pi] = t;
                grads_of(g);
                Tensor out(t.rows, t.cols);
                out.v = g.parameters(true)[pi]->g;
                return out;
            },
        };
        CHECK(grad_check(fn, point, 1e-6) <= 1e-4);
    }
}

TEST_CASE("training loop: determinism, history shape, trend") {
    Rng rng(25);
    RatingMatrix real = random_matrix(rng, 20, 12, 0.5);
    AttackBudget budget = make_budget(5, 4, {}, {7});
    LegUpConfig cfg;
    cfg.epochs = 6;
    cfg.inner_steps = 4;
    cfg.hidden = 8;
    cfg.dis_hidden1 = 16;
    cfg.dis_hidden2 = 8;
    cfg.wrmf.wrmf.factors = 4;
    cfg.eval_users = 10;

    LegUpResult a = legup_train(real, budget, cfg, 9);
    CHECK(a.history.gen.size() == 6);
    CHECK(a.history.dis.size() == 6);
    CHECK(a.history.adv.size() == 6);
    CHECK(a.history.total.size() == 6);

    LegUpResult b = legup_train(real, budget, cfg, 9);
    CHECK(a.history.total == b.history.total);  // bitwise determinism

    LegUpConfig no_d = cfg;
    no_d.use_discriminator = false;
    LegUpResult c = legup_train(real, budget, no_d, 9);
    CHECK(c.history.dis.empty());
    CHECK(c.history.adv.empty());
    CHECK(c.history.total.size() == 6);

    CHECK_THROWS_AS(legup_train(real, budget, LegUpConfig{.k1 = 0}, 1), ValidationError);
}

TEST_CASE("ablation arms: indirect loss and rounding discretization") {
    Rng rng(27);
    RatingMatrix real = random_matrix(rng, 15, 10, 0.5);
    AttackBudget budget = make_budget(4, 3, {}, {2});

    LegUpConfig indirect;
    indirect.epochs = 80;
    indirect.direct_loss = false;
    indirect.use_discriminator = false;  // isolate the reconstruction objective
    indirect.resample_templates_per_epoch = false;
    indirect.gen_lr = 0.01;
    indirect.hidden = 8;
    LegUpResult r = legup_train(real, budget, indirect, 3);
    CHECK(r.history.gen.front() > r.history.gen.back());  // reconstruction improves

    LegUpConfig rounding;
    rounding.epochs = 3;
    rounding.learnable_discretization = false;
    rounding.hidden = 8;
    rounding.dis_hidden1 = 12;
    rounding.dis_hidden2 = 6;
    rounding.inner_steps = 2;
    rounding.wrmf.wrmf.factors = 4;
    LegUpResult r2 = legup_train(real, budget, rounding, 3);
    for (double logit : r2.generator.threshold_logits.v) CHECK(logit == 0.0);  // frozen
}

TEST_CASE("assembled batches satisfy the profile contract") {
    Rng rng(29);
    RatingMatrix real = random_matrix(rng, 25, 14, 0.5);
    AttackBudget budget = make_budget(6, 5, {}, {9});
    LegUpConfig cfg;
    cfg.epochs = 5;
    cfg.inner_steps = 3;
    cfg.hidden = 8;
    cfg.dis_hidden1 = 12;
    cfg.dis_hidden2 = 6;
    cfg.wrmf.wrmf.factors = 4;
    LegUpOutcome out = legup_attack(real, budget, cfg, 55);
    CHECK(out.batch.rows.size() == 6);
    CHECK(out.batch.attacker_name == "legup");
    CHECK(out.batch.template_user_ids.size() == 6);
    for (std::size_t v = 0; v < out.batch.rows.size(); ++v) {
        std::size_t fillers = 0;
        bool target_five = false;
        for (const auto& [i, r] : out.batch.rows[v]) {
            CHECK(r >= 1.0);
            CHECK(r <= 5.0);
            CHECK(r == std::floor(r));
            if (i == 9) target_five = (r == 5.0);
            else {
                ++fillers;
                std::size_t u = real.user_index(out.batch.template_user_ids[v]);
                CHECK(real.has_rating(u, i));  // filler support within template
            }
        }
        CHECK(target_five);
        CHECK(fillers <= budget.profile_size);
    }

    LegUpOutcome out2 = legup_attack(real, budget, cfg, 55);
    CHECK(out2.batch == out.batch);  // byte-identical per seed
}

TEST_CASE("parameter serialization round-trips") {
    Generator gen(GenMode::autoencoder, 10, 3, 6, 71);
    Discriminator dis(10, 8, 4, 72);
    std::string path =
        (std::filesystem::temp_directory_path() / "legup_params.bin").string();
    save_legup_params(path, gen, dis);

    Generator gen2;
    Discriminator dis2;
    load_legup_params(path, gen2, dis2);
    CHECK(gen2.mode == gen.mode);
    CHECK(gen2.num_items == gen.num_items);
    CHECK(gen2.enc.w.v == gen.enc.w.v);
    CHECK(gen2.dec.b.v == gen.dec.b.v);
    CHECK(gen2.threshold_logits.v == gen.threshold_logits.v);
    CHECK(dis2.l1.w.v == dis.l1.w.v);
    CHECK(dis2.l3.b.v == dis.l3.b.v);

    std::string junk = (std::filesystem::temp_directory_path() / "junk.bin").string();
    std::ofstream(junk) << "not a parameter file";
    Generator g3;
    Discriminator d3;
    CHECK_THROWS_AS(load_legup_params(junk, g3, d3), ParseError);
}
