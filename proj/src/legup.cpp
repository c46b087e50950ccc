#include "shill/legup.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "shill/rng.hpp"

namespace shill {

std::pair<Tensor, Tensor> TemplateBatch::to_dense(std::size_t num_items) const {
    Tensor vals(rows.size(), num_items), mask(rows.size(), num_items);
    for (std::size_t v = 0; v < rows.size(); ++v)
        for (const auto& [i, r] : rows[v]) {
            vals.at(v, i) = r;
            mask.at(v, i) = 1.0;
        }
    return {std::move(vals), std::move(mask)};
}

TemplateBatch sample_templates(const RatingMatrix& real, const AttackBudget& budget,
                               std::uint64_t seed) {
    TemplateBatch out;
    Rng master(seed);
    for (std::size_t v = 0; v < budget.attack_size; ++v) {
        Rng row_rng = master.fork(v);  // row content depends only on (seed, v)
        std::size_t u = static_cast<std::size_t>(row_rng.below(real.num_users()));
        const auto& rated = real.by_user()[u];
        std::vector<std::pair<std::size_t, double>> row;
        if (rated.size() <= budget.profile_size) {
            row = rated;
        } else {
            for (std::size_t k : row_rng.sample_without_replacement(rated.size(),
                                                                    budget.profile_size))
                row.push_back(rated[k]);
            std::sort(row.begin(), row.end());
        }
        out.rows.push_back(std::move(row));
        out.source_users.push_back(u);
    }
    return out;
}

double heaviside_soft(double x, double tau, double xi) {
    return heaviside_soft_partials(x, tau, xi).value;
}

HeavisidePartials heaviside_soft_partials(double x, double tau, double xi) {
    double tau_m = std::min(tau, 1.0 - tau);
    double dtm = tau <= 0.5 ? 1.0 : -1.0;  // d tau_m / d tau
    double lo = tau - 0.5 * tau_m;
    double hi = tau + 0.5 * tau_m;
    HeavisidePartials p{};
    if (x < lo) {
        p.value = x * xi / lo;
        p.dx = xi / lo;
        p.dtau = -x * xi * (1.0 - 0.5 * dtm) / (lo * lo);
    } else if (x > hi) {
        double c = 1.0 - hi;
        p.value = xi * (x - hi) / c + 1.0 - xi;
        p.dx = xi / c;
        p.dtau = -xi * (1.0 + 0.5 * dtm) * (1.0 - x) / (c * c);
    } else {
        p.value = (x - tau) * (1.0 - 2.0 * xi) / tau_m + 0.5;
        p.dx = (1.0 - 2.0 * xi) / tau_m;
        p.dtau = (1.0 - 2.0 * xi) * (-tau_m - (x - tau) * dtm) / (tau_m * tau_m);
    }
    return p;
}

int hard_rating(double x, const std::array<double, 5>& tau) {
    int r = 1;
    double cum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
        cum += tau[k];
        if (x > cum) ++r;
    }
    return r;
}

double soft_rating(double x, const std::array<double, 5>& tau, double xi) {
    double r = 1.0, cum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
        cum += tau[k];
        r += heaviside_soft(x, cum, xi);
    }
    return r;
}

int rounding_rating(double x) {
    return hard_rating(x, {0.2, 0.2, 0.2, 0.2, 0.2});
}

Generator::Generator(GenMode mode_, std::size_t num_items_, std::size_t num_fakes_,
                     std::size_t hidden_, std::uint64_t seed)
    : mode(mode_), num_items(num_items_), num_fakes(num_fakes_), hidden(hidden_) {
    Rng rng(seed);
    if (mode == GenMode::simple) {
        omega = Tensor(1, num_items);  // sigmoid(0) = 0.5 start
        omega.ensure_grad();
    } else {
        enc = Dense(num_items, hidden, rng, 1.0 / std::sqrt(static_cast<double>(num_items)));
        dec = Dense(hidden, num_items, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    }
    threshold_logits = Tensor(num_fakes, 5);  // softmax of zeros = uniform 0.2
    threshold_logits.ensure_grad();
}

Tensor Generator::preference_forward(const Tensor& tmpl_values, const Tensor& support) {
    cached_support_ = support;
    Tensor pref(tmpl_values.rows, tmpl_values.cols);
    if (mode == GenMode::simple) {
        for (std::size_t v = 0; v < pref.rows; ++v)
            for (std::size_t i = 0; i < pref.cols; ++i)
                if (support.at(v, i) != 0.0)
                    pref.at(v, i) = 1.0 / (1.0 + std::exp(-omega.v[i]));
    } else {
        Tensor y = tanh_.forward(dec.forward(relu_.forward(enc.forward(tmpl_values))));
        // tanh output remapped to (0,1) so thresholds live on the same scale
        for (std::size_t k = 0; k < pref.size(); ++k)
            if (support.v[k] != 0.0) pref.v[k] = 0.5 * (y.v[k] + 1.0);
    }
    cached_pref_ = pref;
    return pref;
}

void Generator::preference_backward(const Tensor& g_pref) {
    if (mode == GenMode::simple) {
        omega.ensure_grad();
        for (std::size_t v = 0; v < g_pref.rows; ++v)
            for (std::size_t i = 0; i < g_pref.cols; ++i) {
                if (cached_support_.at(v, i) == 0.0) continue;
                double p = cached_pref_.at(v, i);
                omega.g[i] += g_pref.at(v, i) * p * (1.0 - p);
            }
        return;
    }
    Tensor g_y(g_pref.rows, g_pref.cols);
    for (std::size_t k = 0; k < g_pref.size(); ++k)
        if (cached_support_.v[k] != 0.0) g_y.v[k] = 0.5 * g_pref.v[k];
    enc.backward(relu_.backward(dec.backward(tanh_.backward(g_y))));
}

Tensor Generator::tau() const { return softmax_rows(threshold_logits); }

void Generator::tau_backward(const Tensor& g_cum) {
    // cum_k = sum_{j<=k} tau_j, so d cum_k / d tau_j = [j <= k]
    Tensor t = tau();
    threshold_logits.ensure_grad();
    for (std::size_t v = 0; v < t.rows; ++v) {
        double g_tau[5] = {0, 0, 0, 0, 0};
        for (std::size_t j = 0; j < 5; ++j)
            for (std::size_t k = j; k < 4; ++k) g_tau[j] += g_cum.at(v, k);
        double dot = 0.0;
        for (std::size_t b = 0; b < 5; ++b) dot += t.at(v, b) * g_tau[b];
        for (std::size_t a = 0; a < 5; ++a)
            threshold_logits.g[v * 5 + a] += t.at(v, a) * (g_tau[a] - dot);
    }
}

std::vector<Tensor*> Generator::parameters(bool learnable_tau) {
    std::vector<Tensor*> p;
    if (mode == GenMode::simple)
        p = {&omega};
    else
        p = {&enc.w, &enc.b, &dec.w, &dec.b};
    if (learnable_tau) p.push_back(&threshold_logits);
    return p;
}

Discriminator::Discriminator(std::size_t num_items, std::size_t h1, std::size_t h2,
                             std::uint64_t seed) {
    Rng rng(seed);
    l1 = Dense(num_items, h1, rng, 1.0 / std::sqrt(static_cast<double>(num_items)));
    l2 = Dense(h1, h2, rng, 1.0 / std::sqrt(static_cast<double>(h1)));
    l3 = Dense(h2, 1, rng, 1.0 / std::sqrt(static_cast<double>(h2)));
}

Tensor Discriminator::forward(const Tensor& rows) {
    return sig_.forward(l3.forward(r2_.forward(l2.forward(r1_.forward(l1.forward(rows))))));
}

Tensor Discriminator::backward(const Tensor& g_probs) {
    return l1.backward(r1_.backward(l2.backward(r2_.backward(l3.backward(sig_.backward(g_probs))))));
}

std::vector<Tensor*> Discriminator::parameters() {
    return {&l1.w, &l1.b, &l2.w, &l2.b, &l3.w, &l3.b};
}

void Discriminator::zero_grads() {
    for (Tensor* t : parameters()) t->zero_grad();
}

double discriminate(Discriminator& dis, const Tensor& profile_row) {
    if (profile_row.rows != 1) throw ValidationError("discriminate: expected a single row");
    return dis.forward(profile_row).v[0];
}

double generation_direct(const Tensor& scores, const std::vector<std::size_t>& targets,
                         bool nuke) {
    if (targets.empty()) throw ValidationError("generation_direct: no targets");
    double loss = 0.0;
    for (std::size_t u = 0; u < scores.rows; ++u) {
        const double* su = scores.row_ptr(u);
        double mx = su[0];
        for (std::size_t j = 1; j < scores.cols; ++j) mx = std::max(mx, su[j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < scores.cols; ++j) lse += std::exp(su[j] - mx);
        lse = std::log(lse) + mx;
        for (std::size_t t : targets) loss += lse - su[t];
    }
    return nuke ? -loss : loss;
}

Tensor generation_direct_grad(const Tensor& scores, const std::vector<std::size_t>& targets,
                              bool nuke) {
    Tensor g = softmax_rows(scores);
    double nt = static_cast<double>(targets.size());
    for (std::size_t u = 0; u < g.rows; ++u) {
        double* gu = g.row_ptr(u);
        for (std::size_t j = 0; j < g.cols; ++j) gu[j] *= nt;
        for (std::size_t t : targets) gu[t] -= 1.0;
        if (nuke)
            for (std::size_t j = 0; j < g.cols; ++j) gu[j] = -gu[j];
    }
    return g;
}

double generation_indirect(const Tensor& soft, const Tensor& tmpl_values, const Tensor& support) {
    return masked_sse(soft, tmpl_values, support);
}

Tensor generation_indirect_grad(const Tensor& soft, const Tensor& tmpl_values,
                                const Tensor& support) {
    return masked_sse_grad(soft, tmpl_values, support);
}

double discrimination(const std::vector<double>& real_probs, const std::vector<double>& fake_probs) {
    if (real_probs.empty() || fake_probs.empty())
        throw ValidationError("discrimination: empty probability batch");
    double lr = 0.0, lf = 0.0;
    for (double p : real_probs) lr += std::log(std::clamp(p, kProbEps, 1.0 - kProbEps));
    for (double p : fake_probs) lf += std::log(1.0 - std::clamp(p, kProbEps, 1.0 - kProbEps));
    return lr / static_cast<double>(real_probs.size()) + lf / static_cast<double>(fake_probs.size());
}

std::vector<std::size_t> in_segment_users(const RatingMatrix& m,
                                          const std::set<std::size_t>& selected) {
    if (selected.empty()) throw ValidationError("in_segment_users: selected set is empty");
    std::vector<std::size_t> out;
    for (std::size_t u = 0; u < m.num_users(); ++u) {
        bool all_high = true;
        for (std::size_t s : selected) {
            double r = m.rating(u, s);
            if (r < 4.0) {
                all_high = false;
                break;
            }
        }
        if (all_high) out.push_back(u);
    }
    return out;
}

double in_segment_loss(const Tensor& scores, const std::vector<std::size_t>& targets,
                       const std::vector<std::size_t>& users) {
    if (users.empty())
        throw ValidationError(
            "in-segment user set is empty; choose different selected items");
    double loss = 0.0;
    for (std::size_t u : users) {
        const double* su = scores.row_ptr(u);
        double mx = su[0];
        for (std::size_t j = 1; j < scores.cols; ++j) mx = std::max(mx, su[j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < scores.cols; ++j) lse += std::exp(su[j] - mx);
        lse = std::log(lse) + mx;
        for (std::size_t t : targets) loss += lse - su[t];
    }
    return loss;
}

namespace {

std::array<double, 5> tau_row(const Tensor& tau, std::size_t v) {
    return {tau.at(v, 0), tau.at(v, 1), tau.at(v, 2), tau.at(v, 3), tau.at(v, 4)};
}

// Soft profile rows: differentiable ratings on the template support with the
// target columns pinned at rating_max. Leaves the generator caches primed for
// a matching backward pass.
Tensor soft_profile_rows(Generator& gen, const Tensor& tmpl_values, const Tensor& support,
                         const AttackBudget& budget, bool learnable, double xi,
                         Tensor* pref_out = nullptr) {
    Tensor pref = gen.preference_forward(tmpl_values, support);
    Tensor rows(pref.rows, pref.cols);
    Tensor tau = gen.tau();
    for (std::size_t v = 0; v < pref.rows; ++v) {
        auto tr = tau_row(tau, v);
        for (std::size_t i = 0; i < pref.cols; ++i) {
            if (support.at(v, i) == 0.0) continue;
            double x = pref.at(v, i);
            rows.at(v, i) = learnable ? soft_rating(x, tr, xi) : 1.0 + 4.0 * x;
        }
    }
    for (std::size_t v = 0; v < rows.rows; ++v)
        for (std::size_t t : budget.targets) rows.at(v, t) = budget.rating_max;
    if (pref_out) *pref_out = pref;
    return rows;
}

// Backward of the soft discretization: dL/dRows -> dL/dPref (+ cum-threshold
// grads when the tau layer is learnable). g_rows must already be zero on the
// pinned target columns and off-support positions.
void soft_rows_backward(Generator& gen, const Tensor& pref, const Tensor& g_rows,
                        const Tensor& support, bool learnable, double xi) {
    Tensor g_pref(pref.rows, pref.cols);
    Tensor g_cum(pref.rows, 4);
    Tensor tau = gen.tau();
    for (std::size_t v = 0; v < pref.rows; ++v) {
        auto tr = tau_row(tau, v);
        double cums[4];
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
            acc += tr[k];
            cums[k] = acc;
        }
        for (std::size_t i = 0; i < pref.cols; ++i) {
            double g = g_rows.at(v, i);
            if (g == 0.0 || support.at(v, i) == 0.0) continue;
            double x = pref.at(v, i);
            if (!learnable) {
                g_pref.at(v, i) += 4.0 * g;
                continue;
            }
            double dsdx = 0.0;
            for (std::size_t k = 0; k < 4; ++k) {
                HeavisidePartials hp = heaviside_soft_partials(x, cums[k], xi);
                dsdx += hp.dx;
                g_cum.at(v, k) += g * hp.dtau;
            }
            g_pref.at(v, i) += g * dsdx;
        }
    }
    gen.preference_backward(g_pref);
    if (learnable) gen.tau_backward(g_cum);
}

Tensor dense_user_rows(const RatingMatrix& m, const std::vector<std::size_t>& users) {
    Tensor rows(users.size(), m.num_items());
    for (std::size_t k = 0; k < users.size(); ++k)
        for (const auto& [i, r] : m.by_user()[users[k]]) rows.at(k, i) = r;
    return rows;
}

}  // namespace

LegUpResult legup_train(const RatingMatrix& real, const AttackBudget& budget,
                        const LegUpConfig& cfg, std::uint64_t seed) {
    if (cfg.k1 < 1 || cfg.k2 < 1 || cfg.inner_steps < 1 || cfg.epochs < 1)
        throw ValidationError("legup: k1, k2, T and epochs must all be >= 1");
    const std::size_t n_real = real.num_users();
    const std::size_t n_items = real.num_items();
    const std::size_t n_fakes = budget.attack_size;

    Rng root(seed);
    LegUpResult res;
    res.generator = Generator(cfg.gen_mode, n_items, n_fakes, cfg.hidden, root.fork(1).seed());
    Generator& gen = res.generator;
    bool with_d = cfg.use_discriminator;
    if (with_d)
        res.discriminator =
            Discriminator(n_items, cfg.dis_hidden1, cfg.dis_hidden2, root.fork(2).seed());
    Discriminator& dis = res.discriminator;

    std::unique_ptr<AttackSurrogate> surrogate;
    std::uint64_t surrogate_seed = root.fork(3).seed();
    if (cfg.direct_loss) {
        surrogate = make_surrogate(cfg.surrogate_kind, cfg.wrmf, cfg.iautorec);
        if (cfg.surrogate_warm_start) {
            surrogate->reset(n_real + n_fakes, n_items, surrogate_seed);
            if (cfg.surrogate_pretrain > 0) {
                Tensor dormant(n_fakes, n_items);
                PoisonedView clean{&real, &dormant};
                surrogate->fit_steps(clean, cfg.surrogate_pretrain);
            }
        }
    }

    std::vector<char> user_mask;
    const std::vector<char>* mask_ptr = nullptr;
    if (!cfg.restrict_users.empty()) {
        user_mask.assign(n_real, 0);
        for (std::size_t u : cfg.restrict_users) {
            if (u >= n_real) throw ValidationError("legup: restricted user index out of range");
            user_mask[u] = 1;
        }
        mask_ptr = &user_mask;
    }

    Rng dis_rng = root.fork(4);
    std::size_t dis_batch = cfg.dis_real_batch ? cfg.dis_real_batch : n_fakes;
    dis_batch = std::min(dis_batch, n_real);

    // Fixed evaluation subsample for the per-epoch loss bookkeeping.
    Rng eval_rng = root.fork(5);
    std::vector<std::size_t> eval_users =
        eval_rng.sample_without_replacement(n_real, std::min(cfg.eval_users, n_real));
    Tensor eval_rows = dense_user_rows(real, eval_users);

    Optimizer gopt(OptKind::adam, cfg.gen_lr);
    Optimizer dopt(OptKind::adam, cfg.dis_lr);
    auto gen_params = gen.parameters(cfg.learnable_discretization);
    auto dis_params = with_d ? dis.parameters() : std::vector<Tensor*>{};

    TemplateBatch templates;
    Tensor tmpl_vals, tmpl_support, grad_mask;
    auto refresh_templates = [&](std::size_t epoch) {
        templates = sample_templates(real, budget, hash_label(seed, "templates|" +
                                                                        std::to_string(epoch)));
        auto [vals, mask] = templates.to_dense(n_items);
        tmpl_vals = std::move(vals);
        tmpl_support = std::move(mask);
        grad_mask = tmpl_support;  // support minus pinned target columns
        for (std::size_t v = 0; v < grad_mask.rows; ++v)
            for (std::size_t t : budget.targets) grad_mask.at(v, t) = 0.0;
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch == 0 || cfg.resample_templates_per_epoch) refresh_templates(epoch);

        // (1) discriminator optimization: min BCE, params of G fixed
        if (with_d) {
            for (std::size_t s = 0; s < cfg.k1; ++s) {
                Tensor fake = soft_profile_rows(gen, tmpl_vals, tmpl_support, budget,
                                                cfg.learnable_discretization, cfg.xi);
                std::vector<std::size_t> ridx =
                    dis_rng.sample_without_replacement(n_real, dis_batch);
                Tensor batch(dis_batch + n_fakes, n_items);
                Tensor rr = dense_user_rows(real, ridx);
                std::copy(rr.v.begin(), rr.v.end(), batch.v.begin());
                std::copy(fake.v.begin(), fake.v.end(),
                          batch.v.begin() + static_cast<std::ptrdiff_t>(rr.size()));
                Tensor probs = dis.forward(batch);
                Tensor g_probs(probs.rows, 1);
                double inv_r = 1.0 / static_cast<double>(dis_batch);
                double inv_f = 1.0 / static_cast<double>(n_fakes);
                for (std::size_t r = 0; r < probs.rows; ++r) {
                    bool is_real = r < dis_batch;
                    g_probs.at(r, 0) =
                        bce_grad(probs.at(r, 0), is_real ? 1.0 : 0.0) * (is_real ? inv_r : inv_f);
                }
                dis.zero_grads();
                dis.backward(g_probs);
                dopt.step(dis_params);
            }
        }

        // (2) generator optimization, Phi and Gamma fixed at the update
        double lgen_epoch = 0.0;
        for (std::size_t s = 0; s < cfg.k2; ++s) {
            Tensor pref;
            Tensor rows = soft_profile_rows(gen, tmpl_vals, tmpl_support, budget,
                                            cfg.learnable_discretization, cfg.xi, &pref);
            Tensor g_rows(rows.rows, rows.cols);
            if (cfg.direct_loss) {
                // (3) surrogate optimization: fit toward argmin L_RS on the
                // current X*, then the unrolled last step
                PoisonedView view{&real, &rows};
                std::size_t fit_budget = cfg.inner_steps - 1;
                if (!cfg.surrogate_warm_start) {
                    surrogate->reset(n_real + n_fakes, n_items,
                                     splitmix64(surrogate_seed ^ (epoch * cfg.k2 + s)));
                    fit_budget += cfg.surrogate_pretrain;
                }
                surrogate->fit_steps(view, fit_budget);
                UnrolledGrad ug = surrogate->attack_grad(view, budget.targets, cfg.nuke, mask_ptr);
                lgen_epoch = ug.lgen;
                g_rows = std::move(ug.fake_grad);
            } else {
                lgen_epoch = generation_indirect(rows, tmpl_vals, grad_mask);
                g_rows = generation_indirect_grad(rows, tmpl_vals, grad_mask);
            }
            if (with_d) {
                Tensor pf = dis.forward(rows);
                double inv_f = 1.0 / static_cast<double>(n_fakes);
                Tensor g_pf(pf.rows, 1);
                for (std::size_t v = 0; v < pf.rows; ++v) {
                    double p = std::clamp(pf.at(v, 0), kProbEps, 1.0 - kProbEps);
                    g_pf.at(v, 0) = -inv_f / (1.0 - p);  // d mean log(1-p) / dp, minimized
                }
                Tensor g_in = dis.backward(g_pf);
                dis.zero_grads();  // generator step must not move Phi
                for (std::size_t k = 0; k < g_rows.size(); ++k) g_rows.v[k] += g_in.v[k];
            }
            for (std::size_t k = 0; k < g_rows.size(); ++k) g_rows.v[k] *= grad_mask.v[k];
            for (Tensor* p : gen_params) p->zero_grad();
            soft_rows_backward(gen, pref, g_rows, tmpl_support, cfg.learnable_discretization,
                               cfg.xi);
            gopt.step(gen_params);
        }
        if (!std::isfinite(lgen_epoch))
            throw DivergenceError("legup diverged at epoch " + std::to_string(epoch));

        // bookkeeping: minimax objective value at the end of the epoch
        res.history.gen.push_back(lgen_epoch);
        if (with_d) {
            Tensor fake = soft_profile_rows(gen, tmpl_vals, tmpl_support, budget,
                                            cfg.learnable_discretization, cfg.xi);
            Tensor pr = dis.forward(eval_rows);
            std::vector<double> real_p(pr.v.begin(), pr.v.end());
            Tensor pf = dis.forward(fake);
            std::vector<double> fake_p(pf.v.begin(), pf.v.end());
            double d_value = discrimination(real_p, fake_p);
            double adv = 0.0;
            for (double p : fake_p) adv += std::log(1.0 - std::clamp(p, kProbEps, 1.0 - kProbEps));
            adv /= static_cast<double>(fake_p.size());
            res.history.dis.push_back(d_value);
            res.history.adv.push_back(adv);
            // minimax value = E log D(real) + L_gen + E log(1 - D(fake))
            res.history.total.push_back(d_value + lgen_epoch);
        } else {
            res.history.total.push_back(lgen_epoch);
        }
    }
    res.templates = templates;
    return res;
}

FakeProfileBatch assemble_fake_batch(Generator& gen, const TemplateBatch& templates,
                                     const AttackBudget& budget, bool learnable_discretization) {
    auto [vals, support] = templates.to_dense(gen.num_items);
    Tensor pref = gen.preference_forward(vals, support);
    Tensor tau = gen.tau();
    FakeProfileBatch out;
    out.attacker_name = "legup";
    for (std::size_t v = 0; v < pref.rows; ++v) {
        auto tr = tau_row(tau, v);
        std::vector<std::pair<std::size_t, double>> row;
        for (std::size_t i = 0; i < pref.cols; ++i) {
            if (support.at(v, i) == 0.0) continue;
            bool is_target = false;
            for (std::size_t t : budget.targets) is_target |= (t == i);
            if (is_target) continue;  // pinned below
            double x = pref.at(v, i);
            row.emplace_back(i, learnable_discretization
                                    ? static_cast<double>(hard_rating(x, tr))
                                    : static_cast<double>(rounding_rating(x)));
        }
        for (std::size_t t : budget.targets) row.emplace_back(t, budget.rating_max);
        std::sort(row.begin(), row.end());
        out.rows.push_back(std::move(row));
    }
    return out;
}

LegUpOutcome legup_attack(const RatingMatrix& real, const AttackBudget& budget,
                          const LegUpConfig& cfg, std::uint64_t seed) {
    LegUpResult r = legup_train(real, budget, cfg, seed);
    LegUpOutcome out;
    out.batch = assemble_fake_batch(r.generator, r.templates, budget,
                                    cfg.learnable_discretization);
    out.batch.seed = seed;
    for (std::size_t u : r.templates.source_users)
        out.batch.template_user_ids.push_back(real.user_id(u));
    out.history = std::move(r.history);
    return out;
}

// ---- parameter serialization: versioned flat binary of shape-tagged tensors

namespace {

constexpr std::uint32_t kMagic = 0x4c475550;  // "LGUP"
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t x) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return x;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return x;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, t.rows);
    put_u64(os, t.cols);
    for (double d : t.v) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u64(os, bits);
    }
}

Tensor get_tensor(std::istream& is, std::string& name) {
    std::uint32_t len = get_u32(is);
    name.resize(len);
    is.read(name.data(), len);
    std::size_t r = get_u64(is), c = get_u64(is);
    Tensor t(r, c);
    for (auto& d : t.v) {
        std::uint64_t bits = get_u64(is);
        std::memcpy(&d, &bits, 8);
    }
    return t;
}

}  // namespace

void save_legup_params(const std::string& path, const Generator& gen, const Discriminator& dis) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot write " + path);
    put_u32(os, kMagic);
    put_u32(os, kVersion);
    put_u32(os, gen.mode == GenMode::simple ? 0 : 1);
    put_u64(os, gen.num_items);
    put_u64(os, gen.num_fakes);
    put_u64(os, gen.hidden);
    bool has_dis = dis.l1.w.size() > 0;
    put_u32(os, has_dis ? 1 : 0);

    std::vector<std::pair<std::string, const Tensor*>> tensors;
    if (gen.mode == GenMode::simple)
        tensors.emplace_back("gen.omega", &gen.omega);
    else {
        tensors.emplace_back("gen.enc.w", &gen.enc.w);
        tensors.emplace_back("gen.enc.b", &gen.enc.b);
        tensors.emplace_back("gen.dec.w", &gen.dec.w);
        tensors.emplace_back("gen.dec.b", &gen.dec.b);
    }
    tensors.emplace_back("gen.tau_logits", &gen.threshold_logits);
    if (has_dis) {
        tensors.emplace_back("dis.l1.w", &dis.l1.w);
        tensors.emplace_back("dis.l1.b", &dis.l1.b);
        tensors.emplace_back("dis.l2.w", &dis.l2.w);
        tensors.emplace_back("dis.l2.b", &dis.l2.b);
        tensors.emplace_back("dis.l3.w", &dis.l3.w);
        tensors.emplace_back("dis.l3.b", &dis.l3.b);
    }
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) put_tensor(os, name, *t);
}

void load_legup_params(const std::string& path, Generator& gen, Discriminator& dis) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot read " + path);
    if (get_u32(is) != kMagic) throw ParseError(path + ": not a legup parameter file");
    std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw ParseError(path + ": unsupported version " + std::to_string(version));
    GenMode mode = get_u32(is) == 0 ? GenMode::simple : GenMode::autoencoder;
    std::size_t num_items = get_u64(is), num_fakes = get_u64(is), hidden = get_u64(is);
    bool has_dis = get_u32(is) != 0;

    gen = Generator(mode, num_items, num_fakes, hidden, 0);
    if (has_dis) dis = Discriminator(num_items, 1, 1, 0);  // shapes overwritten below

    std::uint32_t count = get_u32(is);
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name;
        Tensor t = get_tensor(is, name);
        if (!is) throw ParseError(path + ": truncated tensor payload");
        if (name == "gen.omega") gen.omega = std::move(t);
        else if (name == "gen.enc.w") gen.enc.w = std::move(t);
        else if (name == "gen.enc.b") gen.enc.b = std::move(t);
        else if (name == "gen.dec.w") gen.dec.w = std::move(t);
        else if (name == "gen.dec.b") gen.dec.b = std::move(t);
        else if (name == "gen.tau_logits") gen.threshold_logits = std::move(t);
        else if (name == "dis.l1.w") dis.l1.w = std::move(t);
        else if (name == "dis.l1.b") dis.l1.b = std::move(t);
        else if (name == "dis.l2.w") dis.l2.w = std::move(t);
        else if (name == "dis.l2.b") dis.l2.b = std::move(t);
        else if (name == "dis.l3.w") dis.l3.w = std::move(t);
        else if (name == "dis.l3.b") dis.l3.b = std::move(t);
        else throw ParseError(path + ": unknown tensor '" + name + "'");
    }
}

}  // namespace shill
