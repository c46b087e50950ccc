#include "shill/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace shill {

WrmfModel::WrmfModel(std::size_t n_users_total, std::size_t n_items, WrmfConfig cfg)
    : config(cfg) {
    if (cfg.factors < 1) throw ValidationError("wrmf: factors must be >= 1");
    if (cfg.lambda < 0.0 || cfg.w_obs <= 0.0 || cfg.w_miss < 0.0)
        throw ValidationError("wrmf: invalid weights");
    P = Tensor(n_users_total, cfg.factors);
    Q = Tensor(n_items, cfg.factors);
}

void WrmfModel::init(std::uint64_t seed) {
    Rng rng(seed);
    P = Tensor::randn(P.rows, P.cols, rng, 0.01);
    Q = Tensor::randn(Q.rows, Q.cols, rng, 0.01);
    P.ensure_grad();
    Q.ensure_grad();
}

namespace {

// d x d Gram matrix F^T F of a (n x d) factor matrix.
Tensor gram(const Tensor& f) { return matmul_tn(f, f); }

double frob2(const Tensor& t) {
    double s = 0.0;
    for (double x : t.v) s += x * x;
    return s;
}

}  // namespace

double WrmfModel::loss(const PoisonedView& view) const {
    const std::size_t d = config.factors;
    double total = 0.0;
    if (config.w_miss > 0.0) {
        Tensor gp = gram(P), gq = gram(Q);
        double tr = 0.0;
        for (std::size_t k = 0; k < gp.size(); ++k) tr += gp.v[k] * gq.v[k];
        total += config.w_miss * tr;
    }
    view.for_each_observed([&](std::size_t u, std::size_t i, double x) {
        const double* pu = P.row_ptr(u);
        const double* qi = Q.row_ptr(i);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += pu[k] * qi[k];
        double r = x - s;
        total += config.w_obs * r * r;
        if (config.w_miss > 0.0) total -= config.w_miss * s * s;
    });
    if (config.lambda > 0.0) total += config.lambda * (frob2(P) + frob2(Q));
    return total;
}

double WrmfModel::accumulate_gradient(const PoisonedView& view) {
    const std::size_t d = config.factors;
    P.ensure_grad();
    Q.ensure_grad();
    double total = 0.0;

    if (config.w_miss > 0.0) {
        Tensor gp = gram(P), gq = gram(Q);
        double tr = 0.0;
        for (std::size_t k = 0; k < gp.size(); ++k) tr += gp.v[k] * gq.v[k];
        total += config.w_miss * tr;
        Tensor pgq = matmul(P, gq);  // (n x d)
        Tensor qgp = matmul(Q, gp);
        for (std::size_t k = 0; k < P.size(); ++k) P.g[k] += 2.0 * config.w_miss * pgq.v[k];
        for (std::size_t k = 0; k < Q.size(); ++k) Q.g[k] += 2.0 * config.w_miss * qgp.v[k];
    }
    view.for_each_observed([&](std::size_t u, std::size_t i, double x) {
        const double* pu = P.row_ptr(u);
        const double* qi = Q.row_ptr(i);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += pu[k] * qi[k];
        double r = x - s;
        total += config.w_obs * r * r;
        if (config.w_miss > 0.0) total -= config.w_miss * s * s;
        double coef = 2.0 * ((config.w_obs - config.w_miss) * s - config.w_obs * x);
        double* gpu = P.g.data() + u * d;
        double* gqi = Q.g.data() + i * d;
        for (std::size_t k = 0; k < d; ++k) {
            gpu[k] += coef * qi[k];
            gqi[k] += coef * pu[k];
        }
    });
    if (config.lambda > 0.0) {
        total += config.lambda * (frob2(P) + frob2(Q));
        for (std::size_t k = 0; k < P.size(); ++k) P.g[k] += 2.0 * config.lambda * P.v[k];
        for (std::size_t k = 0; k < Q.size(); ++k) Q.g[k] += 2.0 * config.lambda * Q.v[k];
    }
    return total;
}

void WrmfModel::fit_steps(const PoisonedView& view, std::size_t steps, Optimizer& opt) {
    std::vector<Tensor*> params{&P, &Q};
    for (std::size_t s = 0; s < steps; ++s) {
        P.zero_grad();
        Q.zero_grad();
        double l = accumulate_gradient(view);
        if (!std::isfinite(l))
            throw DivergenceError("wrmf fit diverged at step " + std::to_string(s));
        opt.step(params);
    }
}

void WrmfModel::fit(const PoisonedView& view, std::size_t steps, Optimizer& opt,
                    std::uint64_t seed) {
    if (steps < 1) throw ValidationError("wrmf fit: steps must be >= 1");
    init(seed);
    fit_steps(view, steps, opt);
}

Tensor WrmfModel::predict_all() const { return matmul_nt(P, Q); }

Tensor WrmfModel::predict_real_users(std::size_t n_real) const {
    Tensor sub(n_real, P.cols);
    std::copy(P.v.begin(), P.v.begin() + static_cast<std::ptrdiff_t>(n_real * P.cols),
              sub.v.begin());
    return matmul_nt(sub, Q);
}

UnrolledGrad unrolled_attack_grad(WrmfModel& prefit, const RatingMatrix& real,
                                  const Tensor& fake_rows,
                                  const std::vector<std::size_t>& targets, double inner_lr,
                                  bool commit, bool nuke, const std::vector<char>* user_mask) {
    if (targets.empty()) throw ValidationError("unrolled_attack_grad: no targets");
    const std::size_t n_real = real.num_users();
    const std::size_t n_items = real.num_items();
    const std::size_t d = prefit.config.factors;
    if (fake_rows.cols != n_items) throw ValidationError("unrolled_attack_grad: fake row width");
    if (prefit.P.rows != n_real + fake_rows.rows)
        throw ValidationError("unrolled_attack_grad: model sized for a different user count");

    PoisonedView view{&real, &fake_rows};

    // Gamma_{T-1} -> Gamma_T, one plain SGD step kept symbolic in X_hat.
    prefit.P.zero_grad();
    prefit.Q.zero_grad();
    prefit.accumulate_gradient(view);
    Tensor p_next = prefit.P, q_next = prefit.Q;
    for (std::size_t k = 0; k < p_next.size(); ++k) p_next.v[k] -= inner_lr * prefit.P.g[k];
    for (std::size_t k = 0; k < q_next.size(); ++k) q_next.v[k] -= inner_lr * prefit.Q.g[k];

    Tensor p_real(n_real, d);
    std::copy(p_next.v.begin(), p_next.v.begin() + static_cast<std::ptrdiff_t>(n_real * d),
              p_real.v.begin());
    Tensor scores = matmul_nt(p_real, q_next);  // (n_real x n_items)
    Tensor prob = softmax_rows(scores);

    if (user_mask && user_mask->size() != n_real)
        throw ValidationError("unrolled_attack_grad: user mask size mismatch");
    auto keep = [&](std::size_t u) { return !user_mask || (*user_mask)[u] != 0; };

    double lgen = 0.0;
    for (std::size_t u = 0; u < n_real; ++u) {
        if (!keep(u)) continue;
        const double* pu = prob.row_ptr(u);
        for (std::size_t t : targets) lgen -= std::log(std::max(pu[t], 1e-300));
    }
    if (nuke) lgen = -lgen;

    // dL_gen/dScores, then contract against the post-step user factors.
    Tensor gscores = prob;
    double nt = static_cast<double>(targets.size());
    for (std::size_t u = 0; u < n_real; ++u) {
        double* gu = gscores.row_ptr(u);
        if (!keep(u)) {
            std::fill(gu, gu + n_items, 0.0);
            continue;
        }
        for (std::size_t j = 0; j < n_items; ++j) gu[j] *= nt;
        for (std::size_t t : targets) gu[t] -= 1.0;
        if (nuke)
            for (std::size_t j = 0; j < n_items; ++j) gu[j] = -gu[j];
    }
    Tensor m = matmul_tn(p_real, gscores);  // (d x n_items)

    // Only the observed fake positions carry gradient; the inner step moved
    // Q_i by 2 * lr * w_obs * x_hat[v][i] * P_v (old factors).
    UnrolledGrad out;
    out.lgen = lgen;
    out.fake_grad = Tensor(fake_rows.rows, n_items);
    double scale = 2.0 * inner_lr * prefit.config.w_obs;
    for (std::size_t v = 0; v < fake_rows.rows; ++v) {
        const double* pv = prefit.P.row_ptr(n_real + v);
        const double* xr = fake_rows.row_ptr(v);
        double* gr = out.fake_grad.row_ptr(v);
        for (std::size_t i = 0; i < n_items; ++i) {
            if (xr[i] == 0.0) continue;
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += pv[k] * m.v[k * n_items + i];
            gr[i] = scale * s;
        }
    }
    out.fake_grad.check_finite("unrolled attack gradient");

    if (commit) {
        prefit.P.v = std::move(p_next.v);
        prefit.Q.v = std::move(q_next.v);
    }
    return out;
}

namespace {

class WrmfSurrogate final : public AttackSurrogate {
public:
    explicit WrmfSurrogate(const WrmfSurrogateConfig& cfg) : cfg_(cfg) {}

    void reset(std::size_t n_users_total, std::size_t n_items, std::uint64_t seed) override {
        model_ = std::make_unique<WrmfModel>(n_users_total, n_items, cfg_.wrmf);
        model_->init(seed);
        opt_ = std::make_unique<Optimizer>(OptKind::adam, cfg_.adam_lr);
    }

    void fit_steps(const PoisonedView& view, std::size_t steps) override {
        model_->fit_steps(view, steps, *opt_);
    }

    UnrolledGrad attack_grad(const PoisonedView& view, const std::vector<std::size_t>& targets,
                             bool nuke, const std::vector<char>* user_mask) override {
        return unrolled_attack_grad(*model_, *view.real, *view.fake, targets, cfg_.inner_lr,
                                    /*commit=*/true, nuke, user_mask);
    }

    Tensor predict_real_users(const PoisonedView& view) override {
        return model_->predict_real_users(view.n_real_users());
    }

    const char* name() const override { return "wrmf"; }

private:
    WrmfSurrogateConfig cfg_;
    std::unique_ptr<WrmfModel> model_;
    std::unique_ptr<Optimizer> opt_;
};

// Dense (items x users) matrix of X* columns plus the observed mask.
struct ColumnBatch {
    Tensor x;     // (n_items x n_users_total)
    Tensor mask;  // 1 where observed
};

ColumnBatch columns_of(const PoisonedView& view) {
    ColumnBatch cb;
    cb.x = Tensor(view.n_items(), view.n_users());
    cb.mask = Tensor(view.n_items(), view.n_users());
    view.for_each_observed([&](std::size_t u, std::size_t i, double r) {
        cb.x.at(i, u) = r;
        cb.mask.at(i, u) = 1.0;
    });
    return cb;
}

class ItemAutoRecSurrogate final : public AttackSurrogate {
public:
    explicit ItemAutoRecSurrogate(const ItemAutoRecSurrogateConfig& cfg) : cfg_(cfg) {}

    void reset(std::size_t n_users_total, std::size_t n_items, std::uint64_t seed) override {
        (void)n_items;
        Rng rng(seed);
        enc_ = Dense(n_users_total, cfg_.hidden, rng, 0.05);
        dec_ = Dense(cfg_.hidden, n_users_total, rng, 0.05);
        opt_ = std::make_unique<Optimizer>(OptKind::adam, cfg_.adam_lr);
    }

    void fit_steps(const PoisonedView& view, std::size_t steps) override {
        ColumnBatch cb = columns_of(view);
        std::vector<Tensor*> params{&enc_.w, &enc_.b, &dec_.w, &dec_.b};
        for (std::size_t s = 0; s < steps; ++s) {
            Tensor recon = forward(cb.x);
            double l = masked_sse(recon, cb.x, cb.mask);
            if (!std::isfinite(l))
                throw DivergenceError("iautorec surrogate diverged at step " + std::to_string(s));
            zero_params();
            Tensor g = masked_sse_grad(recon, cb.x, cb.mask);
            backward(g);
            opt_->step(params);
        }
    }

    UnrolledGrad attack_grad(const PoisonedView& view, const std::vector<std::size_t>& targets,
                             bool nuke, const std::vector<char>* user_mask) override {
        // Final fitting step, then take the gradient through the forward pass
        // with the parameters held fixed: fake ratings sit inside the item
        // columns the autoencoder reads, so the input path is live.
        fit_steps(view, 1);

        ColumnBatch cb = columns_of(view);
        const std::size_t n_real = view.n_real_users();
        const std::size_t n_items = view.n_items();
        Tensor recon = forward(cb.x);

        Tensor scores(n_real, n_items);
        for (std::size_t i = 0; i < n_items; ++i)
            for (std::size_t u = 0; u < n_real; ++u) scores.at(u, i) = recon.at(i, u);
        Tensor prob = softmax_rows(scores);

        if (user_mask && user_mask->size() != n_real)
            throw ValidationError("iautorec attack_grad: user mask size mismatch");
        auto keep = [&](std::size_t u) { return !user_mask || (*user_mask)[u] != 0; };

        UnrolledGrad out;
        for (std::size_t u = 0; u < n_real; ++u) {
            if (!keep(u)) continue;
            const double* pu = prob.row_ptr(u);
            for (std::size_t t : targets) out.lgen -= std::log(std::max(pu[t], 1e-300));
        }
        if (nuke) out.lgen = -out.lgen;

        double nt = static_cast<double>(targets.size());
        Tensor gout(n_items, view.n_users());
        for (std::size_t u = 0; u < n_real; ++u) {
            if (!keep(u)) continue;
            const double* pu = prob.row_ptr(u);
            for (std::size_t i = 0; i < n_items; ++i) {
                double g = nt * pu[i];
                gout.at(i, u) = nuke ? -g : g;
            }
        }
        for (std::size_t t : targets)
            for (std::size_t u = 0; u < n_real; ++u)
                if (keep(u)) gout.at(t, u) += nuke ? 1.0 : -1.0;

        zero_params();
        Tensor gin = backward(gout);  // parameter grads discarded below
        zero_params();

        const Tensor& fake = *view.fake;
        out.fake_grad = Tensor(fake.rows, n_items);
        for (std::size_t v = 0; v < fake.rows; ++v)
            for (std::size_t i = 0; i < n_items; ++i)
                if (fake.at(v, i) != 0.0) out.fake_grad.at(v, i) = gin.at(i, n_real + v);
        out.fake_grad.check_finite("iautorec attack gradient");
        return out;
    }

    Tensor predict_real_users(const PoisonedView& view) override {
        ColumnBatch cb = columns_of(view);
        Tensor recon = forward(cb.x);
        Tensor scores(view.n_real_users(), view.n_items());
        for (std::size_t i = 0; i < view.n_items(); ++i)
            for (std::size_t u = 0; u < view.n_real_users(); ++u) scores.at(u, i) = recon.at(i, u);
        return scores;
    }

    const char* name() const override { return "iautorec"; }

private:
    Tensor forward(const Tensor& x) { return dec_.forward(sig_.forward(enc_.forward(x))); }
    Tensor backward(const Tensor& g) { return enc_.backward(sig_.backward(dec_.backward(g))); }
    void zero_params() {
        enc_.w.zero_grad();
        enc_.b.zero_grad();
        dec_.w.zero_grad();
        dec_.b.zero_grad();
    }

    ItemAutoRecSurrogateConfig cfg_;
    Dense enc_, dec_;
    SigmoidLayer sig_;
    std::unique_ptr<Optimizer> opt_;
};

}  // namespace

std::unique_ptr<AttackSurrogate> make_wrmf_surrogate(const WrmfSurrogateConfig& cfg) {
    return std::make_unique<WrmfSurrogate>(cfg);
}

std::unique_ptr<AttackSurrogate> make_iautorec_surrogate(const ItemAutoRecSurrogateConfig& cfg) {
    return std::make_unique<ItemAutoRecSurrogate>(cfg);
}

}  // namespace shill
