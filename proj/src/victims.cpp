#include "shill/victims.hpp"

#include <algorithm>
#include <cmath>

#include "shill/rng.hpp"

namespace shill {

const char* victim_name(VictimKind kind) {
    switch (kind) {
        case VictimKind::svd: return "svd";
        case VictimKind::nmf: return "nmf";
        case VictimKind::slope_one: return "slopeone";
        case VictimKind::uautorec: return "uautorec";
        case VictimKind::iautorec: return "iautorec";
        case VictimKind::neumf: return "neumf";
    }
    return "?";
}

VictimKind victim_kind_from(const std::string& label) {
    if (label == "svd") return VictimKind::svd;
    if (label == "nmf") return VictimKind::nmf;
    if (label == "slopeone" || label == "slope-one" || label == "slope_one")
        return VictimKind::slope_one;
    if (label == "uautorec") return VictimKind::uautorec;
    if (label == "iautorec") return VictimKind::iautorec;
    if (label == "neumf") return VictimKind::neumf;
    throw ValidationError("unknown victim model '" + label + "'");
}

namespace {

void require_fitted(bool fitted) {
    if (!fitted) throw ValidationError("victim: predict before fit");
}

// Tracks a trailing window of loss values; fires when the best value stops
// improving by more than eps across the whole window.
class EarlyStop {
public:
    EarlyStop(double eps, std::size_t window) : eps_(eps), window_(window) {}
    bool should_stop(double loss) {
        if (loss < best_ - eps_) {
            best_ = loss;
            stalled_ = 0;
            return false;
        }
        return ++stalled_ >= window_;
    }

private:
    double eps_;
    std::size_t window_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t stalled_ = 0;
};

class SvdVictim final : public Victim {
public:
    explicit SvdVictim(const VictimConfig& cfg) : cfg_(cfg) {}

    void fit(const RatingMatrix& train, std::uint64_t seed) override {
        n_ = train.num_users();
        m_ = train.num_items();
        const std::size_t d = cfg_.svd_factors;
        Rng rng(seed);
        p_ = Tensor::randn(n_, d, rng, 0.01);
        q_ = Tensor::randn(m_, d, rng, 0.01);
        bu_.assign(n_, 0.0);
        bi_.assign(m_, 0.0);
        double sum = 0.0;
        for (const auto& e : train.entries()) sum += e.value;
        mu_ = sum / static_cast<double>(train.num_ratings());

        std::vector<std::size_t> order(train.num_ratings());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        EarlyStop stop(cfg_.early_stop_eps, cfg_.early_stop_window);
        const double lr = cfg_.svd_lr, reg = cfg_.svd_reg;
        for (std::size_t epoch = 0; epoch < cfg_.svd_epochs; ++epoch) {
            rng.shuffle(order);
            double sq = 0.0;
            for (std::size_t k : order) {
                const auto& e = train.entries()[k];
                double* pu = p_.row_ptr(e.user);
                double* qi = q_.row_ptr(e.item);
                double pred = mu_ + bu_[e.user] + bi_[e.item];
                for (std::size_t f = 0; f < d; ++f) pred += pu[f] * qi[f];
                double err = e.value - pred;
                sq += err * err;
                bu_[e.user] += lr * (err - reg * bu_[e.user]);
                bi_[e.item] += lr * (err - reg * bi_[e.item]);
                for (std::size_t f = 0; f < d; ++f) {
                    double puf = pu[f];
                    pu[f] += lr * (err * qi[f] - reg * puf);
                    qi[f] += lr * (err * puf - reg * qi[f]);
                }
            }
            if (!std::isfinite(sq))
                throw DivergenceError("svd fit diverged at epoch " + std::to_string(epoch));
            if (stop.should_stop(sq)) break;
        }
        fitted_ = true;
    }

    double predict(std::size_t user, std::size_t item) const override {
        require_fitted(fitted_);
        double s = mu_ + bu_[user] + bi_[item];
        const double* pu = p_.row_ptr(user);
        const double* qi = q_.row_ptr(item);
        for (std::size_t f = 0; f < p_.cols; ++f) s += pu[f] * qi[f];
        return s;
    }

    std::vector<double> scores_row(std::size_t user) const override {
        require_fitted(fitted_);
        std::vector<double> out(m_);
        for (std::size_t i = 0; i < m_; ++i) out[i] = predict(user, i);
        return out;
    }

    std::size_t num_users() const override { return n_; }
    std::size_t num_items() const override { return m_; }
    const char* name() const override { return "svd"; }

private:
    VictimConfig cfg_;
    std::size_t n_ = 0, m_ = 0;
    Tensor p_, q_;
    std::vector<double> bu_, bi_;
    double mu_ = 0.0;
    bool fitted_ = false;
};

class NmfVictim final : public Victim {
public:
    explicit NmfVictim(const VictimConfig& cfg) : cfg_(cfg) {}

    void fit(const RatingMatrix& train, std::uint64_t seed) override {
        n_ = train.num_users();
        m_ = train.num_items();
        const std::size_t d = cfg_.nmf_factors;
        Rng rng(seed);
        p_ = Tensor(n_, d);
        q_ = Tensor(m_, d);
        for (auto& x : p_.v) x = 0.1 * rng.uniform() + 0.01;
        for (auto& x : q_.v) x = 0.1 * rng.uniform() + 0.01;

        std::vector<std::size_t> order(train.num_ratings());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        EarlyStop stop(cfg_.early_stop_eps, cfg_.early_stop_window);
        const double lr = cfg_.nmf_lr, reg = cfg_.nmf_reg;
        for (std::size_t epoch = 0; epoch < cfg_.nmf_epochs; ++epoch) {
            rng.shuffle(order);
            double sq = 0.0;
            for (std::size_t k : order) {
                const auto& e = train.entries()[k];
                double* pu = p_.row_ptr(e.user);
                double* qi = q_.row_ptr(e.item);
                double pred = 0.0;
                for (std::size_t f = 0; f < d; ++f) pred += pu[f] * qi[f];
                double err = e.value - pred;
                sq += err * err;
                // projected step keeps both factors nonnegative
                for (std::size_t f = 0; f < d; ++f) {
                    double puf = pu[f];
                    pu[f] = std::max(0.0, pu[f] + lr * (err * qi[f] - reg * puf));
                    qi[f] = std::max(0.0, qi[f] + lr * (err * puf - reg * qi[f]));
                }
            }
            if (!std::isfinite(sq))
                throw DivergenceError("nmf fit diverged at epoch " + std::to_string(epoch));
            if (stop.should_stop(sq)) break;
        }
        fitted_ = true;
    }

    double predict(std::size_t user, std::size_t item) const override {
        require_fitted(fitted_);
        const double* pu = p_.row_ptr(user);
        const double* qi = q_.row_ptr(item);
        double s = 0.0;
        for (std::size_t f = 0; f < p_.cols; ++f) s += pu[f] * qi[f];
        return s;
    }

    std::vector<double> scores_row(std::size_t user) const override {
        require_fitted(fitted_);
        std::vector<double> out(m_);
        for (std::size_t i = 0; i < m_; ++i) out[i] = predict(user, i);
        return out;
    }

    std::size_t num_users() const override { return n_; }
    std::size_t num_items() const override { return m_; }
    const char* name() const override { return "nmf"; }

    const Tensor& user_factors() const { return p_; }
    const Tensor& item_factors() const { return q_; }

private:
    VictimConfig cfg_;
    std::size_t n_ = 0, m_ = 0;
    Tensor p_, q_;
    bool fitted_ = false;
};

// Weighted Slope One: average pairwise deviations weighted by co-rating
// counts. Deterministic, no seed.
class SlopeOneVictim final : public Victim {
public:
    void fit(const RatingMatrix& train, std::uint64_t) override {
        n_ = train.num_users();
        m_ = train.num_items();
        dev_ = Tensor(m_, m_);
        cnt_ = Tensor(m_, m_);
        for (std::size_t u = 0; u < n_; ++u) {
            const auto& row = train.by_user()[u];
            for (std::size_t a = 0; a < row.size(); ++a)
                for (std::size_t b = 0; b < row.size(); ++b) {
                    if (a == b) continue;
                    dev_.at(row[a].first, row[b].first) += row[a].second - row[b].second;
                    cnt_.at(row[a].first, row[b].first) += 1.0;
                }
        }
        for (std::size_t k = 0; k < dev_.size(); ++k)
            if (cnt_.v[k] > 0.0) dev_.v[k] /= cnt_.v[k];

        item_mean_.assign(m_, 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            const auto& col = train.by_item()[i];
            double s = 0.0;
            for (const auto& [u, r] : col) s += r;
            item_mean_[i] = col.empty() ? 0.0 : s / static_cast<double>(col.size());
            total += s;
        }
        global_mean_ = total / static_cast<double>(train.num_ratings());
        for (std::size_t i = 0; i < m_; ++i)
            if (train.by_item()[i].empty()) item_mean_[i] = global_mean_;
        rows_ = train.by_user();
        fitted_ = true;
    }

    double predict(std::size_t user, std::size_t item) const override {
        require_fitted(fitted_);
        const auto& rated = rows_[user];
        double num = 0.0, den = 0.0;
        for (const auto& [j, r] : rated) {
            if (j == item) continue;
            double c = cnt_.at(item, j);
            if (c <= 0.0) continue;
            num += (dev_.at(item, j) + r) * c;
            den += c;
        }
        if (den == 0.0) return item_mean_[item];  // no co-rated evidence
        return num / den;
    }

    std::vector<double> scores_row(std::size_t user) const override {
        require_fitted(fitted_);
        std::vector<double> out(m_);
        for (std::size_t i = 0; i < m_; ++i) out[i] = predict(user, i);
        return out;
    }

    std::size_t num_users() const override { return n_; }
    std::size_t num_items() const override { return m_; }
    const char* name() const override { return "slopeone"; }

private:
    std::size_t n_ = 0, m_ = 0;
    Tensor dev_, cnt_;
    std::vector<double> item_mean_;
    double global_mean_ = 0.0;
    std::vector<std::vector<std::pair<std::size_t, double>>> rows_;
    bool fitted_ = false;
};

// One-hidden-layer autoencoder over user rows (user_based) or item columns,
// trained full-batch on the observed entries.
class AutoRecVictim final : public NeuralVictim {
public:
    AutoRecVictim(const VictimConfig& cfg, bool user_based)
        : cfg_(cfg), user_based_(user_based) {}

    void init_params(const RatingMatrix& train, std::uint64_t seed) override {
        n_ = train.num_users();
        m_ = train.num_items();
        io_dim_ = user_based_ ? m_ : n_;
        Rng rng(seed);
        double std1 = 1.0 / std::sqrt(static_cast<double>(io_dim_));
        enc_ = Dense(io_dim_, cfg_.autorec_hidden, rng, std1);
        dec_ = Dense(cfg_.autorec_hidden, io_dim_, rng,
                     1.0 / std::sqrt(static_cast<double>(cfg_.autorec_hidden)));
        build_batch(train);
    }

    std::vector<Tensor*> parameters() override { return {&enc_.w, &enc_.b, &dec_.w, &dec_.b}; }

    double loss_value(const RatingMatrix&) override {
        Tensor recon = dec_.forward(sig_.forward(enc_.forward(x_)));
        return masked_sse(recon, x_, mask_);
    }

    double loss_and_grad(const RatingMatrix&) override {
        Tensor recon = dec_.forward(sig_.forward(enc_.forward(x_)));
        double l = masked_sse(recon, x_, mask_);
        Tensor g = masked_sse_grad(recon, x_, mask_);
        enc_.backward(sig_.backward(dec_.backward(g)));
        return l;
    }

    void fit(const RatingMatrix& train, std::uint64_t seed) override {
        init_params(train, seed);
        Optimizer opt(OptKind::adam, cfg_.autorec_lr);
        auto params = parameters();
        EarlyStop stop(cfg_.early_stop_eps, cfg_.early_stop_window);
        for (std::size_t step = 0; step < cfg_.autorec_steps; ++step) {
            for (Tensor* p : params) p->zero_grad();
            double l = loss_and_grad(train);
            if (!std::isfinite(l))
                throw DivergenceError("autorec fit diverged at step " + std::to_string(step));
            opt.step(params);
            if (stop.should_stop(l)) break;
        }
        recon_ = dec_.forward(sig_.forward(enc_.forward(x_)));
        fitted_ = true;
    }

    double predict(std::size_t user, std::size_t item) const override {
        require_fitted(fitted_);
        return user_based_ ? recon_.at(user, item) : recon_.at(item, user);
    }

    std::vector<double> scores_row(std::size_t user) const override {
        require_fitted(fitted_);
        std::vector<double> out(m_);
        for (std::size_t i = 0; i < m_; ++i) out[i] = predict(user, i);
        return out;
    }

    std::size_t num_users() const override { return n_; }
    std::size_t num_items() const override { return m_; }
    const char* name() const override { return user_based_ ? "uautorec" : "iautorec"; }

private:
    void build_batch(const RatingMatrix& train) {
        std::size_t rows = user_based_ ? n_ : m_;
        x_ = Tensor(rows, io_dim_);
        mask_ = Tensor(rows, io_dim_);
        for (const auto& e : train.entries()) {
            std::size_t r = user_based_ ? e.user : e.item;
            std::size_t c = user_based_ ? e.item : e.user;
            x_.at(r, c) = e.value;
            mask_.at(r, c) = 1.0;
        }
    }

    VictimConfig cfg_;
    bool user_based_;
    std::size_t n_ = 0, m_ = 0, io_dim_ = 0;
    Dense enc_, dec_;
    SigmoidLayer sig_;
    Tensor x_, mask_, recon_;
    bool fitted_ = false;
};

// NeuMF modified for explicit feedback: GMF and MLP towers fused into a
// linear head, trained on squared rating error.
class NeuMfVictim final : public NeuralVictim {
public:
    explicit NeuMfVictim(const VictimConfig& cfg) : cfg_(cfg) {}

    void init_params(const RatingMatrix& train, std::uint64_t seed) override {
        n_ = train.num_users();
        m_ = train.num_items();
        const std::size_t e = cfg_.neumf_embedding;
        Rng rng(seed);
        p_gmf_ = Tensor::randn(n_, e, rng, 0.05);
        q_gmf_ = Tensor::randn(m_, e, rng, 0.05);
        p_mlp_ = Tensor::randn(n_, e, rng, 0.05);
        q_mlp_ = Tensor::randn(m_, e, rng, 0.05);
        mlp1_ = Dense(2 * e, cfg_.neumf_mlp1, rng, 1.0 / std::sqrt(2.0 * static_cast<double>(e)));
        mlp2_ = Dense(cfg_.neumf_mlp1, cfg_.neumf_mlp2, rng,
                      1.0 / std::sqrt(static_cast<double>(cfg_.neumf_mlp1)));
        fuse_ = Dense(e + cfg_.neumf_mlp2, 1, rng,
                      1.0 / std::sqrt(static_cast<double>(e + cfg_.neumf_mlp2)));
        double sum = 0.0;
        for (const auto& en : train.entries()) sum += en.value;
        fuse_.b.v[0] = sum / static_cast<double>(train.num_ratings());  // start at the mean
        for (Tensor* t : parameters()) t->ensure_grad();
    }

    std::vector<Tensor*> parameters() override {
        return {&p_gmf_, &q_gmf_, &p_mlp_, &q_mlp_, &mlp1_.w, &mlp1_.b,
                &mlp2_.w, &mlp2_.b, &fuse_.w, &fuse_.b};
    }

    double loss_value(const RatingMatrix& train) override {
        std::vector<std::size_t> all(train.num_ratings());
        for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
        return batch_pass(train, all, false);
    }

    double loss_and_grad(const RatingMatrix& train) override {
        std::vector<std::size_t> all(train.num_ratings());
        for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
        return batch_pass(train, all, true);
    }

    void fit(const RatingMatrix& train, std::uint64_t seed) override {
        init_params(train, seed);
        Optimizer opt(OptKind::adam, cfg_.neumf_lr);
        auto params = parameters();
        Rng rng(Rng(seed).fork(1).seed());
        std::vector<std::size_t> order(train.num_ratings());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        EarlyStop stop(cfg_.early_stop_eps, cfg_.early_stop_window);
        for (std::size_t epoch = 0; epoch < cfg_.neumf_epochs; ++epoch) {
            rng.shuffle(order);
            double sq = 0.0;
            for (std::size_t off = 0; off < order.size(); off += cfg_.neumf_batch) {
                std::size_t hi = std::min(order.size(), off + cfg_.neumf_batch);
                std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(off),
                                               order.begin() + static_cast<std::ptrdiff_t>(hi));
                for (Tensor* p : params) p->zero_grad();
                sq += batch_pass(train, batch, true) * static_cast<double>(batch.size());
                opt.step(params);
            }
            if (!std::isfinite(sq))
                throw DivergenceError("neumf fit diverged at epoch " + std::to_string(epoch));
            if (stop.should_stop(sq)) break;
        }
        fitted_ = true;
    }

    double predict(std::size_t user, std::size_t item) const override {
        require_fitted(fitted_);
        return forward_pair(user, item);
    }

    std::vector<double> scores_row(std::size_t user) const override {
        require_fitted(fitted_);
        std::vector<double> out(m_);
        for (std::size_t i = 0; i < m_; ++i) out[i] = forward_pair(user, i);
        return out;
    }

    std::size_t num_users() const override { return n_; }
    std::size_t num_items() const override { return m_; }
    const char* name() const override { return "neumf"; }

private:
    // Mean squared error over the chosen entries; optionally backpropagates.
    double batch_pass(const RatingMatrix& train, const std::vector<std::size_t>& batch,
                      bool with_grad) {
        const std::size_t bsz = batch.size();
        const std::size_t e = cfg_.neumf_embedding;
        Tensor mlp_in(bsz, 2 * e), gmf(bsz, e), target(bsz, 1);
        for (std::size_t r = 0; r < bsz; ++r) {
            const auto& en = train.entries()[batch[r]];
            const double* pu = p_mlp_.row_ptr(en.user);
            const double* qi = q_mlp_.row_ptr(en.item);
            for (std::size_t f = 0; f < e; ++f) {
                mlp_in.at(r, f) = pu[f];
                mlp_in.at(r, e + f) = qi[f];
            }
            const double* pg = p_gmf_.row_ptr(en.user);
            const double* qg = q_gmf_.row_ptr(en.item);
            for (std::size_t f = 0; f < e; ++f) gmf.at(r, f) = pg[f] * qg[f];
            target.at(r, 0) = en.value;
        }
        Tensor h1 = relu1_.forward(mlp1_.forward(mlp_in));
        Tensor h2 = relu2_.forward(mlp2_.forward(h1));
        Tensor fuse_in(bsz, e + cfg_.neumf_mlp2);
        for (std::size_t r = 0; r < bsz; ++r) {
            for (std::size_t f = 0; f < e; ++f) fuse_in.at(r, f) = gmf.at(r, f);
            for (std::size_t f = 0; f < cfg_.neumf_mlp2; ++f)
                fuse_in.at(r, e + f) = h2.at(r, f);
        }
        Tensor out = fuse_.forward(fuse_in);
        double l = mse(out, target);
        if (!with_grad) return l;

        Tensor g_fuse_in = fuse_.backward(mse_grad(out, target));
        Tensor g_h2(bsz, cfg_.neumf_mlp2);
        for (std::size_t r = 0; r < bsz; ++r)
            for (std::size_t f = 0; f < cfg_.neumf_mlp2; ++f)
                g_h2.at(r, f) = g_fuse_in.at(r, e + f);
        Tensor g_mlp_in = mlp1_.backward(relu1_.backward(mlp2_.backward(relu2_.backward(g_h2))));

        p_gmf_.ensure_grad();
        q_gmf_.ensure_grad();
        p_mlp_.ensure_grad();
        q_mlp_.ensure_grad();
        for (std::size_t r = 0; r < bsz; ++r) {
            const auto& en = train.entries()[batch[r]];
            double* gpu = p_mlp_.g.data() + en.user * e;
            double* gqi = q_mlp_.g.data() + en.item * e;
            for (std::size_t f = 0; f < e; ++f) {
                gpu[f] += g_mlp_in.at(r, f);
                gqi[f] += g_mlp_in.at(r, e + f);
            }
            double* gpg = p_gmf_.g.data() + en.user * e;
            double* gqg = q_gmf_.g.data() + en.item * e;
            const double* pg = p_gmf_.row_ptr(en.user);
            const double* qg = q_gmf_.row_ptr(en.item);
            for (std::size_t f = 0; f < e; ++f) {
                double gg = g_fuse_in.at(r, f);
                gpg[f] += gg * qg[f];
                gqg[f] += gg * pg[f];
            }
        }
        return l;
    }

    // Stateless forward for prediction; no layer caches touched.
    double forward_pair(std::size_t user, std::size_t item) const {
        const std::size_t e = cfg_.neumf_embedding;
        std::vector<double> x(2 * e);
        for (std::size_t f = 0; f < e; ++f) {
            x[f] = p_mlp_.at(user, f);
            x[e + f] = q_mlp_.at(item, f);
        }
        auto affine_relu = [](const Dense& layer, const std::vector<double>& in, bool relu) {
            std::vector<double> out(layer.w.rows);
            for (std::size_t o = 0; o < layer.w.rows; ++o) {
                double s = layer.b.v[o];
                const double* wo = layer.w.row_ptr(o);
                for (std::size_t i = 0; i < layer.w.cols; ++i) s += wo[i] * in[i];
                out[o] = relu && s < 0.0 ? 0.0 : s;
            }
            return out;
        };
        std::vector<double> h2 = affine_relu(mlp2_, affine_relu(mlp1_, x, true), true);
        std::vector<double> fuse_in(e + cfg_.neumf_mlp2);
        for (std::size_t f = 0; f < e; ++f)
            fuse_in[f] = p_gmf_.at(user, f) * q_gmf_.at(item, f);
        for (std::size_t f = 0; f < cfg_.neumf_mlp2; ++f) fuse_in[e + f] = h2[f];
        return affine_relu(fuse_, fuse_in, false)[0];
    }

    VictimConfig cfg_;
    std::size_t n_ = 0, m_ = 0;
    Tensor p_gmf_, q_gmf_, p_mlp_, q_mlp_;
    Dense mlp1_, mlp2_, fuse_;
    Relu relu1_, relu2_;
    bool fitted_ = false;
};

}  // namespace

std::unique_ptr<Victim> make_victim(VictimKind kind, const VictimConfig& cfg) {
    switch (kind) {
        case VictimKind::svd: return std::make_unique<SvdVictim>(cfg);
        case VictimKind::nmf: return std::make_unique<NmfVictim>(cfg);
        case VictimKind::slope_one: return std::make_unique<SlopeOneVictim>();
        case VictimKind::uautorec: return std::make_unique<AutoRecVictim>(cfg, true);
        case VictimKind::iautorec: return std::make_unique<AutoRecVictim>(cfg, false);
        case VictimKind::neumf: return std::make_unique<NeuMfVictim>(cfg);
    }
    throw ValidationError("unknown victim kind");
}

std::vector<std::size_t> top_k(const Victim& model, std::size_t user, std::size_t k,
                               const std::set<std::size_t>& exclude) {
    if (k < 1) throw ValidationError("top_k: K must be >= 1");
    std::vector<double> scores = model.scores_row(user);
    std::vector<std::size_t> candidates;
    candidates.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (!exclude.count(i)) candidates.push_back(i);
    std::size_t take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    candidates.resize(take);
    return candidates;
}

}  // namespace shill
