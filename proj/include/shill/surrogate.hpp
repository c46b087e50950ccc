#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "shill/dataset.hpp"
#include "shill/diffcore.hpp"

namespace shill {

// A rating matrix augmented with dense fake rows (0 = unrated). The fake rows
// are appended after the real users; either side may be absent in tests.
struct PoisonedView {
    const RatingMatrix* real = nullptr;
    const Tensor* fake = nullptr;  // (A x n_items), values are the injected ratings

    std::size_t n_real_users() const { return real ? real->num_users() : 0; }
    std::size_t n_fake_users() const { return fake ? fake->rows : 0; }
    std::size_t n_users() const { return n_real_users() + n_fake_users(); }
    std::size_t n_items() const { return real ? real->num_items() : (fake ? fake->cols : 0); }

    template <typename Fn>  // fn(user, item, rating) over observed entries
    void for_each_observed(Fn&& fn) const {
        if (real)
            for (const auto& e : real->entries()) fn(e.user, e.item, e.value);
        if (fake) {
            std::size_t base = n_real_users();
            for (std::size_t v = 0; v < fake->rows; ++v) {
                const double* row = fake->row_ptr(v);
                for (std::size_t i = 0; i < fake->cols; ++i)
                    if (row[i] != 0.0) fn(base + v, i, row[i]);
            }
        }
    }
};

struct WrmfConfig {
    std::size_t factors = 64;
    double lambda = 1e-5;  // L2 on both factor matrices
    double w_obs = 1.0;    // weight of observed entries
    double w_miss = 0.05;  // weight of missing entries (target 0)
};

// Weighted regularized matrix factorization trained by gradient descent so
// the final step stays unrollable. The missing-entry term is accounted in
// full every step through the Gram identity
//   sum_{u,i} (P_u . Q_i)^2 = tr((P^T P)(Q^T Q)),
// which matches the entrywise dense sweep exactly up to summation order.
class WrmfModel {
public:
    WrmfModel(std::size_t n_users_total, std::size_t n_items, WrmfConfig cfg);

    void init(std::uint64_t seed);  // factors ~ N(0, 0.01)

    double loss(const PoisonedView& view) const;

    // Accumulates dLoss/dP, dLoss/dQ into P.g / Q.g and returns the loss.
    double accumulate_gradient(const PoisonedView& view);

    // init(seed) followed by `steps` optimizer steps. Throws DivergenceError
    // naming the step when the loss goes non-finite.
    void fit(const PoisonedView& view, std::size_t steps, Optimizer& opt, std::uint64_t seed);
    void fit_steps(const PoisonedView& view, std::size_t steps, Optimizer& opt);

    Tensor predict_all() const;                 // (n_users_total x n_items)
    Tensor predict_real_users(std::size_t n_real) const;

    Tensor P, Q;  // (n_users_total x d), (n_items x d)
    WrmfConfig config;
};

struct UnrolledGrad {
    Tensor fake_grad;  // dL_gen/dX_hat, nonzero only on the fake support
    double lgen = 0.0; // generation loss at the post-step surrogate
};

// Last-step unrolling: takes the surrogate after T-1 inner steps, applies one
// symbolic plain-SGD step Gamma_T = Gamma_{T-1} - inner_lr * dL_RS/dGamma,
// evaluates the push loss at Gamma_T and differentiates the whole one-step
// composite with respect to the fake rows. The path through Gamma_{T-1} is
// cut. When commit is set the model is advanced to Gamma_T. A non-null
// user_mask (size n_real, nonzero = keep) restricts the push loss to a user
// subset, e.g. in-segment users.
UnrolledGrad unrolled_attack_grad(WrmfModel& prefit, const RatingMatrix& real,
                                  const Tensor& fake_rows,
                                  const std::vector<std::size_t>& targets, double inner_lr,
                                  bool commit = false, bool nuke = false,
                                  const std::vector<char>* user_mask = nullptr);

// Common surface for the attack loop so Leg-UP and AIA can swap surrogates.
class AttackSurrogate {
public:
    virtual ~AttackSurrogate() = default;
    virtual void reset(std::size_t n_users_total, std::size_t n_items, std::uint64_t seed) = 0;
    virtual void fit_steps(const PoisonedView& view, std::size_t steps) = 0;
    // Runs the final inner step and returns dL_gen/dX_hat plus the loss value.
    virtual UnrolledGrad attack_grad(const PoisonedView& view,
                                     const std::vector<std::size_t>& targets, bool nuke,
                                     const std::vector<char>* user_mask) = 0;
    virtual Tensor predict_real_users(const PoisonedView& view) = 0;
    virtual const char* name() const = 0;
};

struct WrmfSurrogateConfig {
    WrmfConfig wrmf;
    double adam_lr = 0.01;    // inner steps 1..T-1
    double inner_lr = 1e-4;   // the unrolled plain-SGD step T
};

std::unique_ptr<AttackSurrogate> make_wrmf_surrogate(const WrmfSurrogateConfig& cfg);

struct ItemAutoRecSurrogateConfig {
    std::size_t hidden = 128;
    double adam_lr = 1e-3;
};

// Item-based autoencoder surrogate. Fake ratings enter the item columns that
// the autoencoder consumes, so the attack gradient is taken through the
// forward pass with the fitted parameters held fixed.
std::unique_ptr<AttackSurrogate> make_iautorec_surrogate(const ItemAutoRecSurrogateConfig& cfg);

}  // namespace shill
