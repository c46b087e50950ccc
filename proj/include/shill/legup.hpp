#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shill/attacks.hpp"
#include "shill/dataset.hpp"
#include "shill/diffcore.hpp"
#include "shill/surrogate.hpp"

namespace shill {

// Sampled real-user profiles used as generation templates; each row keeps at
// most P of its source user's rated items.
struct TemplateBatch {
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;
    std::vector<std::size_t> source_users;

    // values and 0/1 support mask, both (A x num_items)
    std::pair<Tensor, Tensor> to_dense(std::size_t num_items) const;
};

TemplateBatch sample_templates(const RatingMatrix& real, const AttackBudget& budget,
                               std::uint64_t seed);

enum class GenMode { simple, autoencoder };

// Piecewise-linear approximation of the Heaviside step: three segments, value
// 0 at x=0, 0.5 at x=tau, 1 at x=1, slope xi-controlled in the outer pieces.
double heaviside_soft(double x, double tau, double xi);
struct HeavisidePartials {
    double value, dx, dtau;
};
HeavisidePartials heaviside_soft_partials(double x, double tau, double xi);

// Hard rating from the per-user threshold segments: r iff x falls in the r-th
// cumulative-tau bucket. tau has 5 nonnegative entries summing to 1.
int hard_rating(double x, const std::array<double, 5>& tau);
// Differentiable counterpart: 1 + sum_k H'(x, cum_k).
double soft_rating(double x, const std::array<double, 5>& tau, double xi);
// AUSH arm: fixed uniform thresholds 0.2/0.4/0.6/0.8.
int rounding_rating(double x);

// Generator: preference learner (per-item logits or a one-hidden-layer
// autoencoder) plus per-fake-user threshold logits whose row-softmax gives
// the five tau segments.
class Generator {
public:
    Generator() = default;
    Generator(GenMode mode, std::size_t num_items, std::size_t num_fakes, std::size_t hidden,
              std::uint64_t seed);

    // Preferences in (0,1) on the template support, 0 elsewhere.
    Tensor preference_forward(const Tensor& tmpl_values, const Tensor& support);
    // Accumulates into parameter grads; g_pref must be support-masked.
    void preference_backward(const Tensor& g_pref);

    Tensor tau() const;  // (A x 5) row-softmax of threshold_logits
    // Chain rule from d/d cum thresholds (A x 4) into threshold_logits.g.
    void tau_backward(const Tensor& g_cum);

    std::vector<Tensor*> parameters(bool learnable_tau);

    GenMode mode = GenMode::autoencoder;
    std::size_t num_items = 0, num_fakes = 0, hidden = 128;
    Tensor omega;             // (1 x num_items), simple mode
    Dense enc, dec;           // autoencoder mode
    Tensor threshold_logits;  // (A x 5)

private:
    Relu relu_;
    TanhLayer tanh_;
    Tensor cached_support_, cached_pref_;
};

// 512/128 MLP with a sigmoid head; consumes dense profile rows where zeros
// stand for the implicit feedback of unrated items.
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(std::size_t num_items, std::size_t h1, std::size_t h2, std::uint64_t seed);

    Tensor forward(const Tensor& rows);         // (B x 1) probabilities
    Tensor backward(const Tensor& g_probs);     // input grads; accumulates param grads
    std::vector<Tensor*> parameters();
    void zero_grads();

    Dense l1, l2, l3;

private:
    Relu r1_, r2_;
    SigmoidLayer sig_;
};

double discriminate(Discriminator& dis, const Tensor& profile_row);

// Eq.-style losses. generation_direct is the push objective (softmax NLL of
// the targets under the surrogate scores); nuke flips the sign.
double generation_direct(const Tensor& scores, const std::vector<std::size_t>& targets,
                         bool nuke = false);
Tensor generation_direct_grad(const Tensor& scores, const std::vector<std::size_t>& targets,
                              bool nuke = false);
// Squared error between soft ratings and the template ratings on the support.
double generation_indirect(const Tensor& soft, const Tensor& tmpl_values, const Tensor& support);
Tensor generation_indirect_grad(const Tensor& soft, const Tensor& tmpl_values,
                                const Tensor& support);
// log D(real) + log(1 - D(fake)), means over each batch; the discriminator
// maximizes this, the generator minimizes the fake term.
double discrimination(const std::vector<double>& real_probs,
                      const std::vector<double>& fake_probs);

std::vector<std::size_t> in_segment_users(const RatingMatrix& m,
                                          const std::set<std::size_t>& selected);
double in_segment_loss(const Tensor& scores, const std::vector<std::size_t>& targets,
                       const std::vector<std::size_t>& users);

struct LegUpConfig {
    std::size_t k1 = 1, k2 = 1;
    std::size_t inner_steps = 10;        // T
    std::size_t surrogate_pretrain = 0;  // extra fitting steps ahead of the T loop
    // Warm start carries one surrogate across generator steps (the literal
    // reading of the training loop). Cold start refits pretrain+T steps from
    // scratch per step, which makes the per-epoch loss values comparable.
    bool surrogate_warm_start = true;
    std::size_t epochs = 50;
    double gen_lr = 1e-3, dis_lr = 1e-3;
    double xi = 0.1;
    GenMode gen_mode = GenMode::autoencoder;
    bool learnable_discretization = true;  // false: AUSH rounding arm
    bool use_discriminator = true;
    bool direct_loss = true;  // false: reconstruction (indirect) arm
    bool nuke = false;
    std::size_t hidden = 128, dis_hidden1 = 512, dis_hidden2 = 128;
    bool resample_templates_per_epoch = true;
    std::string surrogate_kind = "wrmf";
    WrmfSurrogateConfig wrmf;
    ItemAutoRecSurrogateConfig iautorec;
    std::size_t dis_real_batch = 0;  // 0: use A
    std::size_t eval_users = 128;    // subsample for the loss history
    std::vector<std::size_t> restrict_users;  // nonempty: in-segment objective
};

struct LossHistory {
    std::vector<double> gen;    // generation loss per epoch
    std::vector<double> dis;    // discrimination loss (empty without D)
    std::vector<double> adv;    // E log(1 - D(fake)) (empty without D)
    std::vector<double> total;  // minimax objective value per epoch
};

struct LegUpResult {
    Generator generator;
    Discriminator discriminator;
    LossHistory history;
    TemplateBatch templates;  // the batch the final profiles are built from
};

// Alternating minimax training: k1 discriminator steps, then k2 generator
// steps each wrapping T surrogate steps with the last one unrolled.
LegUpResult legup_train(const RatingMatrix& real, const AttackBudget& budget,
                        const LegUpConfig& cfg, std::uint64_t seed);

// Hard-discretized profiles on the template support, targets at rating_max.
FakeProfileBatch assemble_fake_batch(Generator& gen, const TemplateBatch& templates,
                                     const AttackBudget& budget, bool learnable_discretization);

// train + assemble, the deployable attack.
struct LegUpOutcome {
    FakeProfileBatch batch;
    LossHistory history;
};
LegUpOutcome legup_attack(const RatingMatrix& real, const AttackBudget& budget,
                          const LegUpConfig& cfg, std::uint64_t seed);

// Versioned flat binary of shape-tagged tensors, for resume/inspection.
void save_legup_params(const std::string& path, const Generator& gen, const Discriminator& dis);
void load_legup_params(const std::string& path, Generator& gen, Discriminator& dis);

}  // namespace shill
