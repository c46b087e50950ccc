#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "shill/dataset.hpp"
#include "shill/diffcore.hpp"

namespace shill {

enum class VictimKind { svd, nmf, slope_one, uautorec, iautorec, neumf };

const char* victim_name(VictimKind kind);
VictimKind victim_kind_from(const std::string& label);  // throws ValidationError on unknown

struct VictimConfig {
    // biased matrix factorization (SVD)
    std::size_t svd_factors = 64;
    double svd_lr = 0.005;
    double svd_reg = 0.02;
    std::size_t svd_epochs = 50;

    // nonnegative matrix factorization, projected SGD
    std::size_t nmf_factors = 16;
    double nmf_lr = 0.01;
    double nmf_reg = 0.02;
    std::size_t nmf_epochs = 100;

    // user/item autoencoders
    std::size_t autorec_hidden = 128;
    double autorec_lr = 0.001;
    std::size_t autorec_steps = 200;

    // NeuMF (explicit-rating variant trained on squared error)
    std::size_t neumf_embedding = 8;
    std::size_t neumf_mlp1 = 16;
    std::size_t neumf_mlp2 = 8;
    double neumf_lr = 0.001;
    std::size_t neumf_epochs = 30;
    std::size_t neumf_batch = 256;

    // convergence = fixed budget + early stop on stalled loss
    double early_stop_eps = 1e-6;
    std::size_t early_stop_window = 50;
};

class Victim {
public:
    virtual ~Victim() = default;
    virtual void fit(const RatingMatrix& train, std::uint64_t seed) = 0;
    virtual double predict(std::size_t user, std::size_t item) const = 0;
    virtual std::vector<double> scores_row(std::size_t user) const = 0;
    virtual std::size_t num_users() const = 0;
    virtual std::size_t num_items() const = 0;
    virtual const char* name() const = 0;
};

// Victims with diffcore parameter tensors; exposes enough surface to run
// grad_check against the training loss.
class NeuralVictim : public Victim {
public:
    virtual std::vector<Tensor*> parameters() = 0;
    virtual void init_params(const RatingMatrix& train, std::uint64_t seed) = 0;
    virtual double loss_value(const RatingMatrix& train) = 0;
    // Accumulates dLoss/dParam into each parameter's grad and returns the loss.
    virtual double loss_and_grad(const RatingMatrix& train) = 0;
};

std::unique_ptr<Victim> make_victim(VictimKind kind, const VictimConfig& cfg = {});

// K highest-scoring items outside `exclude`; ties broken by ascending item
// index; shorter list when fewer candidates exist.
std::vector<std::size_t> top_k(const Victim& model, std::size_t user, std::size_t k,
                               const std::set<std::size_t>& exclude);

}  // namespace shill
