#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shill/dataset.hpp"
#include "shill/diffcore.hpp"
#include "shill/surrogate.hpp"

namespace shill {

// A batch of generated fake user profiles. Rows hold (item, rating) pairs
// sorted by item; every row rates every target item; ratings are discrete in
// [1, rating_max].
struct FakeProfileBatch {
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;
    std::string attacker_name;
    std::uint64_t seed = 0;
    std::vector<std::string> template_user_ids;

    Tensor to_dense(std::size_t num_items) const;
    bool operator==(const FakeProfileBatch& o) const {
        return rows == o.rows && attacker_name == o.attacker_name;
    }
};

// Appends the fake rows as new users "fake:<k>"; real indices are preserved.
RatingMatrix inject(const RatingMatrix& real, const FakeProfileBatch& batch);

// P random fillers rated round(clip(N(mu, sigma))), targets at rating_max.
FakeProfileBatch random_attack(const DatasetStats& stats, const AttackBudget& budget,
                               std::uint64_t seed);

// As random_attack with per-item moments; fillers drawn from rated items only.
FakeProfileBatch average_attack(const DatasetStats& stats, const AttackBudget& budget,
                                std::uint64_t seed);

// Selected items at rating_max, P random fillers at the minimum rating.
FakeProfileBatch segment_attack(const DatasetStats& stats, const AttackBudget& budget,
                                std::uint64_t seed);

// Selected (popular) items at rating_max, fillers as random_attack.
FakeProfileBatch bandwagon_attack(const DatasetStats& stats, const AttackBudget& budget,
                                  std::uint64_t seed);

struct AiaConfig {
    std::size_t steps = 30;        // outer gradient steps on the fake rows
    std::size_t inner_steps = 10;  // T surrogate steps per outer step
    double lr = 0.05;              // Adam on the fake row values
    std::string surrogate_kind = "wrmf";  // wrmf | iautorec
    WrmfSurrogateConfig wrmf;
    ItemAutoRecSurrogateConfig iautorec;
};

struct AiaResult {
    FakeProfileBatch batch;
    std::vector<double> lgen_history;  // push loss per outer step
};

// Adversarial injection attack: fake rows start as copies of sampled real
// profiles (full nonzero pattern, no profile-size cap), are optimized through
// the surrogate's last-step-unrolled gradient, then clipped and rounded.
AiaResult aia_attack(const RatingMatrix& real, const AttackBudget& budget, const AiaConfig& cfg,
                     std::uint64_t seed);

std::unique_ptr<AttackSurrogate> make_surrogate(const std::string& kind,
                                                const WrmfSurrogateConfig& wrmf,
                                                const ItemAutoRecSurrogateConfig& iautorec);

}  // namespace shill
