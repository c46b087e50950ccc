#pragma once

#include <functional>
#include <string>
#include <vector>

#include "shill/attacks.hpp"
#include "shill/dataset.hpp"
#include "shill/legup.hpp"
#include "shill/victims.hpp"

namespace shill {

// Fraction of evaluation users whose top-K list (train-rated items excluded)
// contains the target. Evaluation users are the first num_eval_users rows
// that did not rate the target in train; injected fakes sit past that count.
double hit_ratio(const Victim& victim, const RatingMatrix& train, std::size_t target,
                 std::size_t k, std::size_t num_eval_users);

struct DetectionResult {
    std::vector<std::size_t> flagged;   // ascending user indices
    std::size_t components_used = 0;
};

// Unsupervised PCA-coefficient detector: z-score user rows (zeros included),
// take the top principal directions of the user-user covariance through the
// item-dimension Gram product, score users by their squared coefficient norm
// in those components and flag the num_flag lowest. Fake profiles correlate
// weakly with the dominant taste directions.
DetectionResult detect(const RatingMatrix& m, std::size_t num_flag, std::size_t k_components);

std::pair<double, double> precision_recall(const std::vector<std::size_t>& flagged,
                                           const std::vector<std::size_t>& truth);

// CSV `user_id,x,y,is_fake` of top-2 principal-component coordinates.
void export_projection(const RatingMatrix& m, const std::vector<bool>& is_fake,
                       const std::string& out_path);

struct AttackOutcome {
    FakeProfileBatch batch;
    LossHistory history;  // populated by learning-based attackers
};
using AttackFn =
    std::function<AttackOutcome(const RatingMatrix& train, const AttackBudget&, std::uint64_t)>;

struct CellSeeds {
    std::uint64_t victim_seed = 0;
    std::uint64_t attack_seed = 0;
};

struct DetectorConfig {
    std::size_t num_flag = 0;  // 0: flag as many as injected
    std::size_t components = 3;
};

struct ExperimentReport {
    std::string dataset, attacker, victim;
    std::size_t target = 0;
    std::string target_ext;
    double hr_before = 0.0, hr_after = 0.0;
    double precision = 0.0, recall = 0.0;
    std::size_t users_before = 0, users_after = 0, flagged = 0;
    LossHistory history;
    double wall_ms = 0.0;
    std::uint64_t victim_seed = 0, attack_seed = 0;
};

// Fit the victim, measure, inject, refit from scratch, measure again, run the
// detector, record everything. The budget must carry exactly one target.
ExperimentReport run_attack_cell(const DatasetSplit& split, const std::string& attacker_name,
                                 const AttackFn& attack, VictimKind victim_kind,
                                 const VictimConfig& victim_cfg, const AttackBudget& budget,
                                 const CellSeeds& seeds, const DetectorConfig& detector,
                                 std::size_t hr_k = 10);

}  // namespace shill
