#pragma once

#include <string>
#include <vector>

#include "shill/config.hpp"
#include "shill/evaluation.hpp"

namespace shill {

struct RunResult {
    int exit_code = 0;  // 0 ok, 1 cell failures, 2 config error
    std::vector<ExperimentReport> reports;
    std::vector<std::string> failures;
};

// Executes the attackers x victims x targets grid. Per-cell seeds derive from
// hash(master_seed, cell coordinates), so dropping a component never changes
// another cell's results. Completed cells are written even when others fail.
RunResult run_experiment(const ExperimentConfig& cfg);

// Builds the attack closure for a label using the dotted config parameters.
AttackFn make_attacker(const std::string& label, const ExperimentConfig& cfg);
VictimConfig victim_config_for(const std::string& label, const ExperimentConfig& cfg);

// Default P: the average number of ratings per train user, rounded.
std::size_t default_profile_size(const RatingMatrix& train);

void write_report_csv(const std::string& path, const std::vector<ExperimentReport>& reports);
void write_report_json(const std::string& path, const std::vector<ExperimentReport>& reports);
std::vector<ExperimentReport> read_report_csv(const std::string& path);

struct AttackerSummary {
    std::string attacker;
    std::size_t best = 0;   // rank-1 finishes by hr_after (ties share rank 1)
    std::size_t top2 = 0;   // rank <= 2 finishes
};

// Per (dataset, victim, target) cell, attackers ranked by hr_after descending.
std::vector<AttackerSummary> summarize(const std::vector<ExperimentReport>& reports);

}  // namespace shill
