#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shill/errors.hpp"

namespace shill {

// One config file describes one full experiment grid. Flat `key = value`
// lines grouped under [section] headers; `#` starts a comment.
struct ExperimentConfig {
    std::string config_path;

    // [dataset]
    std::string dataset_path;
    std::string dataset_format = "movielens";  // movielens | csv
    bool csv_has_header = false;
    std::size_t min_user_ratings = 15;
    std::string dataset_label;  // defaults to the file stem

    // [split]
    double test_fraction = 0.1;
    std::uint64_t split_seed = 42;

    // [budget]
    std::size_t attack_size = 50;
    std::size_t profile_size = 0;  // 0: average ratings per train user
    std::size_t num_selected = 3;
    std::size_t num_targets = 5;
    std::uint64_t target_seed = 7;
    std::vector<std::size_t> explicit_targets;  // overrides num_targets/target_seed

    // [attackers] / [victims]: list plus dotted per-component parameters,
    // e.g. `legup.epochs = 50`, `svd.factors = 64`
    std::vector<std::string> attackers;
    std::map<std::string, std::string> attacker_params;
    std::vector<std::string> victims;
    std::map<std::string, std::string> victim_params;

    // [detector]
    std::size_t detector_flag = 0;  // 0: attack size
    std::size_t detector_components = 3;

    // [output] / [run]
    std::string output_dir = "out";
    std::size_t parallelism = 1;
    std::uint64_t master_seed = 1;
    std::size_t hr_k = 10;
};

ExperimentConfig parse_config_file(const std::string& path);  // throws ParseError

struct ValidationOutcome {
    ExperimentConfig normalized;
    std::vector<std::string> errors;  // all problems, not fail-fast
    bool ok() const { return errors.empty(); }
};

ValidationOutcome validate(const ExperimentConfig& cfg);

// Dotted parameter lookup with defaults, e.g. param(cfg.attacker_params,
// "legup", "xi", 0.1).
double param_or(const std::map<std::string, std::string>& params, const std::string& component,
                const std::string& key, double fallback);
std::string param_or(const std::map<std::string, std::string>& params,
                     const std::string& component, const std::string& key,
                     const std::string& fallback);

}  // namespace shill
