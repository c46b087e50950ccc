#include "shill/config.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>

namespace shill {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            std::string t = trim(cur);
            if (!t.empty()) out.push_back(t);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    std::string t = trim(cur);
    if (!t.empty()) out.push_back(t);
    return out;
}

bool parse_bool(const std::string& v, std::size_t line, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ParseError("line " + std::to_string(line) + ": " + key + " expects a boolean, got '" +
                     v + "'");
}

template <typename T>
T parse_num(const std::string& v, std::size_t line, const std::string& key) {
    try {
        std::size_t pos = 0;
        if constexpr (std::is_floating_point_v<T>) {
            double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return static_cast<T>(d);
        } else {
            unsigned long long u = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return static_cast<T>(u);
        }
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line) + ": " + key + " expects a number, got '" +
                         v + "'");
    }
}

}  // namespace

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config " + path);
    ExperimentConfig cfg;
    cfg.config_path = path;

    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string::size_type hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError("line " + std::to_string(line_no) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        std::string::size_type eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));

        if (section == "dataset") {
            if (key == "path") cfg.dataset_path = val;
            else if (key == "format") cfg.dataset_format = val;
            else if (key == "csv_has_header") cfg.csv_has_header = parse_bool(val, line_no, key);
            else if (key == "min_user_ratings")
                cfg.min_user_ratings = parse_num<std::size_t>(val, line_no, key);
            else if (key == "label") cfg.dataset_label = val;
            else throw ParseError("line " + std::to_string(line_no) + ": unknown dataset key '" + key + "'");
        } else if (section == "split") {
            if (key == "test_fraction") cfg.test_fraction = parse_num<double>(val, line_no, key);
            else if (key == "seed") cfg.split_seed = parse_num<std::uint64_t>(val, line_no, key);
            else throw ParseError("line " + std::to_string(line_no) + ": unknown split key '" + key + "'");
        } else if (section == "budget") {
            if (key == "attack_size") cfg.attack_size = parse_num<std::size_t>(val, line_no, key);
            else if (key == "profile_size") cfg.profile_size = parse_num<std::size_t>(val, line_no, key);
            else if (key == "num_selected") cfg.num_selected = parse_num<std::size_t>(val, line_no, key);
            else if (key == "num_targets") cfg.num_targets = parse_num<std::size_t>(val, line_no, key);
            else if (key == "target_seed") cfg.target_seed = parse_num<std::uint64_t>(val, line_no, key);
            else if (key == "targets") {
                for (const std::string& t : split_list(val))
                    cfg.explicit_targets.push_back(parse_num<std::size_t>(t, line_no, key));
            } else throw ParseError("line " + std::to_string(line_no) + ": unknown budget key '" + key + "'");
        } else if (section == "attackers") {
            if (key == "list") cfg.attackers = split_list(val);
            else cfg.attacker_params[key] = val;  // dotted attacker.param
        } else if (section == "victims") {
            if (key == "list") cfg.victims = split_list(val);
            else cfg.victim_params[key] = val;
        } else if (section == "detector") {
            if (key == "num_flag") cfg.detector_flag = parse_num<std::size_t>(val, line_no, key);
            else if (key == "components") cfg.detector_components = parse_num<std::size_t>(val, line_no, key);
            else throw ParseError("line " + std::to_string(line_no) + ": unknown detector key '" + key + "'");
        } else if (section == "output") {
            if (key == "dir") cfg.output_dir = val;
            else if (key == "parallelism") cfg.parallelism = parse_num<std::size_t>(val, line_no, key);
            else throw ParseError("line " + std::to_string(line_no) + ": unknown output key '" + key + "'");
        } else if (section == "run") {
            if (key == "master_seed") cfg.master_seed = parse_num<std::uint64_t>(val, line_no, key);
            else if (key == "hr_k") cfg.hr_k = parse_num<std::size_t>(val, line_no, key);
            else throw ParseError("line " + std::to_string(line_no) + ": unknown run key '" + key + "'");
        } else {
            throw ParseError("line " + std::to_string(line_no) + ": key outside known section");
        }
    }
    if (cfg.dataset_label.empty())
        cfg.dataset_label = std::filesystem::path(cfg.dataset_path).stem().string();
    return cfg;
}

namespace {

const std::set<std::string> kKnownAttackers = {"none",      "random", "average", "segment",
                                               "bandwagon", "aia",    "legup"};
const std::set<std::string> kOutOfScopeAttackers = {"dcgan", "wgan"};
const std::set<std::string> kKnownVictims = {"svd",      "nmf",      "slopeone",
                                             "uautorec", "iautorec", "neumf"};

}  // namespace

ValidationOutcome validate(const ExperimentConfig& cfg) {
    ValidationOutcome out;
    out.normalized = cfg;
    auto err = [&](const std::string& e) { out.errors.push_back(e); };

    if (cfg.dataset_path.empty())
        err("dataset path is required");
    else if (!std::filesystem::exists(cfg.dataset_path))
        err("dataset path does not exist: " + cfg.dataset_path);
    if (cfg.dataset_format != "movielens" && cfg.dataset_format != "csv")
        err("dataset format must be movielens or csv, got '" + cfg.dataset_format + "'");
    if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
        err("split test_fraction must lie in (0, 1)");
    if (cfg.attack_size < 1) err("attack_size must be >= 1");
    if (cfg.explicit_targets.empty() && cfg.num_targets < 1)
        err("budget needs targets or num_targets >= 1");
    if (cfg.attackers.empty()) err("attacker list is empty");
    if (cfg.victims.empty()) err("victim list is empty");
    if (cfg.parallelism < 1) err("parallelism must be >= 1");
    if (cfg.hr_k < 1) err("hr_k must be >= 1");

    for (const std::string& a : cfg.attackers) {
        if (kOutOfScopeAttackers.count(a))
            err("attacker '" + a + "' unsupported (out of scope)");
        else if (!kKnownAttackers.count(a))
            err("unknown attacker '" + a + "'");
    }
    for (const std::string& v : cfg.victims)
        if (!kKnownVictims.count(v)) err("unknown victim '" + v + "'");

    for (const auto& [key, val] : cfg.attacker_params) {
        std::string::size_type dot = key.find('.');
        if (dot == std::string::npos) {
            err("attacker parameter '" + key + "' must be attacker.param");
            continue;
        }
        std::string comp = key.substr(0, dot);
        if (!kKnownAttackers.count(comp) && !kOutOfScopeAttackers.count(comp))
            err("parameter for unknown attacker '" + comp + "'");
    }
    for (const auto& [key, val] : cfg.victim_params) {
        std::string::size_type dot = key.find('.');
        if (dot == std::string::npos) {
            err("victim parameter '" + key + "' must be victim.param");
            continue;
        }
        if (!kKnownVictims.count(key.substr(0, dot)))
            err("parameter for unknown victim '" + key.substr(0, dot) + "'");
    }

    if (out.normalized.detector_flag == 0) out.normalized.detector_flag = cfg.attack_size;
    return out;
}

double param_or(const std::map<std::string, std::string>& params, const std::string& component,
                const std::string& key, double fallback) {
    auto it = params.find(component + "." + key);
    if (it == params.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw ValidationError(component + "." + key + ": expected a number, got '" + it->second +
                              "'");
    }
}

std::string param_or(const std::map<std::string, std::string>& params,
                     const std::string& component, const std::string& key,
                     const std::string& fallback) {
    auto it = params.find(component + "." + key);
    return it == params.end() ? fallback : it->second;
}

}  // namespace shill
