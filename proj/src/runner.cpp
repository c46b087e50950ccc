#include "shill/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "shill/legup.hpp"
#include "shill/rng.hpp"

namespace shill {

namespace {

LegUpConfig legup_config_for(const ExperimentConfig& cfg) {
    const auto& p = cfg.attacker_params;
    LegUpConfig lc;
    lc.k1 = static_cast<std::size_t>(param_or(p, "legup", "k1", 1));
    lc.k2 = static_cast<std::size_t>(param_or(p, "legup", "k2", 1));
    lc.inner_steps = static_cast<std::size_t>(param_or(p, "legup", "inner_steps", 10));
    lc.surrogate_pretrain =
        static_cast<std::size_t>(param_or(p, "legup", "surrogate_pretrain", 0));
    lc.surrogate_warm_start = param_or(p, "legup", "surrogate_warm_start", 1.0) != 0.0;
    lc.epochs = static_cast<std::size_t>(param_or(p, "legup", "epochs", 50));
    lc.gen_lr = param_or(p, "legup", "gen_lr", 1e-3);
    lc.dis_lr = param_or(p, "legup", "dis_lr", 1e-3);
    lc.xi = param_or(p, "legup", "xi", 0.1);
    std::string mode = param_or(p, "legup", "generator", std::string("autoencoder"));
    if (mode == "autoencoder") lc.gen_mode = GenMode::autoencoder;
    else if (mode == "simple") lc.gen_mode = GenMode::simple;
    else throw ValidationError("legup.generator must be autoencoder or simple");
    std::string disc = param_or(p, "legup", "discretization", std::string("learnable"));
    if (disc == "learnable") lc.learnable_discretization = true;
    else if (disc == "rounding") lc.learnable_discretization = false;
    else throw ValidationError("legup.discretization must be learnable or rounding");
    std::string loss = param_or(p, "legup", "loss", std::string("direct"));
    if (loss == "direct") lc.direct_loss = true;
    else if (loss == "indirect") lc.direct_loss = false;
    else throw ValidationError("legup.loss must be direct or indirect");
    lc.use_discriminator = param_or(p, "legup", "use_discriminator", 1.0) != 0.0;
    lc.hidden = static_cast<std::size_t>(param_or(p, "legup", "hidden", 128));
    lc.surrogate_kind = param_or(p, "legup", "surrogate", std::string("wrmf"));
    lc.wrmf.wrmf.factors = static_cast<std::size_t>(param_or(p, "legup", "wrmf_factors", 64));
    lc.wrmf.wrmf.lambda = param_or(p, "legup", "wrmf_lambda", 1e-5);
    lc.wrmf.wrmf.w_obs = param_or(p, "legup", "wrmf_w_obs", 1.0);
    lc.wrmf.wrmf.w_miss = param_or(p, "legup", "wrmf_w_miss", 0.05);
    lc.wrmf.adam_lr = param_or(p, "legup", "wrmf_adam_lr", 0.01);
    lc.wrmf.inner_lr = param_or(p, "legup", "wrmf_inner_lr", 1e-4);
    return lc;
}

AiaConfig aia_config_for(const ExperimentConfig& cfg) {
    const auto& p = cfg.attacker_params;
    AiaConfig ac;
    ac.steps = static_cast<std::size_t>(param_or(p, "aia", "steps", 30));
    ac.inner_steps = static_cast<std::size_t>(param_or(p, "aia", "inner_steps", 10));
    ac.lr = param_or(p, "aia", "lr", 0.05);
    ac.surrogate_kind = param_or(p, "aia", "surrogate", std::string("wrmf"));
    ac.wrmf.wrmf.factors = static_cast<std::size_t>(param_or(p, "aia", "wrmf_factors", 64));
    ac.wrmf.wrmf.lambda = param_or(p, "aia", "wrmf_lambda", 1e-5);
    ac.wrmf.adam_lr = param_or(p, "aia", "wrmf_adam_lr", 0.01);
    ac.wrmf.inner_lr = param_or(p, "aia", "wrmf_inner_lr", 1e-4);
    return ac;
}

}  // namespace

AttackFn make_attacker(const std::string& label, const ExperimentConfig& cfg) {
    if (label == "none")
        return [](const RatingMatrix&, const AttackBudget&, std::uint64_t) {
            return AttackOutcome{};
        };
    if (label == "random")
        return [](const RatingMatrix& train, const AttackBudget& b, std::uint64_t seed) {
            return AttackOutcome{random_attack(stats(train), b, seed), {}};
        };
    if (label == "average")
        return [](const RatingMatrix& train, const AttackBudget& b, std::uint64_t seed) {
            return AttackOutcome{average_attack(stats(train), b, seed), {}};
        };
    if (label == "segment")
        return [](const RatingMatrix& train, const AttackBudget& b, std::uint64_t seed) {
            return AttackOutcome{segment_attack(stats(train), b, seed), {}};
        };
    if (label == "bandwagon")
        return [](const RatingMatrix& train, const AttackBudget& b, std::uint64_t seed) {
            return AttackOutcome{bandwagon_attack(stats(train), b, seed), {}};
        };
    if (label == "aia") {
        AiaConfig ac = aia_config_for(cfg);
        return [ac](const RatingMatrix& train, const AttackBudget& b, std::uint64_t seed) {
            AiaResult r = aia_attack(train, b, ac, seed);
            LossHistory h;
            h.gen = r.lgen_history;
            h.total = std::move(r.lgen_history);
            return AttackOutcome{std::move(r.batch), std::move(h)};
        };
    }
    if (label == "legup") {
        LegUpConfig lc = legup_config_for(cfg);
        bool save = param_or(cfg.attacker_params, "legup", "save_params", 0.0) != 0.0;
        std::string out_dir = cfg.output_dir;
        return [lc, save, out_dir](const RatingMatrix& train, const AttackBudget& b,
                                   std::uint64_t seed) {
            LegUpResult r = legup_train(train, b, lc, seed);
            if (save) {
                std::filesystem::create_directories(out_dir + "/params");
                save_legup_params(out_dir + "/params/legup_" + std::to_string(seed) + ".bin",
                                  r.generator, r.discriminator);
            }
            AttackOutcome out;
            out.batch = assemble_fake_batch(r.generator, r.templates, b,
                                            lc.learnable_discretization);
            out.batch.seed = seed;
            for (std::size_t u : r.templates.source_users)
                out.batch.template_user_ids.push_back(train.user_id(u));
            out.history = std::move(r.history);
            return out;
        };
    }
    throw ValidationError("unknown attacker '" + label + "'");
}

std::size_t default_profile_size(const RatingMatrix& train) {
    double avg = static_cast<double>(train.num_ratings()) /
                 static_cast<double>(train.num_users());
    return static_cast<std::size_t>(std::llround(avg));
}

VictimConfig victim_config_for(const std::string& label, const ExperimentConfig& cfg) {
    const auto& p = cfg.victim_params;
    VictimConfig vc;
    vc.svd_factors = static_cast<std::size_t>(param_or(p, "svd", "factors", 64));
    vc.svd_lr = param_or(p, "svd", "lr", 0.005);
    vc.svd_reg = param_or(p, "svd", "reg", 0.02);
    vc.svd_epochs = static_cast<std::size_t>(param_or(p, "svd", "epochs", 50));
    vc.nmf_factors = static_cast<std::size_t>(param_or(p, "nmf", "factors", 16));
    vc.nmf_lr = param_or(p, "nmf", "lr", 0.01);
    vc.nmf_epochs = static_cast<std::size_t>(param_or(p, "nmf", "epochs", 100));
    std::string arec = label == "iautorec" ? "iautorec" : "uautorec";
    vc.autorec_hidden = static_cast<std::size_t>(param_or(p, arec, "hidden", 128));
    vc.autorec_lr = param_or(p, arec, "lr", 0.001);
    vc.autorec_steps = static_cast<std::size_t>(param_or(p, arec, "steps", 200));
    vc.neumf_embedding = static_cast<std::size_t>(param_or(p, "neumf", "embedding", 8));
    vc.neumf_lr = param_or(p, "neumf", "lr", 0.001);
    vc.neumf_epochs = static_cast<std::size_t>(param_or(p, "neumf", "epochs", 30));
    return vc;
}

namespace {

struct Cell {
    std::string attacker, victim;
    std::size_t target;
};

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

}  // namespace

void write_report_csv(const std::string& path, const std::vector<ExperimentReport>& reports) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << "dataset,attacker,victim,target,target_ext,hr_before,hr_after,precision,recall,"
           "flagged,users_before,users_after,victim_seed,attack_seed,wall_ms\n";
    out << std::setprecision(17);
    for (const auto& r : reports) {
        out << csv_escape(r.dataset) << ',' << csv_escape(r.attacker) << ','
            << csv_escape(r.victim) << ',' << r.target << ',' << csv_escape(r.target_ext) << ','
            << r.hr_before << ',' << r.hr_after << ',' << r.precision << ',' << r.recall << ','
            << r.flagged << ',' << r.users_before << ',' << r.users_after << ','
            << r.victim_seed << ',' << r.attack_seed << ',' << r.wall_ms << '\n';
    }
}

void write_report_json(const std::string& path, const std::vector<ExperimentReport>& reports) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json c;
        c["dataset"] = r.dataset;
        c["attacker"] = r.attacker;
        c["victim"] = r.victim;
        c["target"] = r.target;
        c["target_ext"] = r.target_ext;
        c["hr_before"] = r.hr_before;
        c["hr_after"] = r.hr_after;
        c["precision"] = r.precision;
        c["recall"] = r.recall;
        c["victim_seed"] = r.victim_seed;
        c["attack_seed"] = r.attack_seed;
        c["loss_curves"] = {{"gen", r.history.gen},
                            {"dis", r.history.dis},
                            {"adv", r.history.adv},
                            {"total", r.history.total}};
        cells.push_back(std::move(c));
    }
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << nlohmann::json{{"cells", cells}}.dump(2) << '\n';
}

std::vector<ExperimentReport> read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<ExperimentReport> out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        bool quoted = false;
        for (std::size_t k = 0; k < line.size(); ++k) {
            char c = line[k];
            if (quoted) {
                if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
                    cur.push_back('"');
                    ++k;
                } else if (c == '"') {
                    quoted = false;
                } else {
                    cur.push_back(c);
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        f.push_back(cur);
        if (f.size() < 15) throw ParseError(path + ": malformed report row");
        ExperimentReport r;
        r.dataset = f[0];
        r.attacker = f[1];
        r.victim = f[2];
        r.target = std::stoull(f[3]);
        r.target_ext = f[4];
        r.hr_before = std::stod(f[5]);
        r.hr_after = std::stod(f[6]);
        r.precision = std::stod(f[7]);
        r.recall = std::stod(f[8]);
        r.flagged = std::stoull(f[9]);
        r.users_before = std::stoull(f[10]);
        r.users_after = std::stoull(f[11]);
        r.victim_seed = std::stoull(f[12]);
        r.attack_seed = std::stoull(f[13]);
        r.wall_ms = std::stod(f[14]);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<AttackerSummary> summarize(const std::vector<ExperimentReport>& reports) {
    if (reports.empty()) throw ValidationError("summarize: no reports");
    std::map<std::string, std::vector<const ExperimentReport*>> cells;
    for (const auto& r : reports)
        cells[r.dataset + "|" + r.victim + "|" + std::to_string(r.target)].push_back(&r);

    std::map<std::string, AttackerSummary> acc;
    for (const auto& r : reports) acc[r.attacker].attacker = r.attacker;
    for (const auto& [key, list] : cells) {
        for (const ExperimentReport* r : list) {
            std::size_t rank = 1;  // ties share the better rank
            for (const ExperimentReport* o : list)
                if (o->hr_after > r->hr_after) ++rank;
            if (rank == 1) ++acc[r->attacker].best;
            if (rank <= 2) ++acc[r->attacker].top2;
        }
    }
    std::vector<AttackerSummary> out;
    for (auto& [name, s] : acc) out.push_back(s);
    std::sort(out.begin(), out.end(), [](const AttackerSummary& a, const AttackerSummary& b) {
        if (a.best != b.best) return a.best > b.best;
        if (a.top2 != b.top2) return a.top2 > b.top2;
        return a.attacker < b.attacker;
    });
    return out;
}

RunResult run_experiment(const ExperimentConfig& raw) {
    RunResult result;
    ValidationOutcome vo = validate(raw);
    if (!vo.ok()) {
        result.exit_code = 2;
        result.failures = vo.errors;
        return result;
    }
    const ExperimentConfig& cfg = vo.normalized;

    RatingMatrix loaded = cfg.dataset_format == "movielens"
                              ? load_movielens(cfg.dataset_path)
                              : load_csv(cfg.dataset_path, cfg.csv_has_header);
    RatingMatrix filtered = filter(loaded, cfg.min_user_ratings);
    DatasetSplit ds = split(filtered, cfg.test_fraction, cfg.split_seed);

    // Materialize the budget against the train matrix.
    std::vector<std::size_t> targets = cfg.explicit_targets;
    if (targets.empty()) targets = pick_targets(ds.train, cfg.num_targets, cfg.target_seed);
    std::set<std::size_t> selected = pick_selected(ds.train, cfg.num_selected);
    std::size_t profile = cfg.profile_size ? cfg.profile_size : default_profile_size(ds.train);
    AttackBudget full_budget;
    try {
        full_budget = make_budget(cfg.attack_size, profile, selected, targets,
                                  ds.train.rating_max());
    } catch (const ValidationError& e) {
        result.exit_code = 2;
        result.failures.push_back(std::string(e.what()) +
                                  " (re-seed targets or change num_selected)");
        return result;
    }

    std::filesystem::create_directories(cfg.output_dir);
    std::filesystem::create_directories(cfg.output_dir + "/logs");

    std::vector<Cell> cells;
    for (const std::string& a : cfg.attackers)
        for (const std::string& v : cfg.victims)
            for (std::size_t t : targets) cells.push_back({a, v, t});

    std::mutex mu;
    std::vector<ExperimentReport> reports;
    std::vector<std::string> failures;
    std::size_t next = 0;

    auto worker = [&]() {
        for (;;) {
            std::size_t idx;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= cells.size()) return;
                idx = next++;
            }
            const Cell& cell = cells[idx];
            std::string cell_name = cell.attacker + "_" + cell.victim + "_" +
                                    ds.train.item_id(cell.target);
            std::ofstream log(cfg.output_dir + "/logs/" + cell_name + ".log");
            try {
                AttackBudget budget = full_budget;
                budget.targets = {cell.target};
                std::uint64_t cell_seed = hash_label(
                    cfg.master_seed, cfg.dataset_label + "|" + cell.attacker + "|" + cell.victim +
                                         "|" + ds.train.item_id(cell.target));
                CellSeeds seeds{splitmix64(cell_seed ^ 0x5eedULL),
                                splitmix64(cell_seed ^ 0xa77acULL)};
                log << "cell " << cell_name << " seed " << cell_seed << "\n";
                AttackFn attack = make_attacker(cell.attacker, cfg);
                VictimConfig vc = victim_config_for(cell.victim, cfg);
                DetectorConfig dc{cfg.detector_flag, cfg.detector_components};
                ExperimentReport rep =
                    run_attack_cell(ds, cell.attacker, attack, victim_kind_from(cell.victim), vc,
                                    budget, seeds, dc, cfg.hr_k);
                rep.dataset = cfg.dataset_label;
                log << "hr_before " << rep.hr_before << " hr_after " << rep.hr_after << "\n";
                std::lock_guard<std::mutex> lock(mu);
                reports.push_back(std::move(rep));
            } catch (const std::exception& e) {
                log << "failed: " << e.what() << "\n";
                std::lock_guard<std::mutex> lock(mu);
                failures.push_back(cell_name + ": " + e.what());
            }
        }
    };

    std::size_t threads = std::min(cfg.parallelism, cells.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // deterministic report order regardless of scheduling
    std::sort(reports.begin(), reports.end(),
              [](const ExperimentReport& a, const ExperimentReport& b) {
                  return std::tie(a.dataset, a.attacker, a.victim, a.target) <
                         std::tie(b.dataset, b.attacker, b.victim, b.target);
              });
    write_report_csv(cfg.output_dir + "/report.csv", reports);
    write_report_json(cfg.output_dir + "/report.json", reports);

    result.reports = std::move(reports);
    result.failures = std::move(failures);
    result.exit_code = result.failures.empty() ? 0 : 1;
    return result;
}

}  // namespace shill
