#include "shill/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "shill/rng.hpp"

namespace shill {

double hit_ratio(const Victim& victim, const RatingMatrix& train, std::size_t target,
                 std::size_t k, std::size_t num_eval_users) {
    if (target >= train.num_items()) throw ValidationError("hit_ratio: target out of range");
    std::size_t evaluated = 0, hits = 0;
    for (std::size_t u = 0; u < num_eval_users; ++u) {
        const auto& rated = train.by_user()[u];
        std::set<std::size_t> exclude;
        bool rated_target = false;
        for (const auto& [i, r] : rated) {
            exclude.insert(i);
            rated_target |= (i == target);
        }
        if (rated_target) continue;  // the item could never enter their list
        ++evaluated;
        for (std::size_t item : top_k(victim, u, k, exclude))
            if (item == target) {
                ++hits;
                break;
            }
    }
    if (evaluated == 0) throw ValidationError("hit_ratio: no evaluation users");
    return static_cast<double>(hits) / static_cast<double>(evaluated);
}

namespace {

// Rows z-scored over all items, zeros included; constant rows stay zero.
Tensor zscore_rows(const RatingMatrix& m) {
    Tensor z(m.num_users(), m.num_items());
    for (const auto& e : m.entries()) z.at(e.user, e.item) = e.value;
    const double p = static_cast<double>(m.num_items());
    for (std::size_t u = 0; u < z.rows; ++u) {
        double* row = z.row_ptr(u);
        double mean = 0.0;
        for (std::size_t i = 0; i < z.cols; ++i) mean += row[i];
        mean /= p;
        double var = 0.0;
        for (std::size_t i = 0; i < z.cols; ++i) {
            double d = row[i] - mean;
            var += d * d;
        }
        double sd = std::sqrt(var / p);
        if (sd < 1e-12) {
            std::fill(row, row + z.cols, 0.0);
            continue;
        }
        for (std::size_t i = 0; i < z.cols; ++i) row[i] = (row[i] - mean) / sd;
    }
    return z;
}

struct EigenPairs {
    std::vector<std::vector<double>> vectors;  // user-space eigenvectors
    std::vector<double> values;
};

// Top-k eigenpairs of Z Z^T by deflated power iteration; the matvec runs
// through the item dimension (Z (Z^T x)) so the n x n matrix is never formed.
EigenPairs top_components(const Tensor& z, std::size_t k, bool warn_on_reduce) {
    const std::size_t n = z.rows;
    EigenPairs out;
    Rng rng(0x9d7fc3a1u);  // fixed start vectors keep the result deterministic

    auto matvec = [&](const std::vector<double>& x) {
        std::vector<double> tmp(z.cols, 0.0);
        for (std::size_t u = 0; u < n; ++u) {
            const double* row = z.row_ptr(u);
            double xu = x[u];
            if (xu == 0.0) continue;
            for (std::size_t i = 0; i < z.cols; ++i) tmp[i] += xu * row[i];
        }
        std::vector<double> y(n, 0.0);
        for (std::size_t u = 0; u < n; ++u) {
            const double* row = z.row_ptr(u);
            double s = 0.0;
            for (std::size_t i = 0; i < z.cols; ++i) s += row[i] * tmp[i];
            y[u] = s;
        }
        for (std::size_t j = 0; j < out.vectors.size(); ++j) {
            const auto& vj = out.vectors[j];
            double dot = 0.0;
            for (std::size_t u = 0; u < n; ++u) dot += vj[u] * x[u];
            dot *= out.values[j];
            for (std::size_t u = 0; u < n; ++u) y[u] -= dot * vj[u];
        }
        return y;
    };

    for (std::size_t comp = 0; comp < k; ++comp) {
        std::vector<double> v(n);
        for (auto& x : v) x = rng.gaussian();
        double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        for (auto& x : v) x /= norm;
        double lambda = 0.0;
        for (int iter = 0; iter < 300; ++iter) {
            std::vector<double> y = matvec(v);
            // re-orthogonalize against found components
            for (const auto& vj : out.vectors) {
                double dot = std::inner_product(vj.begin(), vj.end(), y.begin(), 0.0);
                for (std::size_t u = 0; u < n; ++u) y[u] -= dot * vj[u];
            }
            double ynorm = std::sqrt(std::inner_product(y.begin(), y.end(), y.begin(), 0.0));
            if (ynorm < 1e-14) {
                lambda = 0.0;
                break;
            }
            for (auto& x : y) x /= ynorm;
            double delta = 0.0;
            for (std::size_t u = 0; u < n; ++u) delta = std::max(delta, std::fabs(y[u] - v[u]));
            v = std::move(y);
            lambda = ynorm;
            if (delta < 1e-12) break;
        }
        double head = out.values.empty() ? lambda : out.values.front();
        if (lambda <= std::max(1e-12, 1e-10 * head)) {
            if (warn_on_reduce)
                std::cerr << "detect: covariance rank below requested components, using "
                          << out.vectors.size() << "\n";
            break;
        }
        out.vectors.push_back(std::move(v));
        out.values.push_back(lambda);
    }
    return out;
}

}  // namespace

DetectionResult detect(const RatingMatrix& m, std::size_t num_flag, std::size_t k_components) {
    if (num_flag > m.num_users()) throw ValidationError("detect: num_flag exceeds user count");
    DetectionResult res;
    if (num_flag == 0) return res;
    if (k_components < 1) throw ValidationError("detect: k_components must be >= 1");

    Tensor z = zscore_rows(m);
    EigenPairs eig = top_components(z, k_components, true);
    res.components_used = eig.vectors.size();

    std::vector<double> score(m.num_users(), 0.0);
    for (const auto& v : eig.vectors)
        for (std::size_t u = 0; u < v.size(); ++u) score[u] += v[u] * v[u];

    std::vector<std::size_t> order(m.num_users());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    res.flagged.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(num_flag));
    std::sort(res.flagged.begin(), res.flagged.end());
    return res;
}

std::pair<double, double> precision_recall(const std::vector<std::size_t>& flagged,
                                           const std::vector<std::size_t>& truth) {
    std::set<std::size_t> t(truth.begin(), truth.end());
    std::size_t inter = 0;
    for (std::size_t u : flagged) inter += t.count(u);
    double precision =
        flagged.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(flagged.size());
    double recall =
        t.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(t.size());
    return {precision, recall};
}

void export_projection(const RatingMatrix& m, const std::vector<bool>& is_fake,
                       const std::string& out_path) {
    if (m.num_users() < 2) throw ValidationError("export_projection: need at least 2 users");
    if (is_fake.size() != m.num_users())
        throw ValidationError("export_projection: label count mismatch");
    Tensor z = zscore_rows(m);
    EigenPairs eig = top_components(z, 2, false);

    std::ofstream out(out_path);
    if (!out) throw ParseError("cannot write " + out_path);
    out << "user_id,x,y,is_fake\n";
    for (std::size_t u = 0; u < m.num_users(); ++u) {
        double x = 0.0, y = 0.0;
        if (!eig.vectors.empty()) x = std::sqrt(eig.values[0]) * eig.vectors[0][u];
        if (eig.vectors.size() > 1) y = std::sqrt(eig.values[1]) * eig.vectors[1][u];
        out << m.user_id(u) << ',' << x << ',' << y << ',' << (is_fake[u] ? 1 : 0) << '\n';
    }
}

ExperimentReport run_attack_cell(const DatasetSplit& split, const std::string& attacker_name,
                                 const AttackFn& attack, VictimKind victim_kind,
                                 const VictimConfig& victim_cfg, const AttackBudget& budget,
                                 const CellSeeds& seeds, const DetectorConfig& detector,
                                 std::size_t hr_k) {
    if (budget.targets.size() != 1)
        throw ValidationError("run_attack_cell: exactly one target per cell");
    auto t0 = std::chrono::steady_clock::now();

    ExperimentReport rep;
    rep.attacker = attacker_name;
    rep.victim = victim_name(victim_kind);
    rep.target = budget.targets[0];
    rep.target_ext = split.train.item_id(rep.target);
    rep.victim_seed = seeds.victim_seed;
    rep.attack_seed = seeds.attack_seed;
    rep.users_before = split.train.num_users();

    auto before = make_victim(victim_kind, victim_cfg);
    before->fit(split.train, seeds.victim_seed);
    rep.hr_before = hit_ratio(*before, split.train, rep.target, hr_k, split.train.num_users());

    AttackOutcome outcome = attack(split.train, budget, seeds.attack_seed);
    rep.history = std::move(outcome.history);

    if (outcome.batch.rows.empty()) {
        // null attack: identical data and seed, so the refit reproduces the
        // fitted model and the hit ratio bit-for-bit
        auto after = make_victim(victim_kind, victim_cfg);
        after->fit(split.train, seeds.victim_seed);
        rep.hr_after = hit_ratio(*after, split.train, rep.target, hr_k, split.train.num_users());
        rep.users_after = split.train.num_users();
    } else {
        RatingMatrix polluted = inject(split.train, outcome.batch);
        rep.users_after = polluted.num_users();
        auto after = make_victim(victim_kind, victim_cfg);
        after->fit(polluted, seeds.victim_seed);
        rep.hr_after = hit_ratio(*after, polluted, rep.target, hr_k, split.train.num_users());

        std::size_t m = detector.num_flag ? detector.num_flag : outcome.batch.rows.size();
        m = std::min(m, polluted.num_users());
        DetectionResult det = detect(polluted, m, detector.components);
        std::vector<std::size_t> truth;
        for (std::size_t v = 0; v < outcome.batch.rows.size(); ++v)
            truth.push_back(split.train.num_users() + v);
        auto [prec, rec] = precision_recall(det.flagged, truth);
        rep.precision = prec;
        rep.recall = rec;
        rep.flagged = det.flagged.size();
    }

    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    return rep;
}

}  // namespace shill
