#include "shill/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "shill/rng.hpp"

namespace shill {

Tensor FakeProfileBatch::to_dense(std::size_t num_items) const {
    Tensor t(rows.size(), num_items);
    for (std::size_t v = 0; v < rows.size(); ++v)
        for (const auto& [i, r] : rows[v]) t.at(v, i) = r;
    return t;
}

RatingMatrix inject(const RatingMatrix& real, const FakeProfileBatch& batch) {
    RatingMatrixBuilder b(real.rating_max());
    for (const auto& e : real.entries()) b.add(real.user_id(e.user), real.item_id(e.item), e.value);
    for (std::size_t v = 0; v < batch.rows.size(); ++v) {
        std::string id = "fake:" + std::to_string(v);
        for (const auto& [i, r] : batch.rows[v]) b.add(id, real.item_id(i), r);
    }
    return b.build();
}

namespace {

double clip_round(double x, double rating_max) {
    return std::llround(std::clamp(x, 1.0, rating_max));
}

// Filler candidates: the whole item universe minus targets and selected.
std::vector<std::size_t> filler_pool(std::size_t num_items, const AttackBudget& budget,
                                     const std::vector<std::size_t>* restrict_to = nullptr) {
    std::vector<bool> banned(num_items, false);
    for (std::size_t t : budget.targets) banned[t] = true;
    for (std::size_t s : budget.selected_items) banned[s] = true;
    std::vector<std::size_t> pool;
    if (restrict_to) {
        for (std::size_t i : *restrict_to)
            if (!banned[i]) pool.push_back(i);
    } else {
        for (std::size_t i = 0; i < num_items; ++i)
            if (!banned[i]) pool.push_back(i);
    }
    return pool;
}

void finish_row(std::vector<std::pair<std::size_t, double>>& row, const AttackBudget& budget) {
    for (std::size_t t : budget.targets) row.emplace_back(t, budget.rating_max);
    std::sort(row.begin(), row.end());
}

FakeProfileBatch gaussian_filler_attack(const DatasetStats& stats, const AttackBudget& budget,
                                        std::uint64_t seed, bool per_item, bool with_selected,
                                        const char* name) {
    FakeProfileBatch out;
    out.attacker_name = name;
    out.seed = seed;
    Rng rng(seed);

    std::vector<std::size_t> rated_items;
    if (per_item)
        for (std::size_t i = 0; i < stats.num_items; ++i)
            if (stats.item_count[i] > 0) rated_items.push_back(i);
    std::vector<std::size_t> pool =
        filler_pool(stats.num_items, budget, per_item ? &rated_items : nullptr);
    std::size_t fillers = std::min(budget.profile_size, pool.size());

    for (std::size_t v = 0; v < budget.attack_size; ++v) {
        std::vector<std::pair<std::size_t, double>> row;
        auto picks = rng.sample_without_replacement(pool.size(), fillers);
        for (std::size_t k : picks) {
            std::size_t item = pool[k];
            double mu = per_item ? stats.item_mean[item] : stats.mean;
            double sd = per_item ? stats.item_std[item] : stats.stddev;
            row.emplace_back(item, clip_round(rng.gaussian(mu, sd), budget.rating_max));
        }
        if (with_selected)
            for (std::size_t s : budget.selected_items) row.emplace_back(s, budget.rating_max);
        finish_row(row, budget);
        out.rows.push_back(std::move(row));
    }
    return out;
}

}  // namespace

FakeProfileBatch random_attack(const DatasetStats& stats, const AttackBudget& budget,
                               std::uint64_t seed) {
    return gaussian_filler_attack(stats, budget, seed, false, false, "random");
}

FakeProfileBatch average_attack(const DatasetStats& stats, const AttackBudget& budget,
                                std::uint64_t seed) {
    return gaussian_filler_attack(stats, budget, seed, true, false, "average");
}

FakeProfileBatch segment_attack(const DatasetStats& stats, const AttackBudget& budget,
                                std::uint64_t seed) {
    if (budget.selected_items.empty())
        throw ValidationError("segment attack requires selected items");
    FakeProfileBatch out;
    out.attacker_name = "segment";
    out.seed = seed;
    Rng rng(seed);
    std::vector<std::size_t> pool = filler_pool(stats.num_items, budget);
    std::size_t fillers = std::min(budget.profile_size, pool.size());
    for (std::size_t v = 0; v < budget.attack_size; ++v) {
        std::vector<std::pair<std::size_t, double>> row;
        for (std::size_t k : rng.sample_without_replacement(pool.size(), fillers))
            row.emplace_back(pool[k], 1.0);  // minimal rating on fillers
        for (std::size_t s : budget.selected_items) row.emplace_back(s, budget.rating_max);
        finish_row(row, budget);
        out.rows.push_back(std::move(row));
    }
    return out;
}

FakeProfileBatch bandwagon_attack(const DatasetStats& stats, const AttackBudget& budget,
                                  std::uint64_t seed) {
    if (budget.selected_items.empty())
        throw ValidationError("bandwagon attack requires selected (popular) items");
    return gaussian_filler_attack(stats, budget, seed, false, true, "bandwagon");
}

std::unique_ptr<AttackSurrogate> make_surrogate(const std::string& kind,
                                                const WrmfSurrogateConfig& wrmf,
                                                const ItemAutoRecSurrogateConfig& iautorec) {
    if (kind == "wrmf") return make_wrmf_surrogate(wrmf);
    if (kind == "iautorec") return make_iautorec_surrogate(iautorec);
    throw ValidationError("unknown surrogate '" + kind + "' (supported: wrmf, iautorec)");
}

AiaResult aia_attack(const RatingMatrix& real, const AttackBudget& budget, const AiaConfig& cfg,
                     std::uint64_t seed) {
    const std::size_t n_items = real.num_items();
    Rng rng(seed);

    AiaResult res;
    res.batch.attacker_name = "aia";
    res.batch.seed = seed;

    // Continuous working rows initialized from sampled real profiles; AIA
    // keeps the template's full nonzero pattern.
    std::vector<std::size_t> users =
        budget.attack_size <= real.num_users()
            ? rng.sample_without_replacement(real.num_users(), budget.attack_size)
            : [&] {
                  std::vector<std::size_t> u(budget.attack_size);
                  for (auto& x : u) x = rng.below(real.num_users());
                  return u;
              }();
    Tensor work(budget.attack_size, n_items);
    for (std::size_t v = 0; v < budget.attack_size; ++v) {
        res.batch.template_user_ids.push_back(real.user_id(users[v]));
        for (const auto& [i, r] : real.by_user()[users[v]]) work.at(v, i) = r;
        for (std::size_t t : budget.targets) work.at(v, t) = budget.rating_max;
    }

    if (cfg.steps > 0) {
        auto surrogate = make_surrogate(cfg.surrogate_kind, cfg.wrmf, cfg.iautorec);
        surrogate->reset(real.num_users() + budget.attack_size, n_items, rng.next_u64());
        Optimizer opt(OptKind::adam, cfg.lr);
        work.ensure_grad();
        std::vector<Tensor*> params{&work};
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            PoisonedView view{&real, &work};
            surrogate->fit_steps(view, cfg.inner_steps > 0 ? cfg.inner_steps - 1 : 0);
            UnrolledGrad ug = surrogate->attack_grad(view, budget.targets, false, nullptr);
            res.lgen_history.push_back(ug.lgen);
            work.zero_grad();
            work.g = ug.fake_grad.v;
            for (std::size_t v = 0; v < budget.attack_size; ++v)
                for (std::size_t t : budget.targets) work.g[v * n_items + t] = 0.0;  // target pinned
            opt.step(params);
            for (std::size_t v = 0; v < budget.attack_size; ++v)
                for (std::size_t t : budget.targets) work.at(v, t) = budget.rating_max;
        }
    }

    for (std::size_t v = 0; v < budget.attack_size; ++v) {
        std::vector<std::pair<std::size_t, double>> row;
        const double* wv = work.row_ptr(v);
        for (std::size_t i = 0; i < n_items; ++i) {
            if (wv[i] == 0.0) continue;
            bool is_target = false;
            for (std::size_t t : budget.targets) is_target |= (t == i);
            row.emplace_back(i, is_target ? budget.rating_max : clip_round(wv[i], budget.rating_max));
        }
        res.batch.rows.push_back(std::move(row));
    }
    return res;
}

}  // namespace shill
