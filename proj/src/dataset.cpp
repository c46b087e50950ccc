#include "shill/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "shill/rng.hpp"

namespace shill {

double RatingMatrix::rating(std::size_t user, std::size_t item) const {
    for (const auto& [i, r] : by_user_[user])
        if (i == item) return r;
    return 0.0;
}

bool RatingMatrix::has_rating(std::size_t user, std::size_t item) const {
    for (const auto& [i, r] : by_user_[user])
        if (i == item) return true;
    return false;
}

void RatingMatrixBuilder::add(const std::string& user, const std::string& item, double rating) {
    if (!(rating >= 1.0 && rating <= rating_max_) || rating != std::floor(rating))
        throw ValidationError("rating " + std::to_string(rating) + " outside discrete range [1, " +
                              std::to_string(static_cast<int>(rating_max_)) + "]");
    auto intern = [](std::vector<std::string>& ids,
                     std::unordered_map<std::string, std::size_t>& index,
                     const std::string& id) {
        auto it = index.find(id);
        if (it != index.end()) return it->second;
        std::size_t idx = ids.size();
        ids.push_back(id);
        index.emplace(id, idx);
        return idx;
    };
    std::size_t u = intern(m_.user_ids_, m_.user_index_, user);
    std::size_t i = intern(m_.item_ids_, m_.item_index_, item);
    m_.entries_.push_back({u, i, rating});
}

RatingMatrix RatingMatrixBuilder::build() {
    if (m_.entries_.empty()) throw ValidationError("empty rating matrix");
    m_.rating_max_ = rating_max_;
    m_.by_user_.assign(m_.user_ids_.size(), {});
    m_.by_item_.assign(m_.item_ids_.size(), {});
    for (const auto& e : m_.entries_) {
        m_.by_user_[e.user].emplace_back(e.item, e.value);
        m_.by_item_[e.item].emplace_back(e.user, e.value);
    }
    for (std::size_t u = 0; u < m_.by_user_.size(); ++u) {
        auto& row = m_.by_user_[u];
        std::sort(row.begin(), row.end());
        for (std::size_t k = 1; k < row.size(); ++k)
            if (row[k].first == row[k - 1].first)
                throw ValidationError("duplicate rating for user " + m_.user_ids_[u] + ", item " +
                                      m_.item_ids_[row[k].first]);
    }
    for (auto& col : m_.by_item_) std::sort(col.begin(), col.end());
    return std::move(m_);
}

AttackBudget make_budget(std::size_t attack_size, std::size_t profile_size,
                         std::set<std::size_t> selected, std::vector<std::size_t> targets,
                         double rating_max) {
    if (attack_size < 1) throw ValidationError("attack size A must be >= 1");
    if (profile_size < 1) throw ValidationError("profile size P must be >= 1");
    if (targets.empty()) throw ValidationError("budget needs at least one target item");
    for (std::size_t t : targets)
        if (selected.count(t))
            throw ValidationError("target item " + std::to_string(t) + " overlaps selected items");
    return AttackBudget{attack_size, profile_size, std::move(selected), std::move(targets), rating_max};
}

namespace {

double parse_rating_token(const std::string& tok, std::size_t line_no) {
    std::size_t pos = 0;
    double r = 0.0;
    try {
        r = std::stod(tok, &pos);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": non-numeric rating '" + tok + "'");
    }
    if (pos != tok.size())
        throw ParseError("line " + std::to_string(line_no) + ": non-numeric rating '" + tok + "'");
    return r;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

RatingMatrix load_movielens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    RatingMatrixBuilder b;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        auto f = split_fields(line, '\t');
        if (f.size() != 4)
            throw ParseError("line " + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                             std::to_string(f.size()));
        double r = parse_rating_token(f[2], line_no);
        b.add(f[0], f[1], r);  // timestamp f[3] discarded
    }
    if (b.size() == 0) throw ValidationError(path + ": no ratings found");
    return b.build();
}

RatingMatrix load_csv(const std::string& path, bool has_header) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    RatingMatrixBuilder b;
    std::string line;
    std::size_t line_no = 0;
    bool skipped_header = !has_header;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        if (!skipped_header) {
            skipped_header = true;
            continue;
        }
        auto f = split_fields(line, ',');
        if (f.size() != 3)
            throw ParseError("line " + std::to_string(line_no) + ": expected user,item,rating, got " +
                             std::to_string(f.size()) + " fields");
        double r = parse_rating_token(f[2], line_no);
        b.add(f[0], f[1], r);
    }
    if (b.size() == 0) throw ValidationError(path + ": no ratings found");
    return b.build();
}

RatingMatrix filter(const RatingMatrix& m, std::size_t min_user_ratings) {
    std::vector<bool> keep_user(m.num_users());
    for (std::size_t u = 0; u < m.num_users(); ++u)
        keep_user[u] = m.by_user()[u].size() >= min_user_ratings;
    std::vector<std::size_t> item_count(m.num_items(), 0);
    for (const auto& e : m.entries())
        if (keep_user[e.user]) ++item_count[e.item];

    RatingMatrixBuilder b(m.rating_max());
    for (const auto& e : m.entries())
        if (keep_user[e.user] && item_count[e.item] > 0)
            b.add(m.user_id(e.user), m.item_id(e.item), e.value);
    if (b.size() == 0) throw ValidationError("filter removed every rating");
    return b.build();
}

DatasetSplit split(const RatingMatrix& m, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ValidationError("test_fraction must lie in (0, 1)");
    std::vector<std::size_t> order(m.num_ratings());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    std::size_t n_test = static_cast<std::size_t>(
        std::floor(static_cast<double>(m.num_ratings()) * test_fraction));

    std::vector<bool> is_test(m.num_ratings(), false);
    for (std::size_t k = 0; k < n_test; ++k) is_test[order[k]] = true;

    RatingMatrixBuilder train_b(m.rating_max()), test_b(m.rating_max());
    for (std::size_t k = 0; k < m.num_ratings(); ++k) {
        const auto& e = m.entries()[k];
        (is_test[k] ? test_b : train_b).add(m.user_id(e.user), m.item_id(e.item), e.value);
    }
    DatasetSplit out;
    out.train = train_b.build();
    out.test = n_test > 0 ? test_b.build() : RatingMatrix{};
    out.seed = seed;
    return out;
}

DatasetStats stats(const RatingMatrix& m) {
    if (m.num_ratings() == 0) throw ValidationError("stats on empty matrix");
    DatasetStats s;
    s.num_users = m.num_users();
    s.num_items = m.num_items();
    s.num_ratings = m.num_ratings();
    s.sparsity = 1.0 - static_cast<double>(s.num_ratings) /
                           (static_cast<double>(s.num_users) * static_cast<double>(s.num_items));

    double sum = 0.0, sq = 0.0;
    for (const auto& e : m.entries()) {
        sum += e.value;
        sq += e.value * e.value;
    }
    double n = static_cast<double>(s.num_ratings);
    s.mean = sum / n;
    s.stddev = std::sqrt(std::max(0.0, sq / n - s.mean * s.mean));

    s.item_mean.assign(m.num_items(), 0.0);
    s.item_std.assign(m.num_items(), 0.0);
    s.item_count.assign(m.num_items(), 0);
    for (std::size_t i = 0; i < m.num_items(); ++i) {
        const auto& col = m.by_item()[i];
        s.item_count[i] = col.size();
        if (col.empty()) continue;
        double cs = 0.0, cq = 0.0;
        for (const auto& [u, r] : col) {
            cs += r;
            cq += r * r;
        }
        double cn = static_cast<double>(col.size());
        s.item_mean[i] = cs / cn;
        s.item_std[i] = std::sqrt(std::max(0.0, cq / cn - s.item_mean[i] * s.item_mean[i]));
    }
    return s;
}

std::vector<std::size_t> pick_targets(const RatingMatrix& m, std::size_t n, std::uint64_t seed) {
    if (n > m.num_items())
        throw ValidationError("cannot pick " + std::to_string(n) + " targets from " +
                              std::to_string(m.num_items()) + " items");
    Rng rng(seed);
    return rng.sample_without_replacement(m.num_items(), n);
}

std::set<std::size_t> pick_selected(const RatingMatrix& m, std::size_t n) {
    if (n > m.num_items()) throw ValidationError("selected-item count exceeds item count");
    std::vector<std::size_t> idx(m.num_items());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return m.by_item()[a].size() > m.by_item()[b].size();
    });
    return std::set<std::size_t>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
}

}  // namespace shill
