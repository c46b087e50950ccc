#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "shill/errors.hpp"

namespace shill {

struct RatingEntry {
    std::size_t user;
    std::size_t item;
    double value;  // discrete, 1..rating_max
};

// Sparse users x items rating matrix with dense indices. External string IDs
// map bijectively onto [0, num_users) / [0, num_items). Read-only after
// construction; safe to share across threads.
class RatingMatrix {
public:
    RatingMatrix() = default;

    std::size_t num_users() const { return user_ids_.size(); }
    std::size_t num_items() const { return item_ids_.size(); }
    std::size_t num_ratings() const { return entries_.size(); }
    double rating_max() const { return rating_max_; }

    const std::vector<RatingEntry>& entries() const { return entries_; }
    const std::vector<std::vector<std::pair<std::size_t, double>>>& by_user() const { return by_user_; }
    const std::vector<std::vector<std::pair<std::size_t, double>>>& by_item() const { return by_item_; }

    const std::string& user_id(std::size_t u) const { return user_ids_[u]; }
    const std::string& item_id(std::size_t i) const { return item_ids_[i]; }
    std::size_t user_index(const std::string& id) const { return user_index_.at(id); }
    std::size_t item_index(const std::string& id) const { return item_index_.at(id); }

    // 0.0 when unrated.
    double rating(std::size_t user, std::size_t item) const;
    bool has_rating(std::size_t user, std::size_t item) const;

    friend class RatingMatrixBuilder;

private:
    std::vector<RatingEntry> entries_;
    std::vector<std::string> user_ids_, item_ids_;
    std::unordered_map<std::string, std::size_t> user_index_, item_index_;
    std::vector<std::vector<std::pair<std::size_t, double>>> by_user_, by_item_;
    double rating_max_ = 5.0;
};

// Accumulates (user, item, rating) triples, assigning dense indices in first-
// seen order, and validates the matrix invariants at build().
class RatingMatrixBuilder {
public:
    explicit RatingMatrixBuilder(double rating_max = 5.0) : rating_max_(rating_max) {}

    void add(const std::string& user, const std::string& item, double rating);
    std::size_t size() const { return m_.entries_.size(); }

    // Throws ValidationError on duplicate pairs or an empty matrix.
    RatingMatrix build();

private:
    RatingMatrix m_;
    double rating_max_;
};

struct DatasetSplit {
    RatingMatrix train;
    RatingMatrix test;
    std::uint64_t seed = 0;
};

struct AttackBudget {
    std::size_t attack_size = 0;           // A: fake profiles to inject
    std::size_t profile_size = 0;          // P: filler ratings per profile
    std::set<std::size_t> selected_items;  // S
    std::vector<std::size_t> targets;
    double rating_max = 5.0;
};

// Validates A >= 1, P >= 1, nonempty targets, targets disjoint from selected.
AttackBudget make_budget(std::size_t attack_size, std::size_t profile_size,
                         std::set<std::size_t> selected, std::vector<std::size_t> targets,
                         double rating_max = 5.0);

struct DatasetStats {
    std::size_t num_users = 0, num_items = 0, num_ratings = 0;
    double sparsity = 0.0;  // fraction of missing cells
    double mean = 0.0, stddev = 0.0;
    std::vector<double> item_mean, item_std;
    std::vector<std::size_t> item_count;
};

// Tab-separated `user \t item \t rating \t timestamp` (ML-100K u.data shape).
RatingMatrix load_movielens(const std::string& path);

// Comma-separated `user,item,rating`.
RatingMatrix load_csv(const std::string& path, bool has_header);

// Drops users with fewer than min_user_ratings ratings, then items left with
// none, then reindexes densely. One pass, not iterated.
RatingMatrix filter(const RatingMatrix& m, std::size_t min_user_ratings);

// Global shuffle, floor(N * test_fraction) entries become the test set.
DatasetSplit split(const RatingMatrix& m, double test_fraction, std::uint64_t seed);

DatasetStats stats(const RatingMatrix& m);

// Uniform sample of n distinct items.
std::vector<std::size_t> pick_targets(const RatingMatrix& m, std::size_t n, std::uint64_t seed);

// Top-n items by rating count, ties broken by ascending index.
std::set<std::size_t> pick_selected(const RatingMatrix& m, std::size_t n);

}  // namespace shill
