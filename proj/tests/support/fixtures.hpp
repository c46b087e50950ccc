#pragma once

// Shared test fixtures: small matrix builders plus a deterministic generator
// for a dataset file with the exact ML-100K shape (943 users, 1682 items,
// 100000 ratings, every user >= 20 ratings, every item rated). Set
// SHILL_ML100K to point the suites at the real u.data instead.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "shill/dataset.hpp"
#include "shill/rng.hpp"

namespace shill::testsupport {

// rows[u][i] == 0 means unrated.
inline RatingMatrix dense_matrix(const std::vector<std::vector<double>>& rows,
                                 double rating_max = 5.0) {
    RatingMatrixBuilder b(rating_max);
    for (std::size_t u = 0; u < rows.size(); ++u)
        for (std::size_t i = 0; i < rows[u].size(); ++i)
            if (rows[u][i] != 0.0)
                b.add("u" + std::to_string(u), "i" + std::to_string(i), rows[u][i]);
    return b.build();
}

inline RatingMatrix random_matrix(Rng& rng, std::size_t users, std::size_t items,
                                  double fill = 0.5) {
    RatingMatrixBuilder b;
    bool any = false;
    for (std::size_t u = 0; u < users; ++u)
        for (std::size_t i = 0; i < items; ++i)
            if (rng.uniform() < fill) {
                b.add("u" + std::to_string(u), "i" + std::to_string(i),
                      1.0 + static_cast<double>(rng.below(5)));
                any = true;
            }
    if (!any) b.add("u0", "i0", 3.0);
    return b.build();
}

struct Ml100kShape {
    static constexpr std::size_t users = 943;
    static constexpr std::size_t items = 1682;
    static constexpr std::size_t ratings = 100000;
};

// Writes a tab-separated file with the exact ML-100K shape. Ratings come from
// a rank-3 latent model so factorization victims have structure to learn.
inline void write_ml100k_shaped(const std::string& path, std::uint64_t seed = 424242) {
    const std::size_t n = Ml100kShape::users, m = Ml100kShape::items,
                      total = Ml100kShape::ratings;
    Rng rng(seed);

    // per-user rating counts: 20 base + weighted share of the remainder
    std::vector<double> w(n);
    for (auto& x : w) x = std::min(std::exp(1.2 * rng.gaussian()), 12.0);
    double wsum = 0.0;
    for (double x : w) wsum += x;
    std::size_t extra_total = total - 20 * n;
    std::vector<std::size_t> count(n, 20);
    std::vector<std::pair<double, std::size_t>> frac;
    std::size_t assigned = 0;
    for (std::size_t u = 0; u < n; ++u) {
        double share = w[u] / wsum * static_cast<double>(extra_total);
        std::size_t whole = static_cast<std::size_t>(share);
        count[u] += whole;
        assigned += whole;
        frac.emplace_back(share - static_cast<double>(whole), u);
    }
    std::sort(frac.begin(), frac.end(), [](auto& a, auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t k = 0; k < extra_total - assigned; ++k) ++count[frac[k].second];

    // popularity-skewed item distribution (cdf for binary-search draws)
    std::vector<double> cdf(m);
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        acc += 1.0 / std::pow(static_cast<double>(i) + 10.0, 0.8);
        cdf[i] = acc;
    }
    auto draw_item = [&]() {
        double x = rng.uniform() * acc;
        return static_cast<std::size_t>(
            std::lower_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
    };

    std::vector<std::vector<bool>> has(n, std::vector<bool>(m, false));
    std::vector<std::vector<std::size_t>> picks(n);
    for (std::size_t i = 0; i < m; ++i) {  // coverage: every item rated once
        std::size_t u = i % n;
        has[u][i] = true;
        picks[u].push_back(i);
    }
    for (std::size_t u = 0; u < n; ++u)
        while (picks[u].size() < count[u]) {
            std::size_t i = draw_item();
            if (has[u][i]) continue;
            has[u][i] = true;
            picks[u].push_back(i);
        }

    // rank-3 latent structure for the rating values
    std::vector<std::array<double, 3>> pu(n), qi(m);
    for (auto& a : pu)
        for (auto& x : a) x = rng.gaussian();
    for (auto& a : qi)
        for (auto& x : a) x = rng.gaussian();

    std::ofstream out(path);
    long ts = 874965758;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t i : picks[u]) {
            double s = 3.6;
            for (int f = 0; f < 3; ++f) s += 0.45 * pu[u][f] * qi[i][f];
            s += 0.35 * rng.gaussian();
            long r = std::lround(std::clamp(s, 1.0, 5.0));
            out << (u + 1) << '\t' << (i + 1) << '\t' << r << '\t' << ts++ << '\n';
        }
}

// Path to a usable ML-100K-shaped file: the real dataset when SHILL_ML100K is
// set, otherwise a memoized synthetic stand-in with identical shape.
inline std::string ml100k_path() {
    if (const char* env = std::getenv("SHILL_ML100K"))
        if (std::filesystem::exists(env)) return env;
    static std::string cached;
    if (cached.empty()) {
        cached = (std::filesystem::temp_directory_path() / "shill_ml100k_shaped.data").string();
        if (!std::filesystem::exists(cached)) write_ml100k_shaped(cached);
    }
    return cached;
}

inline bool using_real_ml100k() {
    const char* env = std::getenv("SHILL_ML100K");
    return env && std::filesystem::exists(env);
}

}  // namespace shill::testsupport
