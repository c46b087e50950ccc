#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "shill/errors.hpp"
#include "shill/rng.hpp"

namespace shill {

// Dense row-major matrix with an optional same-shape gradient accumulator.
// Backward passes accumulate (+=) into g; the caller zeroes between steps,
// which keeps the minimax alternation explicit. Double precision throughout.
struct Tensor {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;
    std::vector<double> g;  // empty until ensure_grad()

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    static Tensor randn(std::size_t r, std::size_t c, Rng& rng, double stddev) {
        Tensor t(r, c);
        for (auto& x : t.v) x = rng.gaussian(0.0, stddev);
        return t;
    }
    static Tensor row(std::vector<double> vals) {
        Tensor t;
        t.rows = 1;
        t.cols = vals.size();
        t.v = std::move(vals);
        return t;
    }

    std::size_t size() const { return rows * cols; }
    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    double* row_ptr(std::size_t r) { return v.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return v.data() + r * cols; }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), 0.0);
    }
    void zero_grad() {
        if (!g.empty()) std::fill(g.begin(), g.end(), 0.0);
    }

    // Throws DivergenceError if any value is NaN/Inf.
    void check_finite(const char* what) const;
};

// C = A * B
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A^T * B
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// C = A * B^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Affine layer y = x W^T + b with x:(n,in), W:(out,in), b:(1,out).
// forward caches x; backward accumulates parameter grads and returns dL/dx.
struct Dense {
    Tensor w, b;

    Dense() = default;
    Dense(std::size_t in, std::size_t out, Rng& rng, double init_std);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy);

    Tensor cached_x;
};

struct Relu {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy) const;
    Tensor mask;  // relu'(0) defined as 0
};

struct TanhLayer {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy) const;
    Tensor out;
};

struct SigmoidLayer {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy) const;
    Tensor out;
};

// Row-wise, max-subtracted; each output row sums to 1.
Tensor softmax_rows(const Tensor& x);

// Losses. Values are scalars; *_grad returns dLoss/dPred.
double mse(const Tensor& pred, const Tensor& target);              // mean over elements
Tensor mse_grad(const Tensor& pred, const Tensor& target);
double masked_sse(const Tensor& pred, const Tensor& target, const Tensor& mask);  // sum over mask
Tensor masked_sse_grad(const Tensor& pred, const Tensor& target, const Tensor& mask);

inline constexpr double kProbEps = 1e-7;  // probability clamp for bce
double bce(double prob, double label);
double bce_grad(double prob, double label);  // d/dprob

double softmax_nll(const Tensor& scores_row, std::size_t target_index);
Tensor softmax_nll_grad(const Tensor& scores_row, std::size_t target_index);

enum class OptKind { sgd, adam };

class Optimizer {
public:
    Optimizer(OptKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(const std::vector<Tensor*>& params);
    void reset() { state_.clear(); }

    OptKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }

private:
    struct Moments {
        std::vector<double> m, v;
        std::uint64_t t = 0;
    };
    OptKind kind_;
    double lr_, beta1_, beta2_, eps_;
    std::unordered_map<Tensor*, Moments> state_;
};

// A scalar function bundled with its analytic gradient, for grad_check.
struct ScalarFn {
    std::function<double(const Tensor&)> value;
    std::function<Tensor(const Tensor&)> grad;
};

// Central finite differences per coordinate. Returns the max relative error
// |a - n| / max(1, |a|, |n|). Throws DivergenceError on non-finite values.
double grad_check(const ScalarFn& f, const Tensor& point, double step);

}  // namespace shill
