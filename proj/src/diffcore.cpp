#include "shill/diffcore.hpp"

#include <algorithm>
#include <cmath>

namespace shill {

void Tensor::check_finite(const char* what) const {
    for (double x : v)
        if (!std::isfinite(x)) throw DivergenceError(std::string(what) + ": non-finite value");
}

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw ValidationError(msg);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.cols == b.rows, "matmul: inner dimensions differ");
    Tensor c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require(a.rows == b.rows, "matmul_tn: leading dimensions differ");
    Tensor c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* ak = a.row_ptr(k);
        const double* bk = b.row_ptr(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            double aki = ak[i];
            if (aki == 0.0) continue;
            double* ci = c.row_ptr(i);
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require(a.cols == b.cols, "matmul_nt: trailing dimensions differ");
    Tensor c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* bj = b.row_ptr(j);
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
            ci[j] = s;
        }
    }
    return c;
}

Dense::Dense(std::size_t in, std::size_t out, Rng& rng, double init_std) {
    w = Tensor::randn(out, in, rng, init_std);
    b = Tensor(1, out);
    w.ensure_grad();
    b.ensure_grad();
}

Tensor Dense::forward(const Tensor& x) {
    require(x.cols == w.cols, "dense_forward: input width does not match weight");
    cached_x = x;
    Tensor y = matmul_nt(x, w);
    for (std::size_t i = 0; i < y.rows; ++i) {
        double* yi = y.row_ptr(i);
        for (std::size_t j = 0; j < y.cols; ++j) yi[j] += b.v[j];
    }
    return y;
}

Tensor Dense::backward(const Tensor& gy) {
    require(gy.rows == cached_x.rows && gy.cols == w.rows, "dense_backward: grad shape mismatch");
    w.ensure_grad();
    b.ensure_grad();
    // w.g += gy^T x
    for (std::size_t n = 0; n < gy.rows; ++n) {
        const double* gn = gy.row_ptr(n);
        const double* xn = cached_x.row_ptr(n);
        for (std::size_t o = 0; o < w.rows; ++o) {
            double go = gn[o];
            if (go == 0.0) continue;
            double* wo = w.g.data() + o * w.cols;
            for (std::size_t i = 0; i < w.cols; ++i) wo[i] += go * xn[i];
            b.g[o] += go;
        }
    }
    return matmul(gy, w);
}

Tensor Relu::forward(const Tensor& x) {
    mask = Tensor(x.rows, x.cols);
    Tensor y(x.rows, x.cols);
    for (std::size_t k = 0; k < x.size(); ++k) {
        bool pos = x.v[k] > 0.0;
        mask.v[k] = pos ? 1.0 : 0.0;
        y.v[k] = pos ? x.v[k] : 0.0;
    }
    return y;
}

Tensor Relu::backward(const Tensor& gy) const {
    Tensor gx(gy.rows, gy.cols);
    for (std::size_t k = 0; k < gy.size(); ++k) gx.v[k] = gy.v[k] * mask.v[k];
    return gx;
}

Tensor TanhLayer::forward(const Tensor& x) {
    out = Tensor(x.rows, x.cols);
    for (std::size_t k = 0; k < x.size(); ++k) out.v[k] = std::tanh(x.v[k]);
    return out;
}

Tensor TanhLayer::backward(const Tensor& gy) const {
    Tensor gx(gy.rows, gy.cols);
    for (std::size_t k = 0; k < gy.size(); ++k) gx.v[k] = gy.v[k] * (1.0 - out.v[k] * out.v[k]);
    return gx;
}

Tensor SigmoidLayer::forward(const Tensor& x) {
    out = Tensor(x.rows, x.cols);
    for (std::size_t k = 0; k < x.size(); ++k) out.v[k] = 1.0 / (1.0 + std::exp(-x.v[k]));
    return out;
}

Tensor SigmoidLayer::backward(const Tensor& gy) const {
    Tensor gx(gy.rows, gy.cols);
    for (std::size_t k = 0; k < gy.size(); ++k) gx.v[k] = gy.v[k] * out.v[k] * (1.0 - out.v[k]);
    return gx;
}

Tensor softmax_rows(const Tensor& x) {
    Tensor y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row_ptr(i);
        double* yi = y.row_ptr(i);
        double mx = xi[0];
        for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        for (std::size_t j = 0; j < x.cols; ++j) yi[j] /= sum;
    }
    return y;
}

double mse(const Tensor& pred, const Tensor& target) {
    require(pred.size() == target.size(), "mse: shape mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        double d = pred.v[k] - target.v[k];
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

Tensor mse_grad(const Tensor& pred, const Tensor& target) {
    Tensor g(pred.rows, pred.cols);
    double n = static_cast<double>(pred.size());
    for (std::size_t k = 0; k < pred.size(); ++k) g.v[k] = 2.0 * (pred.v[k] - target.v[k]) / n;
    return g;
}

double masked_sse(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    require(pred.size() == target.size() && pred.size() == mask.size(), "masked_sse: shape mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        if (mask.v[k] == 0.0) continue;
        double d = pred.v[k] - target.v[k];
        s += d * d;
    }
    return s;
}

Tensor masked_sse_grad(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    Tensor g(pred.rows, pred.cols);
    for (std::size_t k = 0; k < pred.size(); ++k)
        if (mask.v[k] != 0.0) g.v[k] = 2.0 * (pred.v[k] - target.v[k]);
    return g;
}

double bce(double prob, double label) {
    double p = std::clamp(prob, kProbEps, 1.0 - kProbEps);
    return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

double bce_grad(double prob, double label) {
    double p = std::clamp(prob, kProbEps, 1.0 - kProbEps);
    return (p - label) / (p * (1.0 - p));
}

double softmax_nll(const Tensor& scores_row, std::size_t target_index) {
    require(scores_row.rows == 1 && target_index < scores_row.cols, "softmax_nll: bad arguments");
    double mx = scores_row.v[0];
    for (double x : scores_row.v) mx = std::max(mx, x);
    double lse = 0.0;
    for (double x : scores_row.v) lse += std::exp(x - mx);
    lse = std::log(lse) + mx;
    return lse - scores_row.v[target_index];
}

Tensor softmax_nll_grad(const Tensor& scores_row, std::size_t target_index) {
    Tensor g = softmax_rows(scores_row);
    g.v[target_index] -= 1.0;
    return g;
}

Optimizer::Optimizer(OptKind kind, double lr, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    require(lr > 0.0, "optimizer: learning rate must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
            "optimizer: betas must lie in [0, 1)");
}

void Optimizer::step(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) {
        require(p->g.size() == p->v.size(), "optimizer: parameter has no gradient");
        if (kind_ == OptKind::sgd) {
            for (std::size_t k = 0; k < p->v.size(); ++k) p->v[k] -= lr_ * p->g[k];
            continue;
        }
        Moments& mo = state_[p];
        if (mo.m.size() != p->v.size()) {
            mo.m.assign(p->v.size(), 0.0);
            mo.v.assign(p->v.size(), 0.0);
            mo.t = 0;
        }
        ++mo.t;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(mo.t));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(mo.t));
        for (std::size_t k = 0; k < p->v.size(); ++k) {
            double gk = p->g[k];
            mo.m[k] = beta1_ * mo.m[k] + (1.0 - beta1_) * gk;
            mo.v[k] = beta2_ * mo.v[k] + (1.0 - beta2_) * gk * gk;
            double mhat = mo.m[k] / bc1;
            double vhat = mo.v[k] / bc2;
            p->v[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

double grad_check(const ScalarFn& f, const Tensor& point, double step) {
    if (!(step > 0.0)) throw ValidationError("grad_check: step must be positive");
    Tensor analytic = f.grad(point);
    analytic.check_finite("grad_check analytic gradient");
    Tensor x = point;
    double worst = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        double keep = x.v[k];
        x.v[k] = keep + step;
        double fp = f.value(x);
        x.v[k] = keep - step;
        double fm = f.value(x);
        x.v[k] = keep;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw DivergenceError("grad_check: non-finite function value");
        double numeric = (fp - fm) / (2.0 * step);
        double a = analytic.v[k];
        double err = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace shill
