#pragma once

#include <cmath>
#include <vector>

#include "mcross/encoder.hpp"

namespace mcross {

// Standard Adam with bias correction. Moment accumulators reuse the parameter
// structure so they pair up tensor-by-tensor.
struct OptimizerState {
    EncoderParams m, v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    OptimizerState() = default;
    explicit OptimizerState(const EncoderConfig& cfg)
        : m(make_zero_params(cfg)), v(make_zero_params(cfg)) {}
};

inline void adam_step(EncoderParams& params, const EncoderParams& grads, OptimizerState& opt,
                      double lr) {
    if (!params.same_structure(grads) || !params.same_structure(opt.m))
        throw Error("adam_step: shape mismatch");
    ++opt.step;
    double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));

    std::vector<Tensor*> pt, mt, vt;
    std::vector<const Tensor*> gt;
    params.for_each([&](const std::string&, Tensor& t) { pt.push_back(&t); });
    grads.for_each([&](const std::string& name, const Tensor& t) {
        if (!t.all_finite()) throw Error("adam_step: non-finite gradient in " + name);
        gt.push_back(&t);
    });
    opt.m.for_each([&](const std::string&, Tensor& t) { mt.push_back(&t); });
    opt.v.for_each([&](const std::string&, Tensor& t) { vt.push_back(&t); });

    for (size_t i = 0; i < pt.size(); ++i) {
        double* p = pt[i]->v.data();
        const double* g = gt[i]->v.data();
        double* m = mt[i]->v.data();
        double* v = vt[i]->v.data();
        size_t n = pt[i]->v.size();
        for (size_t j = 0; j < n; ++j) {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

} // namespace mcross
