#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mcross/encoder.hpp"

namespace mcross {

enum class SpanSupport { PassageOnly, FullSequence };

inline SpanSupport span_support_from_string(const std::string& s) {
    if (s == "passage_only") return SpanSupport::PassageOnly;
    if (s == "full_sequence") return SpanSupport::FullSequence;
    throw Error("unknown span support: " + s);
}

inline std::string to_string(SpanSupport s) {
    return s == SpanSupport::PassageOnly ? "passage_only" : "full_sequence";
}

// Paired start/end probability vectors over the support positions.
// support_offset maps support index 0 back to a sequence position.
struct SpanDistribution {
    std::vector<double> start, end;
    std::vector<double> log_start, log_end; // log-probs, same support
    int support_offset = 0;
    int support_len = 0;
    std::string pair_id;
};

namespace detail {

inline void softmax_side(const std::vector<double>& h, const Tensor& w, const Tensor& b,
                         int support_offset, int support_len, int d, std::vector<double>& z,
                         std::vector<double>& logz) {
    std::vector<double> logits(static_cast<size_t>(support_len));
    for (int i = 0; i < support_len; ++i) {
        const double* row = h.data() + static_cast<size_t>(support_offset + i) * d;
        logits[static_cast<size_t>(i)] = dot(row, w.v.data(), d) + b.v[0];
    }
    double lse = log_sum_exp(logits);
    z.resize(static_cast<size_t>(support_len));
    logz.resize(static_cast<size_t>(support_len));
    for (int i = 0; i < support_len; ++i) {
        logz[static_cast<size_t>(i)] = logits[static_cast<size_t>(i)] - lse;
        z[static_cast<size_t>(i)] = std::exp(logz[static_cast<size_t>(i)]);
    }
}

} // namespace detail

inline SpanDistribution predict_span(const EncoderParams& p, const ForwardCache& cache,
                                     SpanSupport support, const std::string& pair_id = "") {
    const TokenSequence& seq = cache.seq;
    SpanDistribution dist;
    dist.pair_id = pair_id;
    if (support == SpanSupport::PassageOnly) {
        dist.support_offset = seq.passage_offset;
        dist.support_len = seq.passage_len;
    } else {
        dist.support_offset = 0;
        dist.support_len = seq.n_real;
    }
    if (dist.support_len < 1) throw Error("predict_span: empty support");
    detail::softmax_side(cache.h, p.w_start, p.b_start, dist.support_offset, dist.support_len,
                         p.cfg.d, dist.start, dist.log_start);
    detail::softmax_side(cache.h, p.w_end, p.b_end, dist.support_offset, dist.support_len,
                         p.cfg.d, dist.end, dist.log_end);
    return dist;
}

// d(loss)/d(logits) from d(loss)/d(z) through the softmax jacobian:
// dl_i = z_i * (dz_i - sum_j dz_j z_j).
inline std::vector<double> softmax_grad_to_logits(const std::vector<double>& z,
                                                  const std::vector<double>& dz) {
    if (z.size() != dz.size()) throw Error("softmax_grad_to_logits: size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < z.size(); ++i) s += dz[i] * z[i];
    std::vector<double> dl(z.size());
    for (size_t i = 0; i < z.size(); ++i) dl[i] = z[i] * (dz[i] - s);
    return dl;
}

// Accumulates span-head gradients and the hidden-state gradient for one side.
// dlogits is over the distribution's support.
inline void backward_span_side(const EncoderParams& p, const ForwardCache& cache,
                               const SpanDistribution& dist, const std::vector<double>& dlogits,
                               const Tensor& w, Tensor& dw, Tensor& db, std::vector<double>& dh) {
    int d = p.cfg.d;
    if (static_cast<int>(dlogits.size()) != dist.support_len)
        throw Error("backward_span_side: gradient length mismatch");
    if (dh.size() != cache.h.size()) throw Error("backward_span_side: dh shape mismatch");
    for (int i = 0; i < dist.support_len; ++i) {
        double g = dlogits[static_cast<size_t>(i)];
        if (g == 0.0) continue;
        const double* hrow = cache.h.data() + static_cast<size_t>(dist.support_offset + i) * d;
        double* dhrow = dh.data() + static_cast<size_t>(dist.support_offset + i) * d;
        for (int j = 0; j < d; ++j) {
            dw.v[static_cast<size_t>(j)] += g * hrow[j];
            dhrow[j] += g * w.v[static_cast<size_t>(j)];
        }
        db.v[0] += g;
    }
}

inline void backward_span(const EncoderParams& p, const ForwardCache& cache,
                          const SpanDistribution& dist, const std::vector<double>& dlogits_start,
                          const std::vector<double>& dlogits_end, EncoderParams& grads,
                          std::vector<double>& dh) {
    backward_span_side(p, cache, dist, dlogits_start, p.w_start, grads.w_start, grads.b_start, dh);
    backward_span_side(p, cache, dist, dlogits_end, p.w_end, grads.w_end, grads.b_end, dh);
}

} // namespace mcross
