#pragma once

#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "mcross/encoder.hpp"
#include "mcross/jsonl.hpp"
#include "mcross/span.hpp"

namespace mcross {

enum class SimilarityKind { NegKl, Cosine };

inline SimilarityKind similarity_from_string(const std::string& s) {
    if (s == "neg_kl") return SimilarityKind::NegKl;
    if (s == "cosine") return SimilarityKind::Cosine;
    throw Error("unknown similarity: " + s);
}

inline std::string to_string(SimilarityKind k) {
    return k == SimilarityKind::NegKl ? "neg_kl" : "cosine";
}

// theta_slow = m * theta_slow + (1 - m) * theta_fast, every scalar.
inline void momentum_update(EncoderParams& slow, const EncoderParams& fast, double m) {
    if (!slow.same_structure(fast)) throw Error("momentum_update: structural mismatch");
    std::vector<Tensor*> st;
    std::vector<const Tensor*> ft;
    slow.for_each([&](const std::string&, Tensor& t) { st.push_back(&t); });
    fast.for_each([&](const std::string&, const Tensor& t) { ft.push_back(&t); });
    for (size_t i = 0; i < st.size(); ++i) {
        double* s = st[i]->v.data();
        const double* f = ft[i]->v.data();
        size_t n = st[i]->v.size();
        for (size_t j = 0; j < n; ++j) s[j] = m * s[j] + (1.0 - m) * f[j];
    }
}

constexpr double kPassageEps = 1e-8;

// Cached intermediates so the gradient can be chained back to the source
// distribution.
struct PassageProjection {
    std::vector<double> u;  // smoothed output, length pad_to
    std::vector<double> w;  // renormalized passage slice, length passage_len
    double mass = 0.0;      // passage probability mass before renormalization
    int src_offset = 0;     // first passage slot inside the source vector
    int passage_len = 0;
    int pad_to = 0;
};

// Extract passage probabilities, renormalize, zero-pad to pad_to, then
// epsilon-smooth so KL stays finite. Distributions from different samples
// become comparable because positive pairs share the passage.
inline PassageProjection project_to_passage(const std::vector<double>& z, int support_offset,
                                            const TokenSequence& seq, int pad_to) {
    if (pad_to < seq.passage_len) throw Error("project_to_passage: pad_to below passage length");
    PassageProjection pr;
    pr.src_offset = seq.passage_offset - support_offset;
    pr.passage_len = seq.passage_len;
    pr.pad_to = pad_to;
    if (pr.src_offset < 0 ||
        pr.src_offset + pr.passage_len > static_cast<int>(z.size()))
        throw Error("project_to_passage: passage outside support");
    pr.mass = 0.0;
    for (int j = 0; j < pr.passage_len; ++j)
        pr.mass += z[static_cast<size_t>(pr.src_offset + j)];
    if (pr.mass <= 0.0) throw Error("project_to_passage: zero passage mass");
    pr.w.resize(static_cast<size_t>(pr.passage_len));
    for (int j = 0; j < pr.passage_len; ++j)
        pr.w[static_cast<size_t>(j)] = z[static_cast<size_t>(pr.src_offset + j)] / pr.mass;
    double denom = 1.0 + pad_to * kPassageEps;
    pr.u.assign(static_cast<size_t>(pad_to), kPassageEps / denom);
    for (int j = 0; j < pr.passage_len; ++j)
        pr.u[static_cast<size_t>(j)] = (pr.w[static_cast<size_t>(j)] + kPassageEps) / denom;
    return pr;
}

inline PassageProjection project_to_passage(const SpanDistribution& dist, bool start_side,
                                            const TokenSequence& seq, int pad_to) {
    return project_to_passage(start_side ? dist.start : dist.end, dist.support_offset, seq,
                              pad_to);
}

// du (length pad_to) -> dz over the source support (length support_len).
inline std::vector<double> project_to_passage_backward(const PassageProjection& pr,
                                                       const std::vector<double>& du,
                                                       int support_len) {
    if (static_cast<int>(du.size()) != pr.pad_to)
        throw Error("project_to_passage_backward: gradient length mismatch");
    double denom = 1.0 + pr.pad_to * kPassageEps;
    // Padded slots are structural zeros, their gradient does not propagate.
    double dot_dw_w = 0.0;
    std::vector<double> dw(static_cast<size_t>(pr.passage_len));
    for (int j = 0; j < pr.passage_len; ++j) {
        dw[static_cast<size_t>(j)] = du[static_cast<size_t>(j)] / denom;
        dot_dw_w += dw[static_cast<size_t>(j)] * pr.w[static_cast<size_t>(j)];
    }
    std::vector<double> dz(static_cast<size_t>(support_len), 0.0);
    for (int j = 0; j < pr.passage_len; ++j)
        dz[static_cast<size_t>(pr.src_offset + j)] =
            (dw[static_cast<size_t>(j)] - dot_dw_w) / pr.mass;
    return dz;
}

// D: higher = more similar for both kinds. neg_kl is -KL(a || b) with the
// stored/slow distribution as reference b.
inline double similarity(const std::vector<double>& a, const std::vector<double>& b,
                         SimilarityKind kind) {
    if (a.size() != b.size()) throw Error("similarity: length mismatch");
    if (kind == SimilarityKind::NegKl) {
        double s = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            if (a[i] == 0.0) continue;
            s += a[i] * std::log(a[i] / b[i]);
        }
        return -s;
    }
    double na = 0.0, nb = 0.0, ab = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        ab += a[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("similarity: zero-norm vector");
    return ab / (std::sqrt(na) * std::sqrt(nb));
}

// dD/da with b held fixed (the slow side carries no gradient).
inline std::vector<double> similarity_grad_a(const std::vector<double>& a,
                                             const std::vector<double>& b, SimilarityKind kind) {
    if (a.size() != b.size()) throw Error("similarity_grad_a: length mismatch");
    std::vector<double> g(a.size(), 0.0);
    if (kind == SimilarityKind::NegKl) {
        for (size_t i = 0; i < a.size(); ++i) g[i] = -(std::log(a[i] / b[i]) + 1.0);
        return g;
    }
    double na = 0.0, nb = 0.0, ab = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        ab += a[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("similarity_grad_a: zero-norm vector");
    double norm_a = std::sqrt(na), norm_b = std::sqrt(nb);
    double d = ab / (norm_a * norm_b);
    for (size_t i = 0; i < a.size(); ++i) g[i] = b[i] / (norm_a * norm_b) - d * a[i] / na;
    return g;
}

struct QueueEntry {
    std::string pair_id;
    std::vector<double> z;
};

// FIFO ring of slow-encoder distributions; oldest evicted first.
struct DistributionQueue {
    size_t capacity = 0;
    std::deque<QueueEntry> entries;

    explicit DistributionQueue(size_t cap = 0) : capacity(cap) {}

    size_t size() const { return entries.size(); }

    void push(QueueEntry e) {
        if (capacity == 0) throw Error("DistributionQueue: zero capacity");
        if (entries.size() >= capacity) entries.pop_front();
        entries.push_back(std::move(e));
    }
};

struct ProjectedPair {
    std::string pair_id;
    std::vector<double> start, end;
};

// Aligned start/end queues of one family.
struct QueuePair {
    DistributionQueue start, end;

    explicit QueuePair(size_t cap = 0) : start(cap), end(cap) {}

    size_t size() const { return start.size(); }

    void enqueue_batch(const std::vector<ProjectedPair>& batch) {
        for (const auto& p : batch) {
            start.push({p.pair_id, p.start});
            end.push({p.pair_id, p.end});
        }
    }
};

struct InfonceGrad {
    double loss = 0.0;
    double s_pos = 0.0;              // D(z_fast, z_slow_pos)
    std::vector<double> dz_fast;     // dL/dz_fast, same length as z_fast
    size_t negatives_used = 0;
};

// Contrastive loss with a negatives-only denominator, so the value can go
// negative. include_positive switches to the standard InfoNCE denominator.
// Entries matching exclude_pair_id are the anchor's own pair and never count
// as negatives. Returns nothing when no negatives remain.
inline std::optional<double> infonce_loss(const std::vector<double>& z_fast,
                                          const std::vector<double>& z_slow_pos,
                                          const DistributionQueue& queue, double tau,
                                          SimilarityKind kind, const std::string& exclude_pair_id,
                                          bool include_positive = false) {
    if (tau <= 0.0) throw Error("infonce_loss: tau must be positive");
    std::vector<double> scaled;
    scaled.reserve(queue.size() + 1);
    for (const auto& e : queue.entries) {
        if (e.pair_id == exclude_pair_id) continue;
        scaled.push_back(similarity(z_fast, e.z, kind) / tau);
    }
    if (scaled.empty()) return std::nullopt;
    double s_pos = similarity(z_fast, z_slow_pos, kind);
    if (include_positive) scaled.push_back(s_pos / tau);
    return -s_pos / tau + log_sum_exp(scaled);
}

// Same loss with dL/dz_fast assembled in the same pass.
inline std::optional<InfonceGrad> infonce_with_grad(const std::vector<double>& z_fast,
                                                    const std::vector<double>& z_slow_pos,
                                                    const DistributionQueue& queue, double tau,
                                                    SimilarityKind kind,
                                                    const std::string& exclude_pair_id,
                                                    bool include_positive = false) {
    if (tau <= 0.0) throw Error("infonce_with_grad: tau must be positive");
    std::vector<const QueueEntry*> negs;
    std::vector<double> scaled;
    for (const auto& e : queue.entries) {
        if (e.pair_id == exclude_pair_id) continue;
        negs.push_back(&e);
        scaled.push_back(similarity(z_fast, e.z, kind) / tau);
    }
    if (negs.empty()) return std::nullopt;

    InfonceGrad out;
    out.negatives_used = negs.size();
    out.s_pos = similarity(z_fast, z_slow_pos, kind);
    std::vector<double> denom_terms = scaled;
    if (include_positive) denom_terms.push_back(out.s_pos / tau);
    double lse = log_sum_exp(denom_terms);
    out.loss = -out.s_pos / tau + lse;

    double d_s_pos = -1.0 / tau;
    if (include_positive) d_s_pos += std::exp(out.s_pos / tau - lse) / tau;
    out.dz_fast.assign(z_fast.size(), 0.0);
    auto add_scaled = [&](const std::vector<double>& g, double c) {
        for (size_t i = 0; i < g.size(); ++i) out.dz_fast[i] += c * g[i];
    };
    add_scaled(similarity_grad_a(z_fast, z_slow_pos, kind), d_s_pos);
    for (size_t k = 0; k < negs.size(); ++k) {
        double d_s_k = std::exp(scaled[k] - lse) / tau;
        add_scaled(similarity_grad_a(z_fast, negs[k]->z, kind), d_s_k);
    }
    return out;
}

// One queue family stores natural-partner distributions (negatives for cloze
// anchors), the other stores cloze distributions. UNI touches only the first.
struct MocoState {
    EncoderParams slow;
    double m = 0.99;
    double tau = 0.05;
    double lambda_moco = 1.0;
    SimilarityKind kind = SimilarityKind::NegKl;
    bool include_positive = false;
    size_t min_negatives = 1;
    QueuePair queue_natural;
    QueuePair queue_cloze;

    MocoState() : queue_natural(0), queue_cloze(0) {}

    MocoState(const EncoderParams& fast, size_t queue_capacity)
        : slow(fast), queue_natural(queue_capacity), queue_cloze(queue_capacity) {}
};

inline void dump_queue(JsonlWriter& w, const std::string& family, const QueuePair& q) {
    auto side = [&](const char* name, const DistributionQueue& dq) {
        for (const auto& e : dq.entries) {
            json j;
            j["family"] = family;
            j["side"] = name;
            j["pair_id"] = e.pair_id;
            j["z"] = e.z;
            w.write(j);
        }
    };
    side("start", q.start);
    side("end", q.end);
}

} // namespace mcross
