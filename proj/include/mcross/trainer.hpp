#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mcross/adam.hpp"
#include "mcross/jsonl.hpp"
#include "mcross/losses.hpp"
#include "mcross/moco.hpp"
#include "mcross/samples.hpp"
#include "mcross/sequence.hpp"
#include "mcross/span.hpp"
#include "mcross/vocab.hpp"

namespace mcross {

struct TrainConfig {
    int pretrain_batch = 8;
    int finetune_batch = 8;
    long total_steps = 2000;
    double lr = 1e-4;
    double m = 0.99;
    size_t queue_capacity = 256;
    double lambda_moco = 1.0;
    double tau = 0.05;
    int max_seq = 128;
    Variant variant = Variant::BI;
    SimilarityKind similarity = SimilarityKind::NegKl;
    SpanSupport support = SpanSupport::PassageOnly;
    uint64_t seed = 42;
    bool include_positive = false;
    size_t min_negatives = 0; // 0 resolves to one effective batch at startup
    long checkpoint_every = 0; // 0: final checkpoint only

    void validate() const {
        if (pretrain_batch < 1 || finetune_batch < 1) throw Error("batch size must be >= 1");
        if (total_steps < 0) throw Error("total_steps must be >= 0");
        if (lr <= 0.0) throw Error("lr must be positive");
        if (m < 0.0 || m > 1.0) throw Error("momentum m must lie in [0,1]");
        if (queue_capacity < 1) throw Error("queue_capacity must be >= 1");
        if (lambda_moco < 0.0) throw Error("lambda_moco must be >= 0");
        if (tau <= 0.0) throw Error("tau must be positive");
        if (max_seq < 16) throw Error("max_seq must be >= 16");
    }
};

// Full-scale hyperparameters; desk-scale values stay the constructor
// defaults.
inline void apply_paper_scale(TrainConfig& c) {
    c.pretrain_batch = 32;
    c.finetune_batch = 8;
    c.total_steps = 156250;
    c.lr = 2e-5;
    c.m = 0.999;
    c.queue_capacity = 32000;
    c.lambda_moco = 1.0;
    c.tau = 0.05;
    c.max_seq = 384;
}

inline json train_config_to_json(const TrainConfig& c) {
    return json{{"pretrain_batch", c.pretrain_batch},
                {"finetune_batch", c.finetune_batch},
                {"total_steps", c.total_steps},
                {"lr", c.lr},
                {"m", c.m},
                {"queue_capacity", c.queue_capacity},
                {"lambda_moco", c.lambda_moco},
                {"tau", c.tau},
                {"max_seq", c.max_seq},
                {"variant", to_string(c.variant)},
                {"similarity", to_string(c.similarity)},
                {"support", to_string(c.support)},
                {"seed", c.seed},
                {"include_positive", c.include_positive},
                {"min_negatives", c.min_negatives},
                {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    if (j.contains("pretrain_batch")) c.pretrain_batch = j.at("pretrain_batch").get<int>();
    if (j.contains("finetune_batch")) c.finetune_batch = j.at("finetune_batch").get<int>();
    if (j.contains("total_steps")) c.total_steps = j.at("total_steps").get<long>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("m")) c.m = j.at("m").get<double>();
    if (j.contains("queue_capacity")) c.queue_capacity = j.at("queue_capacity").get<size_t>();
    if (j.contains("lambda_moco")) c.lambda_moco = j.at("lambda_moco").get<double>();
    if (j.contains("tau")) c.tau = j.at("tau").get<double>();
    if (j.contains("max_seq")) c.max_seq = j.at("max_seq").get<int>();
    if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("similarity"))
        c.similarity = similarity_from_string(j.at("similarity").get<std::string>());
    if (j.contains("support"))
        c.support = span_support_from_string(j.at("support").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("include_positive")) c.include_positive = j.at("include_positive").get<bool>();
    if (j.contains("min_negatives")) c.min_negatives = j.at("min_negatives").get<size_t>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j.at("checkpoint_every").get<long>();
    return c;
}

// A sample pair tokenized and laid out for the encoder. Gold indices stay
// passage-relative; they are mapped into each distribution's support at loss
// time.
struct PreparedPair {
    std::string pair_id;
    TokenSequence cloze;
    std::optional<TokenSequence> natural;
    int gold_st = 0, gold_en = 0;
};

struct PrepareStats {
    size_t kept = 0;
    size_t dropped_gold_truncated = 0; // cloze view lost the answer span
    size_t natural_dropped = 0;        // pair kept, natural view lost the span
};

inline std::vector<PreparedPair> prepare_pairs(const std::vector<SamplePair>& pairs,
                                               const Vocab& vocab, int max_seq,
                                               PrepareStats* stats = nullptr) {
    PrepareStats local;
    PrepareStats& st = stats ? *stats : local;
    std::vector<PreparedPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        PreparedPair pp;
        pp.pair_id = p.pair_id;
        pp.gold_st = p.cloze.answer_start;
        pp.gold_en = p.cloze.answer_end;
        std::vector<int> passage_ids = vocab.encode(p.cloze.passage_tokens);
        pp.cloze = build_sequence(vocab.encode(p.cloze.query_tokens), passage_ids, max_seq);
        if (pp.gold_en >= pp.cloze.passage_len) {
            ++st.dropped_gold_truncated;
            continue;
        }
        if (p.natural) {
            TokenSequence ns =
                build_sequence(vocab.encode(p.natural->query_tokens), passage_ids, max_seq);
            if (pp.gold_en < ns.passage_len)
                pp.natural = std::move(ns);
            else
                ++st.natural_dropped;
        }
        out.push_back(std::move(pp));
        ++st.kept;
    }
    return out;
}

struct StepReport {
    long step = 0;
    Variant variant = Variant::SSPT;
    double loss = 0.0;
    double answer_loss = 0.0;
    double moco_start = 0.0; // lambda/2-scaled, so loss == answer + start + end
    double moco_end = 0.0;
    size_t queue_len = 0;
};

inline json step_report_to_json(const StepReport& r) {
    return json{{"step", r.step},
                {"variant", to_string(r.variant)},
                {"loss", r.loss},
                {"answer_loss", r.answer_loss},
                {"moco_start", r.moco_start},
                {"moco_end", r.moco_end},
                {"queue_len", r.queue_len}};
}

namespace detail {

struct AnchorTerms {
    double answer = 0.0;
    double moco_start = 0.0, moco_end = 0.0; // lambda/2-scaled
};

// One anchor: fast forward, answer term, optional MoCo term against the given
// partner positive and queue family, then (when grads != nullptr) one combined
// backward through span head and encoder. grad_scale folds the 1/batch mean
// into the logits gradient.
inline AnchorTerms process_anchor(const EncoderParams& fast, const TokenSequence& seq,
                                  int gold_st_rel, int gold_en_rel, const std::string& pair_id,
                                  const TrainConfig& cfg, size_t min_negatives, int pad_to,
                                  const ProjectedPair* partner_pos, const QueuePair* queue,
                                  double grad_scale, EncoderParams* grads) {
    AnchorTerms out;
    ForwardCache cache;
    forward_encoder(fast, seq, cache);
    SpanDistribution dist = predict_span(fast, cache, cfg.support, pair_id);
    int st = support_index(dist, seq, gold_st_rel);
    int en = support_index(dist, seq, gold_en_rel);
    out.answer = answer_loss(dist, st, en);

    std::vector<double> dlog_st, dlog_en;
    if (grads) {
        dlog_st = answer_dlogits(dist.start, st);
        dlog_en = answer_dlogits(dist.end, en);
    }

    if (partner_pos && queue && queue->size() >= min_negatives) {
        PassageProjection pr_st = project_to_passage(dist, true, seq, pad_to);
        PassageProjection pr_en = project_to_passage(dist, false, seq, pad_to);
        if (grads) {
            auto r_st = infonce_with_grad(pr_st.u, partner_pos->start, queue->start, cfg.tau,
                                          cfg.similarity, pair_id, cfg.include_positive);
            auto r_en = infonce_with_grad(pr_en.u, partner_pos->end, queue->end, cfg.tau,
                                          cfg.similarity, pair_id, cfg.include_positive);
            if (r_st && r_en) {
                double half_lambda = 0.5 * cfg.lambda_moco;
                out.moco_start = half_lambda * r_st->loss;
                out.moco_end = half_lambda * r_en->loss;
                auto chain = [&](const PassageProjection& pr, const std::vector<double>& du_raw,
                                 const std::vector<double>& z, std::vector<double>& dlog) {
                    std::vector<double> du(du_raw.size());
                    for (size_t i = 0; i < du.size(); ++i) du[i] = half_lambda * du_raw[i];
                    std::vector<double> dz =
                        project_to_passage_backward(pr, du, dist.support_len);
                    std::vector<double> extra = softmax_grad_to_logits(z, dz);
                    for (size_t i = 0; i < dlog.size(); ++i) dlog[i] += extra[i];
                };
                chain(pr_st, r_st->dz_fast, dist.start, dlog_st);
                chain(pr_en, r_en->dz_fast, dist.end, dlog_en);
            }
        } else {
            auto r_st = infonce_loss(pr_st.u, partner_pos->start, queue->start, cfg.tau,
                                     cfg.similarity, pair_id, cfg.include_positive);
            auto r_en = infonce_loss(pr_en.u, partner_pos->end, queue->end, cfg.tau,
                                     cfg.similarity, pair_id, cfg.include_positive);
            if (r_st && r_en) {
                out.moco_start = 0.5 * cfg.lambda_moco * *r_st;
                out.moco_end = 0.5 * cfg.lambda_moco * *r_en;
            }
        }
    }

    if (grads) {
        for (double& g : dlog_st) g *= grad_scale;
        for (double& g : dlog_en) g *= grad_scale;
        std::vector<double> dh(cache.h.size(), 0.0);
        backward_span(fast, cache, dist, dlog_st, dlog_en, *grads, dh);
        backward_encoder(fast, cache, dh, *grads);
    }
    return out;
}

// Slow-encoder distributions for one pair, passage-projected. Computed before
// the parameter update, matching the step ordering: these are what gets
// enqueued afterwards.
struct SlowViews {
    std::optional<ProjectedPair> natural, cloze;
};

inline ProjectedPair slow_projection(const EncoderParams& slow, const TokenSequence& seq,
                                     const std::string& pair_id, SpanSupport support,
                                     int pad_to) {
    ForwardCache cache;
    forward_encoder(slow, seq, cache);
    SpanDistribution dist = predict_span(slow, cache, support, pair_id);
    ProjectedPair out;
    out.pair_id = pair_id;
    out.start = project_to_passage(dist, true, seq, pad_to).u;
    out.end = project_to_passage(dist, false, seq, pad_to).u;
    return out;
}

} // namespace detail

// Variant wiring, one place only: which member anchors the answer loss and
// which slow distributions exist. The cloze-anchored term is always computed
// before the natural-anchored one; with the MoCo path guarded out entirely at
// lambda = 0, UNI degenerates to the same instruction sequence as SSPT and BI
// to NO_MOCO, which is what makes the equivalence identities exact.
struct VariantWiring {
    bool anchor_cloze = false;
    bool anchor_natural = false;
    bool moco = false; // cloze->natural direction (queue of natural slow dists)
    bool moco_reverse = false; // natural->cloze direction
};

inline VariantWiring wiring_for(Variant v, double lambda_moco) {
    VariantWiring w;
    switch (v) {
        case Variant::SSPT: w.anchor_cloze = true; break;
        case Variant::SSPT_NATURAL: w.anchor_natural = true; break;
        case Variant::NO_MOCO: w.anchor_cloze = w.anchor_natural = true; break;
        case Variant::UNI:
            w.anchor_cloze = true;
            w.moco = lambda_moco > 0.0;
            break;
        case Variant::BI:
            w.anchor_cloze = w.anchor_natural = true;
            w.moco = w.moco_reverse = lambda_moco > 0.0;
            break;
    }
    return w;
}

struct BatchTerms {
    double answer = 0.0, moco_start = 0.0, moco_end = 0.0; // batch means
    double loss() const { return answer + moco_start + moco_end; }
};

// Loss (and optionally gradients) for one batch against frozen MoCo state.
// Pure in everything except *grads; used directly by finite-difference checks.
inline BatchTerms batch_loss(const EncoderParams& fast, const MocoState& moco,
                             const std::vector<const PreparedPair*>& batch,
                             const TrainConfig& cfg, EncoderParams* grads = nullptr,
                             std::vector<detail::SlowViews>* slow_out = nullptr) {
    if (batch.empty()) throw Error("batch_loss: empty batch");
    VariantWiring w = wiring_for(cfg.variant, cfg.lambda_moco);
    int pad_to = fast.cfg.max_seq - 3;
    double inv_b = 1.0 / static_cast<double>(batch.size());
    BatchTerms sums;

    for (const PreparedPair* pair : batch) {
        detail::SlowViews sv;
        if (w.moco && pair->natural)
            sv.natural = detail::slow_projection(moco.slow, *pair->natural, pair->pair_id,
                                                 cfg.support, pad_to);
        if (w.moco_reverse)
            sv.cloze = detail::slow_projection(moco.slow, pair->cloze, pair->pair_id, cfg.support,
                                               pad_to);

        if (w.anchor_cloze) {
            const ProjectedPair* pos = sv.natural ? &*sv.natural : nullptr;
            detail::AnchorTerms t = detail::process_anchor(
                fast, pair->cloze, pair->gold_st, pair->gold_en, pair->pair_id, cfg,
                moco.min_negatives, pad_to, pos, pos ? &moco.queue_natural : nullptr, inv_b,
                grads);
            sums.answer += t.answer;
            sums.moco_start += t.moco_start;
            sums.moco_end += t.moco_end;
        }
        if (w.anchor_natural && pair->natural) {
            const ProjectedPair* pos = sv.cloze ? &*sv.cloze : nullptr;
            detail::AnchorTerms t = detail::process_anchor(
                fast, *pair->natural, pair->gold_st, pair->gold_en, pair->pair_id, cfg,
                moco.min_negatives, pad_to, pos, pos ? &moco.queue_cloze : nullptr, inv_b,
                grads);
            sums.answer += t.answer;
            sums.moco_start += t.moco_start;
            sums.moco_end += t.moco_end;
        }
        if (slow_out) slow_out->push_back(std::move(sv));
    }

    BatchTerms out;
    out.answer = sums.answer * inv_b;
    out.moco_start = sums.moco_start * inv_b;
    out.moco_end = sums.moco_end * inv_b;
    return out;
}

// Pre-training driver. Owns the fast params, optimizer, MoCo state, and the
// epoch shuffling; one train_step call per optimizer step.
struct Trainer {
    TrainConfig cfg;
    EncoderParams fast;
    OptimizerState opt;
    MocoState moco;
    long step = 0;

    std::vector<size_t> order;
    size_t cursor = 0;
    uint64_t epoch = 0;

    Trainer(const EncoderConfig& ecfg, const TrainConfig& tcfg)
        : cfg(tcfg), fast(init_params(ecfg)), opt(ecfg), moco(fast, tcfg.queue_capacity) {
        cfg.validate();
        if (ecfg.max_seq != cfg.max_seq)
            throw Error("Trainer: encoder max_seq differs from train config");
        moco.m = cfg.m;
        moco.tau = cfg.tau;
        moco.lambda_moco = cfg.lambda_moco;
        moco.kind = cfg.similarity;
        moco.include_positive = cfg.include_positive;
        moco.min_negatives = cfg.min_negatives; // 0: resolved to one batch on first step
    }

    size_t effective_batch(size_t n_data) const {
        return std::min<size_t>(static_cast<size_t>(cfg.pretrain_batch), n_data);
    }

    std::vector<const PreparedPair*> next_batch(const std::vector<PreparedPair>& data) {
        if (data.empty()) throw Error("next_batch: no training pairs");
        size_t b = effective_batch(data.size());
        if (order.empty() || cursor + b > order.size()) {
            order.resize(data.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            auto rng = make_rng(cfg.seed, "shuffle/" + std::to_string(epoch));
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
            ++epoch;
        }
        std::vector<const PreparedPair*> batch;
        batch.reserve(b);
        for (size_t i = 0; i < b; ++i) batch.push_back(&data[order[cursor + i]]);
        cursor += b;
        return batch;
    }

    StepReport train_step(const std::vector<PreparedPair>& data) {
        std::vector<const PreparedPair*> batch = next_batch(data);
        if (moco.min_negatives == 0) moco.min_negatives = effective_batch(data.size());

        VariantWiring w = wiring_for(cfg.variant, cfg.lambda_moco);
        EncoderParams grads = make_zero_params(fast.cfg);
        std::vector<detail::SlowViews> slow_views;
        BatchTerms terms = batch_loss(fast, moco, batch, cfg, &grads, &slow_views);
        double loss = terms.loss();
        if (!std::isfinite(loss)) throw Error("train_step: non-finite loss");

        adam_step(fast, grads, opt, cfg.lr);
        if (w.moco || w.moco_reverse) {
            momentum_update(moco.slow, fast, cfg.m);
            std::vector<ProjectedPair> nat, clz;
            for (auto& sv : slow_views) {
                if (sv.natural) nat.push_back(std::move(*sv.natural));
                if (sv.cloze) clz.push_back(std::move(*sv.cloze));
            }
            if (!nat.empty()) moco.queue_natural.enqueue_batch(nat);
            if (!clz.empty()) moco.queue_cloze.enqueue_batch(clz);
        }

        StepReport r;
        r.step = step++;
        r.variant = cfg.variant;
        r.answer_loss = terms.answer;
        r.moco_start = terms.moco_start;
        r.moco_end = terms.moco_end;
        r.loss = loss;
        r.queue_len = moco.queue_natural.size();
        return r;
    }
};

inline std::vector<StepReport> run_pretrain(
    Trainer& trainer, const std::vector<PreparedPair>& data, JsonlWriter* metrics = nullptr,
    const std::function<void(const StepReport&)>& on_step = {}) {
    std::vector<StepReport> reports;
    reports.reserve(static_cast<size_t>(trainer.cfg.total_steps));
    for (long s = 0; s < trainer.cfg.total_steps; ++s) {
        StepReport r = trainer.train_step(data);
        if (metrics) metrics->write(step_report_to_json(r));
        if (on_step) on_step(r);
        reports.push_back(r);
    }
    return reports;
}

// Supervised fine-tuning samples: natural question against its passage.
struct PreparedQA {
    std::string id;
    TokenSequence seq;
    int gold_st = 0, gold_en = 0; // passage-relative
};

inline std::vector<PreparedQA> prepare_qa(const std::vector<QASample>& samples,
                                          const Vocab& vocab, int max_seq,
                                          size_t* dropped = nullptr) {
    std::vector<PreparedQA> out;
    size_t drop = 0;
    for (const auto& s : samples) {
        PreparedQA q;
        q.id = s.id;
        q.gold_st = s.answer_start;
        q.gold_en = s.answer_end;
        q.seq = build_sequence(vocab.encode(s.query_tokens), vocab.encode(s.passage_tokens),
                               max_seq);
        if (q.gold_en >= q.seq.passage_len) {
            ++drop;
            continue;
        }
        out.push_back(std::move(q));
    }
    if (dropped) *dropped = drop;
    return out;
}

struct FinetuneConfig {
    int batch = 8;
    long epochs = 1;
    long max_steps = 0; // 0: no cap
    double lr = 1e-4;
    uint64_t seed = 42;
    SpanSupport support = SpanSupport::PassageOnly;
};

// Answer-loss-only supervised training. on_epoch fires after each full epoch
// (checkpoint hook).
inline long finetune(EncoderParams& params, OptimizerState& opt,
                     const std::vector<PreparedQA>& data, const FinetuneConfig& fcfg,
                     JsonlWriter* metrics = nullptr,
                     const std::function<void(long)>& on_epoch = {}) {
    if (data.empty()) throw Error("finetune: no training samples");
    long step = 0;
    size_t b = std::min<size_t>(static_cast<size_t>(fcfg.batch), data.size());
    for (long e = 0; e < fcfg.epochs; ++e) {
        std::vector<size_t> order(data.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto rng = make_rng(fcfg.seed, "finetune-shuffle/" + std::to_string(e));
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t start = 0; start + b <= order.size(); start += b) {
            if (fcfg.max_steps > 0 && step >= fcfg.max_steps) return step;
            EncoderParams grads = make_zero_params(params.cfg);
            double inv_b = 1.0 / static_cast<double>(b);
            double loss_sum = 0.0;
            for (size_t i = 0; i < b; ++i) {
                const PreparedQA& s = data[order[start + i]];
                ForwardCache cache;
                forward_encoder(params, s.seq, cache);
                SpanDistribution dist = predict_span(params, cache, fcfg.support, s.id);
                int st = support_index(dist, s.seq, s.gold_st);
                int en = support_index(dist, s.seq, s.gold_en);
                loss_sum += answer_loss(dist, st, en);
                std::vector<double> dst = answer_dlogits(dist.start, st);
                std::vector<double> den = answer_dlogits(dist.end, en);
                for (double& g : dst) g *= inv_b;
                for (double& g : den) g *= inv_b;
                std::vector<double> dh(cache.h.size(), 0.0);
                backward_span(params, cache, dist, dst, den, grads, dh);
                backward_encoder(params, cache, dh, grads);
            }
            double loss = loss_sum * inv_b;
            if (!std::isfinite(loss)) throw Error("finetune: non-finite loss");
            adam_step(params, grads, opt, fcfg.lr);
            if (metrics)
                metrics->write(json{{"step", step},
                                    {"variant", "finetune"},
                                    {"loss", loss},
                                    {"answer_loss", loss},
                                    {"moco_start", 0.0},
                                    {"moco_end", 0.0},
                                    {"queue_len", 0}});
            ++step;
        }
        if (on_epoch) on_epoch(e);
    }
    return step;
}

} // namespace mcross
