#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mcross/moco.hpp"
#include "mcross/span.hpp"

namespace mcross {

enum class Variant { UNI, BI, NO_MOCO, SSPT, SSPT_NATURAL };

inline Variant variant_from_string(const std::string& s) {
    if (s == "uni") return Variant::UNI;
    if (s == "bi") return Variant::BI;
    if (s == "no-moco") return Variant::NO_MOCO;
    if (s == "sspt") return Variant::SSPT;
    if (s == "sspt-natural") return Variant::SSPT_NATURAL;
    throw Error("unknown variant: " + s + " (valid: uni, bi, no-moco, sspt, sspt-natural)");
}

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::UNI: return "uni";
        case Variant::BI: return "bi";
        case Variant::NO_MOCO: return "no-moco";
        case Variant::SSPT: return "sspt";
        case Variant::SSPT_NATURAL: return "sspt-natural";
    }
    throw Error("bad variant value");
}

// Floors the log argument so a perfectly one-hot distribution cannot produce
// -inf. Never active at training scale.
constexpr double kLogFloor = 1e-12;

inline double clamped_log(double x) { return std::log(x < kLogFloor ? kLogFloor : x); }

// Maps a passage-relative token index into the distribution's support.
inline int support_index(const SpanDistribution& dist, const TokenSequence& seq,
                         int passage_rel) {
    return seq.passage_offset + passage_rel - dist.support_offset;
}

// -1/2 [log z_start[st] + log z_end[en]]; the indicator sums collapse to the
// gold positions.
inline double answer_loss(const SpanDistribution& z, int gold_st, int gold_en) {
    if (gold_st < 0 || gold_st >= z.support_len || gold_en < 0 || gold_en >= z.support_len)
        throw Error("answer_loss: gold outside support");
    return -0.5 * (clamped_log(z.start[static_cast<size_t>(gold_st)]) +
                   clamped_log(z.end[static_cast<size_t>(gold_en)]));
}

// Softmax cross entropy identity for one side of the answer loss:
// d(answer_loss)/d(logit_i) = 1/2 (z_i - [i == gold]).
inline std::vector<double> answer_dlogits(const std::vector<double>& z, int gold) {
    std::vector<double> dl(z.size());
    for (size_t i = 0; i < z.size(); ++i) dl[i] = 0.5 * z[i];
    dl[static_cast<size_t>(gold)] -= 0.5;
    return dl;
}

struct MocoTerms {
    double start = 0.0; // unscaled InfoNCE values
    double end = 0.0;
};

// Both sides of the MoCo term for one anchor, or nothing while the queue is
// cold or every entry is the anchor's own pair.
inline std::optional<MocoTerms> moco_terms(const std::vector<double>& u_fast_start,
                                           const std::vector<double>& u_fast_end,
                                           const std::vector<double>& u_pos_start,
                                           const std::vector<double>& u_pos_end,
                                           const QueuePair& queue, double tau,
                                           SimilarityKind kind,
                                           const std::string& exclude_pair_id,
                                           bool include_positive, size_t min_negatives) {
    if (queue.size() < min_negatives) return std::nullopt;
    auto st = infonce_loss(u_fast_start, u_pos_start, queue.start, tau, kind, exclude_pair_id,
                           include_positive);
    auto en = infonce_loss(u_fast_end, u_pos_end, queue.end, tau, kind, exclude_pair_id,
                           include_positive);
    if (!st || !en) return std::nullopt;
    return MocoTerms{*st, *en};
}

// Combined objective: answer term plus lambda/2 of each InfoNCE side.
inline double uni_value(double answer, const std::optional<MocoTerms>& moco, double lambda) {
    if (!moco || lambda == 0.0) return answer;
    return answer + 0.5 * lambda * moco->start + 0.5 * lambda * moco->end;
}

} // namespace mcross
