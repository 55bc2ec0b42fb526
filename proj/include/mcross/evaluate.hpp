#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "mcross/encoder.hpp"
#include "mcross/jsonl.hpp"
#include "mcross/samples.hpp"
#include "mcross/sequence.hpp"
#include "mcross/span.hpp"
#include "mcross/text.hpp"
#include "mcross/vocab.hpp"

namespace mcross {

// SQuAD v1.1 answer normalization: lowercase, strip punctuation, drop the
// articles a/an/the, collapse whitespace. Order matters and matches the
// official script.
inline std::string normalize_answer(const std::string& text) {
    static const std::string punct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
    std::string depunct;
    depunct.reserve(text.size());
    for (char c : text) {
        char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (punct.find(lc) != std::string::npos) continue;
        depunct.push_back(lc);
    }
    std::string out;
    size_t i = 0;
    while (i < depunct.size()) {
        while (i < depunct.size() && std::isspace(static_cast<unsigned char>(depunct[i]))) ++i;
        size_t j = i;
        while (j < depunct.size() && !std::isspace(static_cast<unsigned char>(depunct[j]))) ++j;
        if (j > i) {
            std::string tok = depunct.substr(i, j - i);
            if (tok != "a" && tok != "an" && tok != "the") {
                if (!out.empty()) out.push_back(' ');
                out += tok;
            }
        }
        i = j;
    }
    return out;
}

inline std::vector<std::string> answer_tokens(const std::string& normalized) {
    std::vector<std::string> toks;
    size_t i = 0;
    while (i < normalized.size()) {
        size_t j = normalized.find(' ', i);
        if (j == std::string::npos) j = normalized.size();
        if (j > i) toks.push_back(normalized.substr(i, j - i));
        i = j + 1;
    }
    return toks;
}

// Bag-of-tokens F1 on already-normalized token lists. Both sides empty counts
// as a match.
inline double token_f1(const std::vector<std::string>& p, const std::vector<std::string>& g) {
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : g) ++counts[t];
    int overlap = 0;
    for (const auto& t : p) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            ++overlap;
            --it->second;
        }
    }
    if (overlap == 0) return 0.0;
    double prec = static_cast<double>(overlap) / static_cast<double>(p.size());
    double rec = static_cast<double>(overlap) / static_cast<double>(g.size());
    return 2.0 * prec * rec / (prec + rec);
}

inline double token_f1(const std::string& pred, const std::string& gold) {
    return token_f1(answer_tokens(normalize_answer(pred)),
                    answer_tokens(normalize_answer(gold)));
}

inline int exact_match(const std::string& pred, const std::string& gold) {
    return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

struct DecodedSpan {
    int st = 0, en = 0;
    double joint = 0.0;
};

// Constrained argmax of z_start[st] * z_end[en] over st <= en and
// en - st < max_answer_len; ties resolve to the smallest st, then en.
inline DecodedSpan decode_answer(const SpanDistribution& z, int max_answer_len) {
    if (z.support_len < 1) throw Error("decode_answer: empty support");
    if (max_answer_len < 1) throw Error("decode_answer: max_answer_len must be >= 1");
    DecodedSpan best;
    best.joint = -1.0;
    for (int st = 0; st < z.support_len; ++st) {
        int en_hi = std::min(z.support_len - 1, st + max_answer_len - 1);
        for (int en = st; en <= en_hi; ++en) {
            double joint = z.start[static_cast<size_t>(st)] * z.end[static_cast<size_t>(en)];
            if (joint > best.joint) best = DecodedSpan{st, en, joint};
        }
    }
    return best;
}

struct Window {
    TokenSequence seq;
    int offset = 0; // global index of the window's first passage token
};

// Fixed-width passage chunks at stride multiples; every passage token lands in
// at least one window.
inline std::vector<Window> sliding_windows(const std::vector<int>& query_ids,
                                           const std::vector<int>& passage_ids, int max_seq,
                                           int stride) {
    if (stride < 1) throw Error("sliding_windows: stride must be >= 1");
    int q = static_cast<int>(query_ids.size());
    int budget = max_seq - q - 3;
    if (budget < 1) throw Error("sliding_windows: query leaves no passage budget");
    int plen = static_cast<int>(passage_ids.size());

    std::vector<Window> out;
    for (int k = 0;; ++k) {
        int off = k * stride;
        if (k > 0 && (off >= plen || (k - 1) * stride + budget >= plen)) break;
        int hi = std::min(off + budget, plen);
        std::vector<int> slice(passage_ids.begin() + off, passage_ids.begin() + hi);
        out.push_back(Window{build_sequence(query_ids, slice, max_seq), off});
    }
    return out;
}

struct WindowPrediction {
    int offset = 0;
    DecodedSpan span; // window-local
};

// Highest joint probability wins; ties go to the earlier window.
inline DecodedSpan merge_window_predictions(const std::vector<WindowPrediction>& preds) {
    if (preds.empty()) throw Error("merge_window_predictions: no windows");
    const WindowPrediction* best = &preds[0];
    for (const auto& p : preds)
        if (p.span.joint > best->span.joint) best = &p;
    DecodedSpan global = best->span;
    global.st += best->offset;
    global.en += best->offset;
    return global;
}

struct Prediction {
    std::string id;
    std::string text;
    int st = 0, en = 0; // global passage token indices
    double joint = 0.0;
};

struct EvalConfig {
    int max_answer_len = 30;
    int stride = 128;
};

// Predictions always come from passage-restricted distributions: the answer
// must lie in the passage regardless of the training-time softmax support.
inline Prediction predict_answer(const EncoderParams& params, const Vocab& vocab,
                                 const std::string& id,
                                 const std::vector<std::string>& question_tokens,
                                 const std::vector<std::string>& passage_tokens,
                                 const EvalConfig& cfg) {
    if (passage_tokens.empty()) throw Error("predict_answer: empty passage");
    std::vector<int> query_ids = vocab.encode(question_tokens);
    std::vector<int> passage_ids = vocab.encode(passage_tokens);
    int budget = params.cfg.max_seq - static_cast<int>(query_ids.size()) - 3;
    if (budget < 1) throw Error("predict_answer: question too long for max_seq");
    // Keep windows overlapping by at least half so no candidate span of
    // reasonable length straddles a window boundary unseen.
    int stride = std::min(cfg.stride, std::max(1, budget / 2));

    std::vector<Window> windows = sliding_windows(query_ids, passage_ids, params.cfg.max_seq,
                                                  stride);
    std::vector<WindowPrediction> preds;
    preds.reserve(windows.size());
    for (const auto& w : windows) {
        ForwardCache cache;
        forward_encoder(params, w.seq, cache);
        SpanDistribution dist = predict_span(params, cache, SpanSupport::PassageOnly, id);
        preds.push_back(WindowPrediction{w.offset, decode_answer(dist, cfg.max_answer_len)});
    }
    DecodedSpan span = merge_window_predictions(preds);

    Prediction out;
    out.id = id;
    out.st = span.st;
    out.en = span.en;
    out.joint = span.joint;
    std::vector<std::string> ans(passage_tokens.begin() + span.st,
                                 passage_tokens.begin() + span.en + 1);
    out.text = join_tokens(ans);
    return out;
}

struct EvalSample {
    std::string id;
    std::string question;
    std::string passage;
    std::vector<std::string> answers;
};

// String view of a token-level QA sample; the gold answer is the span text.
// Tokens survive a join/re-split round trip, so scoring stays exact.
inline EvalSample eval_sample_from_qa(const QASample& q) {
    for (const auto& t : q.query_tokens)
        if (t == kBlankToken)
            throw Error("eval_sample_from_qa: cloze query cannot be evaluated as text");
    EvalSample s;
    s.id = q.id;
    s.question = join_tokens(q.query_tokens);
    s.passage = join_tokens(q.passage_tokens);
    std::vector<std::string> ans(q.passage_tokens.begin() + q.answer_start,
                                 q.passage_tokens.begin() + q.answer_end + 1);
    s.answers.push_back(join_tokens(ans));
    return s;
}

inline std::vector<EvalSample> load_eval_samples(const std::string& path) {
    std::vector<EvalSample> out;
    for_each_jsonl(path, [&](size_t, const json& j) {
        EvalSample s;
        s.id = j.at("id").get<std::string>();
        s.question = j.at("question").get<std::string>();
        s.passage = j.at("passage").get<std::string>();
        s.answers = j.at("answers").get<std::vector<std::string>>();
        if (s.answers.empty()) throw Error("eval sample " + s.id + " has no answers");
        out.push_back(std::move(s));
    });
    if (out.empty()) throw Error("no eval samples in " + path);
    return out;
}

struct SampleScore {
    std::string id;
    std::string pred;
    double f1 = 0.0;
    double em = 0.0;
};

struct EvalReport {
    double f1 = 0.0; // percentages
    double em = 0.0;
    size_t n = 0;
    std::vector<SampleScore> per_sample;
};

// Multi-reference golds score by the best-matching reference, SQuAD-style.
inline EvalReport evaluate_dataset(const EncoderParams& params, const Vocab& vocab,
                                   const std::vector<EvalSample>& dataset,
                                   const EvalConfig& cfg) {
    if (dataset.empty()) throw Error("evaluate_dataset: empty dataset");
    EvalReport report;
    double f1_sum = 0.0, em_sum = 0.0;
    for (const auto& s : dataset) {
        Prediction pred = predict_answer(params, vocab, s.id, split_tokens(s.question),
                                         split_tokens(s.passage), cfg);
        SampleScore score;
        score.id = s.id;
        score.pred = pred.text;
        for (const auto& gold : s.answers) {
            score.f1 = std::max(score.f1, token_f1(pred.text, gold));
            score.em = std::max(score.em, static_cast<double>(exact_match(pred.text, gold)));
        }
        f1_sum += score.f1;
        em_sum += score.em;
        report.per_sample.push_back(std::move(score));
    }
    report.n = dataset.size();
    report.f1 = 100.0 * f1_sum / static_cast<double>(report.n);
    report.em = 100.0 * em_sum / static_cast<double>(report.n);
    return report;
}

} // namespace mcross
