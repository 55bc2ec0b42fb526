#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcross/bm25.hpp"
#include "mcross/corpus.hpp"
#include "mcross/rng.hpp"
#include "mcross/samples.hpp"
#include "mcross/text.hpp"

namespace mcross {

// Replaces sentence[start..end] with a single [BLANK].
inline std::vector<std::string> make_cloze_query(const std::vector<std::string>& sentence,
                                                 int start, int end) {
    if (start < 0 || end < start || end >= static_cast<int>(sentence.size()))
        throw Error("make_cloze_query: span out of bounds");
    std::vector<std::string> out;
    out.reserve(sentence.size() - static_cast<size_t>(end - start));
    for (int i = 0; i < start; ++i) out.push_back(sentence[static_cast<size_t>(i)]);
    out.push_back(kBlankToken);
    for (size_t i = static_cast<size_t>(end) + 1; i < sentence.size(); ++i)
        out.push_back(sentence[i]);
    return out;
}

// Maskable spans: maximal runs of capitalized tokens, skipping runs made of
// stopwords only. When no run qualifies, fall back to the longest
// non-stopword token (earliest on ties).
inline std::vector<std::pair<int, int>> mask_candidates(const std::vector<std::string>& sentence) {
    std::vector<std::pair<int, int>> runs;
    int n = static_cast<int>(sentence.size());
    int i = 0;
    while (i < n) {
        if (is_capitalized(sentence[static_cast<size_t>(i)])) {
            int j = i;
            while (j + 1 < n && is_capitalized(sentence[static_cast<size_t>(j + 1)])) ++j;
            bool all_stop = true;
            for (int k = i; k <= j; ++k)
                if (!is_stopword(sentence[static_cast<size_t>(k)])) all_stop = false;
            if (!all_stop) runs.emplace_back(i, j);
            i = j + 1;
        } else {
            ++i;
        }
    }
    if (!runs.empty()) return runs;
    int best = -1;
    size_t best_len = 0;
    for (int k = 0; k < n; ++k) {
        const auto& t = sentence[static_cast<size_t>(k)];
        if (is_stopword(t)) continue;
        if (t.size() > best_len) {
            best_len = t.size();
            best = k;
        }
    }
    if (best >= 0) return {{best, best}};
    return {};
}

inline std::optional<std::pair<int, int>> select_mask_span(
    const std::vector<std::string>& sentence, uint64_t rng_seed) {
    auto cands = mask_candidates(sentence);
    if (cands.empty()) return std::nullopt;
    std::mt19937_64 rng(rng_seed);
    return cands[draw_index(rng, cands.size())];
}

// First exact match of answer in passage (case-insensitive); nullopt when
// absent. End index is inclusive.
inline std::optional<std::pair<int, int>> locate_answer(
    const std::vector<std::string>& passage_tokens,
    const std::vector<std::string>& answer_tokens) {
    if (passage_tokens.empty() || answer_tokens.empty())
        throw Error("locate_answer: empty input");
    size_t m = answer_tokens.size();
    std::vector<std::string> ans;
    for (const auto& t : answer_tokens) ans.push_back(lower_copy(t));
    for (size_t i = 0; i + m <= passage_tokens.size(); ++i) {
        bool ok = true;
        for (size_t j = 0; j < m; ++j) {
            if (lower_copy(passage_tokens[i + j]) != ans[j]) {
                ok = false;
                break;
            }
        }
        if (ok) return std::make_pair(static_cast<int>(i), static_cast<int>(i + m - 1));
    }
    return std::nullopt;
}

// Deterministic natural-format stand-in for a learned question generator:
// "what" plus a context window on each side of the answer, answer removed.
inline std::vector<std::string> generate_template_question(
    const std::vector<std::string>& passage_tokens, int answer_start, int answer_end,
    int window = 4) {
    if (answer_start < 0 || answer_end < answer_start ||
        answer_end >= static_cast<int>(passage_tokens.size()))
        throw Error("generate_template_question: span out of bounds");
    std::vector<std::string> out;
    out.push_back("what");
    int lo = std::max(0, answer_start - window);
    for (int i = lo; i < answer_start; ++i) out.push_back(passage_tokens[static_cast<size_t>(i)]);
    int hi = std::min(static_cast<int>(passage_tokens.size()), answer_end + 1 + window);
    for (int i = answer_end + 1; i < hi; ++i) out.push_back(passage_tokens[static_cast<size_t>(i)]);
    return out;
}

struct PipelineStats {
    long sentences_seen = 0;
    long emitted = 0;
    long dropped_no_span = 0;
    long dropped_no_passage = 0;

    json to_json() const {
        return json{{"sentences_seen", sentences_seen},
                    {"emitted", emitted},
                    {"dropped_no_span", dropped_no_span},
                    {"dropped_no_passage", dropped_no_passage}};
    }
};

inline std::string make_pair_id(const std::string& doc_id, int para_index,
                                std::pair<int, int> sent_offsets, std::pair<int, int> mask_span) {
    std::string key = doc_id + '\x1f' + std::to_string(para_index) + '\x1f' +
                      std::to_string(sent_offsets.first) + ',' +
                      std::to_string(sent_offsets.second) + '\x1f' +
                      std::to_string(mask_span.first) + ',' + std::to_string(mask_span.second);
    return hex64(fnv1a64(key));
}

// Full cloze generation pass: every sentence is a mask candidate; the passage
// is retrieved from the rest of the corpus and must contain the answer. The
// source paragraph is never returned as its own passage.
inline std::vector<ClozeSample> generate_cloze_samples(const std::vector<Document>& corpus,
                                                       uint64_t seed, PipelineStats* stats,
                                                       double k1 = 1.2, double b = 0.75) {
    RetrievalIndex index = build_index(corpus, k1, b);
    std::unordered_map<std::string, const Paragraph*> by_ref;
    for (const auto& d : corpus)
        for (const auto& p : d.paragraphs) by_ref[d.id + "#" + std::to_string(p.index)] = &p;

    std::vector<ClozeSample> out;
    PipelineStats local;
    for (const auto& d : corpus) {
        for (const auto& p : d.paragraphs) {
            for (size_t s = 0; s < p.sentences.size(); ++s) {
                ++local.sentences_seen;
                auto sentence = split_tokens(p.sentence_text(s));
                if (sentence.empty()) {
                    ++local.dropped_no_span;
                    continue;
                }
                uint64_t sent_seed = derive_seed(
                    seed, d.id + "#" + std::to_string(p.index) + "#" + std::to_string(s));
                auto span = select_mask_span(sentence, sent_seed);
                if (!span) {
                    ++local.dropped_no_span;
                    continue;
                }
                auto [ms, me] = *span;
                std::vector<std::string> answer(sentence.begin() + ms, sentence.begin() + me + 1);
                auto query = make_cloze_query(sentence, ms, me);
                auto ref = retrieve_passage(index, query, answer, {d.id, p.index});
                if (!ref) {
                    ++local.dropped_no_passage;
                    continue;
                }
                const Paragraph* pp = by_ref.at(ref->doc_id + "#" + std::to_string(ref->index));
                ClozeSample c;
                c.pair_id = make_pair_id(d.id, p.index, p.sentences[s], *span);
                c.query_tokens = std::move(query);
                c.passage_tokens = pp->tokens();
                c.answer_tokens = std::move(answer);
                auto loc = locate_answer(c.passage_tokens, c.answer_tokens);
                if (!loc) {
                    // retrieval guarantees containment; treat as unsupported
                    ++local.dropped_no_passage;
                    continue;
                }
                c.answer_start = loc->first;
                c.answer_end = loc->second;
                validate_cloze(c);
                out.push_back(std::move(c));
                ++local.emitted;
            }
        }
    }
    if (stats) *stats = local;
    return out;
}

enum class NaturalSource { Ingest, Template };

struct PairingStats {
    long pairs = 0;
    long with_natural = 0;
    long cloze_only = 0;
    long unknown_pair_ids = 0; // ingest records referencing no cloze sample

    json to_json() const {
        return json{{"pairs", pairs},
                    {"with_natural", with_natural},
                    {"cloze_only", cloze_only},
                    {"unknown_pair_ids", unknown_pair_ids}};
    }
};

// Attaches a natural partner to one cloze sample. Empty answers follow the
// cloze-only rule: no natural member, all natural-side losses skipped later.
inline SamplePair pair_samples(const ClozeSample& cloze, NaturalSource source,
                               const std::unordered_map<std::string, std::vector<std::string>>*
                                   ingested_questions = nullptr) {
    SamplePair p;
    p.pair_id = cloze.pair_id;
    p.cloze = cloze;
    if (cloze.answer_tokens.empty()) return p;
    if (source == NaturalSource::Template) {
        NaturalSample n;
        n.pair_id = cloze.pair_id;
        n.query_tokens =
            generate_template_question(cloze.passage_tokens, cloze.answer_start, cloze.answer_end);
        n.passage_tokens = cloze.passage_tokens;
        n.answer_start = cloze.answer_start;
        n.answer_end = cloze.answer_end;
        p.natural = std::move(n);
    } else if (ingested_questions) {
        auto it = ingested_questions->find(cloze.pair_id);
        if (it != ingested_questions->end() && count_blanks(it->second) == 0) {
            NaturalSample n;
            n.pair_id = cloze.pair_id;
            n.query_tokens = it->second;
            n.passage_tokens = cloze.passage_tokens;
            n.answer_start = cloze.answer_start;
            n.answer_end = cloze.answer_end;
            p.natural = std::move(n);
        }
    }
    validate_pair(p);
    return p;
}

// Natural-query ingest: JSONL {"pair_id", "question"}; questions are raw text
// and get the same surface tokenization as everything else.
inline std::unordered_map<std::string, std::vector<std::string>> load_natural_queries(
    const std::string& path) {
    std::unordered_map<std::string, std::vector<std::string>> out;
    for_each_jsonl(path, [&](size_t, const json& j) {
        out[j.at("pair_id").get<std::string>()] =
            split_tokens(j.at("question").get<std::string>());
    });
    return out;
}

inline std::vector<SamplePair> pair_all(const std::vector<ClozeSample>& cloze,
                                        NaturalSource source,
                                        const std::unordered_map<std::string,
                                                                 std::vector<std::string>>* ingest,
                                        PairingStats* stats) {
    PairingStats local;
    std::vector<SamplePair> out;
    out.reserve(cloze.size());
    for (const auto& c : cloze) {
        SamplePair p = pair_samples(c, source, ingest);
        ++local.pairs;
        if (p.natural)
            ++local.with_natural;
        else
            ++local.cloze_only;
        out.push_back(std::move(p));
    }
    if (ingest) {
        std::unordered_map<std::string, bool> known;
        for (const auto& c : cloze) known[c.pair_id] = true;
        for (const auto& [pid, _] : *ingest)
            if (!known.count(pid)) ++local.unknown_pair_ids;
    }
    if (stats) *stats = local;
    return out;
}

} // namespace mcross
