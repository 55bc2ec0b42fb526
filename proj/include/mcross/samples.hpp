#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcross/jsonl.hpp"
#include "mcross/text.hpp"

namespace mcross {

constexpr const char* kBlankToken = "[BLANK]";

struct ClozeSample {
    std::string pair_id;
    std::vector<std::string> query_tokens;   // exactly one [BLANK]
    std::vector<std::string> passage_tokens;
    std::vector<std::string> answer_tokens;
    int answer_start = 0; // passage token index
    int answer_end = 0;   // inclusive
};

struct NaturalSample {
    std::string pair_id;
    std::vector<std::string> query_tokens;   // no [BLANK]
    std::vector<std::string> passage_tokens;
    int answer_start = 0;
    int answer_end = 0;
};

struct SamplePair {
    std::string pair_id;
    ClozeSample cloze;
    std::optional<NaturalSample> natural;
};

// A single training/eval instance in query+passage+span form, used by
// fine-tuning and evaluation.
struct QASample {
    std::string id;
    std::vector<std::string> query_tokens;
    std::vector<std::string> passage_tokens;
    int answer_start = 0;
    int answer_end = 0;
    bool cloze = false;
};

inline int count_blanks(const std::vector<std::string>& toks) {
    int n = 0;
    for (const auto& t : toks)
        if (t == kBlankToken) ++n;
    return n;
}

inline void validate_cloze(const ClozeSample& c) {
    if (count_blanks(c.query_tokens) != 1)
        throw Error("cloze " + c.pair_id + ": query must contain exactly one [BLANK]");
    if (c.answer_start > c.answer_end || c.answer_start < 0 ||
        c.answer_end >= static_cast<int>(c.passage_tokens.size()))
        throw Error("cloze " + c.pair_id + ": answer span out of bounds");
    if (static_cast<size_t>(c.answer_end - c.answer_start + 1) != c.answer_tokens.size())
        throw Error("cloze " + c.pair_id + ": answer span length mismatch");
    for (int i = c.answer_start; i <= c.answer_end; ++i)
        if (lower_copy(c.passage_tokens[static_cast<size_t>(i)]) !=
            lower_copy(c.answer_tokens[static_cast<size_t>(i - c.answer_start)]))
            throw Error("cloze " + c.pair_id + ": passage span does not match answer tokens");
}

inline void validate_natural(const NaturalSample& n) {
    if (count_blanks(n.query_tokens) != 0)
        throw Error("natural " + n.pair_id + ": query must not contain [BLANK]");
    if (n.answer_start > n.answer_end || n.answer_start < 0 ||
        n.answer_end >= static_cast<int>(n.passage_tokens.size()))
        throw Error("natural " + n.pair_id + ": answer span out of bounds");
}

inline void validate_pair(const SamplePair& p) {
    validate_cloze(p.cloze);
    if (p.natural) {
        validate_natural(*p.natural);
        if (p.natural->passage_tokens != p.cloze.passage_tokens ||
            p.natural->answer_start != p.cloze.answer_start ||
            p.natural->answer_end != p.cloze.answer_end)
            throw Error("pair " + p.pair_id + ": cloze and natural must share passage and span");
    }
}

inline json to_json(const ClozeSample& c) {
    return json{{"pair_id", c.pair_id},
                {"query_tokens", c.query_tokens},
                {"passage_tokens", c.passage_tokens},
                {"answer_tokens", c.answer_tokens},
                {"answer_start", c.answer_start},
                {"answer_end", c.answer_end}};
}

inline json to_json(const NaturalSample& n) {
    return json{{"pair_id", n.pair_id},
                {"query_tokens", n.query_tokens},
                {"passage_tokens", n.passage_tokens},
                {"answer_start", n.answer_start},
                {"answer_end", n.answer_end}};
}

inline json to_json(const SamplePair& p) {
    json j{{"pair_id", p.pair_id}, {"cloze", to_json(p.cloze)}};
    j["natural"] = p.natural ? to_json(*p.natural) : json(nullptr);
    return j;
}

inline ClozeSample cloze_from_json(const json& j) {
    ClozeSample c;
    c.pair_id = j.at("pair_id").get<std::string>();
    c.query_tokens = j.at("query_tokens").get<std::vector<std::string>>();
    c.passage_tokens = j.at("passage_tokens").get<std::vector<std::string>>();
    c.answer_tokens = j.at("answer_tokens").get<std::vector<std::string>>();
    c.answer_start = j.at("answer_start").get<int>();
    c.answer_end = j.at("answer_end").get<int>();
    validate_cloze(c);
    return c;
}

inline NaturalSample natural_from_json(const json& j) {
    NaturalSample n;
    n.pair_id = j.at("pair_id").get<std::string>();
    n.query_tokens = j.at("query_tokens").get<std::vector<std::string>>();
    n.passage_tokens = j.at("passage_tokens").get<std::vector<std::string>>();
    n.answer_start = j.at("answer_start").get<int>();
    n.answer_end = j.at("answer_end").get<int>();
    validate_natural(n);
    return n;
}

inline SamplePair pair_from_json(const json& j) {
    SamplePair p;
    p.pair_id = j.at("pair_id").get<std::string>();
    p.cloze = cloze_from_json(j.at("cloze"));
    if (j.contains("natural") && !j.at("natural").is_null())
        p.natural = natural_from_json(j.at("natural"));
    validate_pair(p);
    return p;
}

inline std::vector<ClozeSample> load_cloze_samples(const std::string& path) {
    std::vector<ClozeSample> out;
    for_each_jsonl(path, [&](size_t, const json& j) { out.push_back(cloze_from_json(j)); });
    return out;
}

inline std::vector<SamplePair> load_sample_pairs(const std::string& path) {
    std::vector<SamplePair> out;
    for_each_jsonl(path, [&](size_t, const json& j) { out.push_back(pair_from_json(j)); });
    return out;
}

inline void save_cloze_samples(const std::vector<ClozeSample>& xs, const std::string& path) {
    JsonlWriter w(path);
    for (const auto& x : xs) w.write(to_json(x));
}

inline void save_sample_pairs(const std::vector<SamplePair>& xs, const std::string& path) {
    JsonlWriter w(path);
    for (const auto& x : xs) w.write(to_json(x));
}

inline json to_json(const QASample& q) {
    return json{{"id", q.id},
                {"query_tokens", q.query_tokens},
                {"passage_tokens", q.passage_tokens},
                {"answer_start", q.answer_start},
                {"answer_end", q.answer_end},
                {"cloze", q.cloze}};
}

inline QASample qa_from_json(const json& j) {
    QASample q;
    q.id = j.at("id").get<std::string>();
    q.query_tokens = j.at("query_tokens").get<std::vector<std::string>>();
    q.passage_tokens = j.at("passage_tokens").get<std::vector<std::string>>();
    q.answer_start = j.at("answer_start").get<int>();
    q.answer_end = j.at("answer_end").get<int>();
    q.cloze = j.value("cloze", false);
    if (q.answer_start < 0 || q.answer_start > q.answer_end ||
        q.answer_end >= static_cast<int>(q.passage_tokens.size()))
        throw Error("qa sample " + q.id + ": span out of bounds");
    return q;
}

inline std::vector<QASample> load_qa_samples(const std::string& path) {
    std::vector<QASample> out;
    for_each_jsonl(path, [&](size_t, const json& j) { out.push_back(qa_from_json(j)); });
    return out;
}

inline void save_qa_samples(const std::vector<QASample>& xs, const std::string& path) {
    JsonlWriter w(path);
    for (const auto& x : xs) w.write(to_json(x));
}

// Supervised view of the paired data: one QA sample per pair, preferring the
// natural question when the pair has one.
inline std::vector<QASample> qa_from_pairs(const std::vector<SamplePair>& pairs) {
    std::vector<QASample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        QASample q;
        q.id = p.pair_id;
        if (p.natural) {
            q.query_tokens = p.natural->query_tokens;
            q.cloze = false;
        } else {
            q.query_tokens = p.cloze.query_tokens;
            q.cloze = true;
        }
        q.passage_tokens = p.cloze.passage_tokens;
        q.answer_start = p.cloze.answer_start;
        q.answer_end = p.cloze.answer_end;
        out.push_back(std::move(q));
    }
    return out;
}

} // namespace mcross
