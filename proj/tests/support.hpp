#pragma once

// Synthetic data builders shared by the unit and acceptance tests. The task
// family is deliberately mechanical: each passage plants one entity token
// directly after a marker token, the query names the marker, and the answer
// is the entity. Small closed vocabularies keep the mapping learnable at toy
// model sizes.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mcross/mcross.hpp"

namespace testsupport {

using namespace mcross;

struct WorldConfig {
    int n_markers = 10;
    int n_entities = 30;
    int n_fillers = 20;
    int passage_len = 12;
};

inline std::vector<SamplePair> make_marker_pairs(int n, uint64_t seed, WorldConfig wc = {}) {
    auto rng = make_rng(seed, "marker-pairs");
    std::vector<ClozeSample> cloze;
    cloze.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::string marker = "mk" + std::to_string(draw_index(rng, static_cast<size_t>(wc.n_markers)));
        std::string entity = "ent" + std::to_string(draw_index(rng, static_cast<size_t>(wc.n_entities)));
        // answer sits at pos, marker at pos-1
        int pos = 1 + static_cast<int>(draw_index(rng, static_cast<size_t>(wc.passage_len - 1)));
        ClozeSample c;
        c.pair_id = "pair" + std::to_string(i);
        for (int j = 0; j < wc.passage_len; ++j)
            c.passage_tokens.push_back("fl" +
                                       std::to_string(draw_index(rng, static_cast<size_t>(wc.n_fillers))));
        c.passage_tokens[static_cast<size_t>(pos - 1)] = marker;
        c.passage_tokens[static_cast<size_t>(pos)] = entity;
        c.query_tokens = {kBlankToken, "sits", "beside", marker};
        c.answer_tokens = {entity};
        c.answer_start = pos;
        c.answer_end = pos;
        cloze.push_back(std::move(c));
    }
    return pair_all(cloze, NaturalSource::Template, nullptr, nullptr);
}

// Harder two-site variant: each passage plants two marker/entity sites and
// the query picks one. The cloze query names the marker; the natural query
// names only a paraphrase token bound 1:1 to that marker, never the marker
// itself. Reading the natural view therefore requires training on natural
// questions, which cloze-only pre-training never provides.
inline std::vector<SamplePair> make_paraphrase_pairs(int n, uint64_t seed, WorldConfig wc = {}) {
    auto rng = make_rng(seed, "paraphrase-pairs");
    std::vector<SamplePair> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        size_t ma = draw_index(rng, static_cast<size_t>(wc.n_markers));
        size_t mb = draw_index(rng, static_cast<size_t>(wc.n_markers - 1));
        if (mb >= ma) ++mb; // distinct markers, else the cloze query is ambiguous
        std::string ea = "ent" + std::to_string(draw_index(rng, static_cast<size_t>(wc.n_entities)));
        std::string eb = "ent" + std::to_string(draw_index(rng, static_cast<size_t>(wc.n_entities)));
        int half = wc.passage_len / 2;
        int pa = 1 + static_cast<int>(draw_index(rng, static_cast<size_t>(half - 1)));
        int pb = half + 1 + static_cast<int>(draw_index(rng, static_cast<size_t>(half - 1)));

        std::vector<std::string> passage;
        for (int j = 0; j < wc.passage_len; ++j)
            passage.push_back("fl" + std::to_string(draw_index(rng, static_cast<size_t>(wc.n_fillers))));
        passage[static_cast<size_t>(pa - 1)] = "mk" + std::to_string(ma);
        passage[static_cast<size_t>(pa)] = ea;
        passage[static_cast<size_t>(pb - 1)] = "mk" + std::to_string(mb);
        passage[static_cast<size_t>(pb)] = eb;

        bool first = draw_index(rng, 2) == 0;
        size_t m = first ? ma : mb;
        int pos = first ? pa : pb;

        SamplePair p;
        p.pair_id = "ppair" + std::to_string(i);
        p.cloze.pair_id = p.pair_id;
        p.cloze.passage_tokens = passage;
        p.cloze.query_tokens = {kBlankToken, "sits", "beside", "mk" + std::to_string(m)};
        p.cloze.answer_tokens = {first ? ea : eb};
        p.cloze.answer_start = pos;
        p.cloze.answer_end = pos;

        NaturalSample nat;
        nat.pair_id = p.pair_id;
        // longer than the cloze query on purpose: the two views then disagree
        // already at init (shifted passage positions), like real question
        // pairs, and only training can close that gap
        nat.query_tokens = {"what", "sits", "beside", "pp" + std::to_string(m),
                            "in",   "the",  "story"};
        nat.passage_tokens = passage;
        nat.answer_start = pos;
        nat.answer_end = pos;
        p.natural = std::move(nat);
        out.push_back(std::move(p));
    }
    return out;
}

// Vocabulary covering every surface the marker worlds can emit, so train and
// held-out splits share one id space.
inline Vocab make_marker_vocab(WorldConfig wc = {}) {
    Vocab v;
    for (int i = 0; i < wc.n_markers; ++i) v.add("mk" + std::to_string(i));
    for (int i = 0; i < wc.n_markers; ++i) v.add("pp" + std::to_string(i));
    for (int i = 0; i < wc.n_entities; ++i) v.add("ent" + std::to_string(i));
    for (int i = 0; i < wc.n_fillers; ++i) v.add("fl" + std::to_string(i));
    for (const char* t : {"sits", "beside", "what", "in", "the", "story"}) v.add(t);
    return v;
}

inline EncoderConfig small_encoder(int d, int layers, int heads, int ffn, int max_seq,
                                   int vocab_size, uint64_t seed) {
    EncoderConfig e;
    e.d = d;
    e.layers = layers;
    e.heads = heads;
    e.ffn_dim = ffn;
    e.max_seq = max_seq;
    e.vocab_size = vocab_size;
    e.seed = seed;
    return e;
}

// Scratch directory under the build tree; wiped per call site name.
inline std::string scratch_dir(const std::string& name) {
    namespace fs = std::filesystem;
    fs::path p = fs::temp_directory_path() / ("mcross_tests_" + name);
    std::error_code ec;
    fs::remove_all(p, ec);
    fs::create_directories(p);
    return p.string();
}

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc);
    f << content;
}

inline std::string read_text(const std::string& path) {
    std::ifstream f(path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Three-paragraph corpus with hand-computed retrieval scores; the numbers in
// the tests were evaluated offline with a high-precision reimplementation of
// the scoring formula.
inline std::vector<Document> bm25_corpus() {
    Document d1;
    d1.id = "d1";
    d1.title = "one";
    Paragraph p0;
    p0.doc_id = "d1";
    p0.index = 0;
    p0.text = "Marie Curie discovered radium in Paris";
    p0.sentences = {{0, static_cast<int>(p0.text.size())}};
    Paragraph p1;
    p1.doc_id = "d1";
    p1.index = 1;
    p1.text = "radium is a metal and Marie Curie studied radium carefully";
    p1.sentences = {{0, static_cast<int>(p1.text.size())}};
    d1.paragraphs = {p0, p1};
    Document d2;
    d2.id = "d2";
    d2.title = "two";
    Paragraph q0;
    q0.doc_id = "d2";
    q0.index = 0;
    q0.text = "Marie Curie won two Nobel prizes in Paris France";
    q0.sentences = {{0, static_cast<int>(q0.text.size())}};
    d2.paragraphs = {q0};
    return {d1, d2};
}

// Small natural-language corpus for end-to-end pipeline runs: every entity
// appears in at least two paragraphs so retrieval can find a supporting
// passage outside the source paragraph.
inline std::string pipeline_corpus_jsonl() {
    json d1{{"id", "doc1"},
            {"title", "physics"},
            {"paragraphs",
             {"Marie Curie discovered radium. later she isolated polonium with care.",
              "the element radium glows faintly. Marie Curie studied the glow for years."}}};
    json d2{{"id", "doc2"},
            {"title", "sport"},
            {"paragraphs",
             {"the Boston Celtics won the title. fans cheered in the streets.",
              "history remembers the Boston Celtics and their first title run."}}};
    return d1.dump() + "\n" + d2.dump() + "\n";
}

} // namespace testsupport
