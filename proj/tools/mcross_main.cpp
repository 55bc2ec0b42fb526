#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mcross/mcross.hpp"

namespace fs = std::filesystem;
using namespace mcross;

namespace {

// Single-line machine-parseable failures: "<CODE>: message" on stderr, fixed
// exit codes (2 usage/config/missing input, 1 runtime).
struct CliError {
    std::string code;
    std::string msg;
    int rc;
};

[[noreturn]] void die(const std::string& code, const std::string& msg, int rc) {
    throw CliError{code, msg, rc};
}

void require_file(const std::string& path) {
    if (path.empty() || !fs::exists(path)) die("E_IO", "cannot open " + path, 2);
}

std::string resolve_run_dir(const std::string& flag_value) {
    const char* env = std::getenv("MCROSS_RUN_DIR");
    if (env && *env) return env;
    return flag_value;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) die("E_IO", "cannot create run dir " + dir, 2);
}

Variant parse_variant(const std::string& s) {
    try {
        return variant_from_string(s);
    } catch (const Error& e) {
        die("E_USAGE", e.what(), 2);
    }
}

SimilarityKind parse_similarity(const std::string& s) {
    try {
        return similarity_from_string(s);
    } catch (const Error& e) {
        die("E_USAGE", e.what(), 2);
    }
}

SpanSupport parse_support(const std::string& s) {
    try {
        return span_support_from_string(s);
    } catch (const Error& e) {
        die("E_USAGE", e.what(), 2);
    }
}

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) die("E_IO", "cannot open " + path, 2);
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) die("E_CONFIG", "invalid JSON in " + path, 2);
    return j;
}

struct GenClozeArgs {
    std::string corpus, out, stats_path;
    uint64_t seed = 42;
    double k1 = 1.2, b = 0.75;
};

int cmd_gen_cloze(const GenClozeArgs& a) {
    require_file(a.corpus);
    std::vector<Document> corpus = load_corpus(a.corpus);
    PipelineStats stats;
    std::vector<ClozeSample> samples = generate_cloze_samples(corpus, a.seed, &stats, a.k1, a.b);
    save_cloze_samples(samples, a.out);
    json out = stats.to_json();
    out["output"] = a.out;
    std::cout << out.dump() << "\n";
    if (!a.stats_path.empty()) {
        std::ofstream f(a.stats_path, std::ios::trunc);
        f << out.dump(2) << "\n";
    }
    return 0;
}

struct PairArgs {
    std::string cloze, out, natural;
    std::string source; // empty: ingest when --natural given, template otherwise
};

int cmd_pair(const PairArgs& a) {
    require_file(a.cloze);
    std::string mode = a.source.empty() ? (a.natural.empty() ? "template" : "ingest") : a.source;
    NaturalSource source;
    if (mode == "template") {
        source = NaturalSource::Template;
    } else if (mode == "ingest") {
        source = NaturalSource::Ingest;
    } else {
        die("E_USAGE", "unknown --source " + mode + " (valid: template, ingest)", 2);
    }
    std::optional<std::unordered_map<std::string, std::vector<std::string>>> questions;
    if (source == NaturalSource::Ingest) {
        if (a.natural.empty()) die("E_USAGE", "--source ingest requires --natural", 2);
        require_file(a.natural);
        questions = load_natural_queries(a.natural);
    }
    std::vector<ClozeSample> cloze = load_cloze_samples(a.cloze);
    PairingStats stats;
    std::vector<SamplePair> pairs =
        pair_all(cloze, source, questions ? &*questions : nullptr, &stats);
    save_sample_pairs(pairs, a.out);
    json out = stats.to_json();
    out["output"] = a.out;
    std::cout << out.dump() << "\n";
    return 0;
}

struct PretrainArgs {
    std::string pairs, run_dir = "runs/pretrain", config_path;
    bool paper_scale = false, dump_queues = false;
    // encoder overrides
    std::optional<int> d, layers, heads, ffn_dim;
    int vocab_cap = 0;
    // train overrides (only applied when the flag was passed)
    std::optional<std::string> variant, similarity, support;
    std::optional<long> steps, checkpoint_every;
    std::optional<int> batch, max_seq;
    std::optional<double> lr, momentum, lambda_moco, tau;
    std::optional<uint64_t> seed;
    std::optional<size_t> queue_capacity, min_negatives;
    std::optional<bool> include_positive;
};

int cmd_pretrain(const PretrainArgs& a) {
    require_file(a.pairs);

    TrainConfig cfg;
    EncoderConfig ecfg;
    if (!a.config_path.empty()) {
        json file = load_json_file(a.config_path);
        if (file.contains("train")) cfg = train_config_from_json(file.at("train"));
        if (file.contains("encoder")) {
            const json& e = file.at("encoder");
            if (e.contains("d")) ecfg.d = e.at("d").get<int>();
            if (e.contains("layers")) ecfg.layers = e.at("layers").get<int>();
            if (e.contains("heads")) ecfg.heads = e.at("heads").get<int>();
            if (e.contains("ffn_dim")) ecfg.ffn_dim = e.at("ffn_dim").get<int>();
        }
    }
    if (a.paper_scale) apply_paper_scale(cfg);
    if (a.variant) cfg.variant = parse_variant(*a.variant);
    if (a.similarity) cfg.similarity = parse_similarity(*a.similarity);
    if (a.support) cfg.support = parse_support(*a.support);
    if (a.steps) cfg.total_steps = *a.steps;
    if (a.batch) cfg.pretrain_batch = *a.batch;
    if (a.max_seq) cfg.max_seq = *a.max_seq;
    if (a.lr) cfg.lr = *a.lr;
    if (a.momentum) cfg.m = *a.momentum;
    if (a.lambda_moco) cfg.lambda_moco = *a.lambda_moco;
    if (a.tau) cfg.tau = *a.tau;
    if (a.seed) cfg.seed = *a.seed;
    if (a.queue_capacity) cfg.queue_capacity = *a.queue_capacity;
    if (a.min_negatives) cfg.min_negatives = *a.min_negatives;
    if (a.include_positive) cfg.include_positive = *a.include_positive;
    if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
    if (a.d) ecfg.d = *a.d;
    if (a.layers) ecfg.layers = *a.layers;
    if (a.heads) ecfg.heads = *a.heads;
    if (a.ffn_dim) ecfg.ffn_dim = *a.ffn_dim;
    try {
        cfg.validate();
    } catch (const Error& e) {
        die("E_CONFIG", e.what(), 2);
    }

    std::string run_dir = resolve_run_dir(a.run_dir);
    ensure_dir(run_dir);

    std::vector<SamplePair> pairs = load_sample_pairs(a.pairs);
    Vocab vocab = build_vocab(pairs, a.vocab_cap);
    ecfg.max_seq = cfg.max_seq;
    ecfg.vocab_size = vocab.size();
    ecfg.seed = cfg.seed;
    try {
        ecfg.validate();
    } catch (const Error& e) {
        die("E_CONFIG", e.what(), 2);
    }

    PrepareStats pstats;
    std::vector<PreparedPair> prepared = prepare_pairs(pairs, vocab, cfg.max_seq, &pstats);
    if (prepared.empty()) die("E_DATA", "no usable pairs after preparation", 2);

    RunManifest manifest;
    manifest.config =
        json{{"train", train_config_to_json(cfg)}, {"encoder", encoder_config_to_json(ecfg)}};
    manifest.revision = source_revision();
    manifest.seed = cfg.seed;
    manifest.data_digests[a.pairs] = hex64(digest_file(a.pairs));
    manifest.started_at = now_iso8601();
    manifest.write(run_dir + "/manifest.json");

    Trainer trainer(ecfg, cfg);
    JsonlWriter metrics(run_dir + "/metrics.jsonl");
    long report_every = std::max<long>(1, cfg.total_steps / 20);
    double last_loss = 0.0;
    run_pretrain(trainer, prepared, &metrics, [&](const StepReport& r) {
        last_loss = r.loss;
        if (r.step % report_every == 0 || r.step + 1 == cfg.total_steps)
            std::cerr << "step " << r.step << "/" << cfg.total_steps << " loss " << r.loss
                      << " queue " << r.queue_len << "\n";
        if (cfg.checkpoint_every > 0 && (r.step + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(run_dir + "/checkpoint_step_" + std::to_string(r.step + 1) + ".bin",
                            trainer.fast, vocab, nullptr, nullptr,
                            json{{"step", r.step + 1}});
        }
    });
    metrics.flush();

    VariantWiring w = wiring_for(cfg.variant, cfg.lambda_moco);
    std::string ck_path = run_dir + "/checkpoint.bin";
    save_checkpoint(ck_path, trainer.fast, vocab,
                    (w.moco || w.moco_reverse) ? &trainer.moco.slow : nullptr, &trainer.opt,
                    manifest.config);

    if (a.dump_queues) {
        JsonlWriter qw(run_dir + "/queues.jsonl");
        dump_queue(qw, "natural", trainer.moco.queue_natural);
        dump_queue(qw, "cloze", trainer.moco.queue_cloze);
    }

    manifest.finished_at = now_iso8601();
    manifest.write(run_dir + "/manifest.json");

    json summary{{"steps", trainer.step},
                 {"final_loss", last_loss},
                 {"checkpoint", ck_path},
                 {"pairs_kept", pstats.kept},
                 {"pairs_dropped", pstats.dropped_gold_truncated},
                 {"natural_dropped", pstats.natural_dropped}};
    std::cout << summary.dump() << "\n";
    return 0;
}

struct FinetuneArgs {
    std::string checkpoint, data, run_dir = "runs/finetune";
    long epochs = 1, max_steps = 0;
    int batch = 8;
    double lr = 1e-4;
    uint64_t seed = 42;
    std::string support = "passage_only";
};

int cmd_finetune(const FinetuneArgs& a) {
    require_file(a.checkpoint);
    require_file(a.data);
    if (a.epochs < 0) die("E_USAGE", "--epochs must be >= 0", 2);
    Checkpoint ck = load_checkpoint(a.checkpoint);

    std::vector<QASample> qa = load_qa_samples(a.data);
    size_t dropped = 0;
    std::vector<PreparedQA> prepared = prepare_qa(qa, ck.vocab, ck.params.cfg.max_seq, &dropped);
    if (prepared.empty()) die("E_DATA", "no usable samples after preparation", 2);

    std::string run_dir = resolve_run_dir(a.run_dir);
    ensure_dir(run_dir);

    FinetuneConfig fcfg;
    fcfg.batch = a.batch;
    fcfg.epochs = a.epochs;
    fcfg.max_steps = a.max_steps;
    fcfg.lr = a.lr;
    fcfg.seed = a.seed;
    fcfg.support = parse_support(a.support);

    RunManifest manifest;
    manifest.config = json{{"finetune",
                            json{{"batch", fcfg.batch},
                                 {"epochs", fcfg.epochs},
                                 {"max_steps", fcfg.max_steps},
                                 {"lr", fcfg.lr},
                                 {"seed", fcfg.seed},
                                 {"support", to_string(fcfg.support)}}},
                           {"encoder", encoder_config_to_json(ck.params.cfg)}};
    manifest.revision = source_revision();
    manifest.seed = fcfg.seed;
    manifest.data_digests[a.data] = hex64(digest_file(a.data));
    manifest.started_at = now_iso8601();
    manifest.write(run_dir + "/manifest.json");

    OptimizerState opt(ck.params.cfg);
    JsonlWriter metrics(run_dir + "/metrics.jsonl");
    long steps = finetune(ck.params, opt, prepared, fcfg, &metrics, [&](long epoch) {
        save_checkpoint(run_dir + "/checkpoint_epoch_" + std::to_string(epoch + 1) + ".bin",
                        ck.params, ck.vocab, nullptr, nullptr, json{{"epoch", epoch + 1}});
    });
    metrics.flush();

    std::string ck_path = run_dir + "/checkpoint.bin";
    save_checkpoint(ck_path, ck.params, ck.vocab, nullptr, &opt, manifest.config);
    manifest.finished_at = now_iso8601();
    manifest.write(run_dir + "/manifest.json");

    json summary{{"steps", steps}, {"checkpoint", ck_path}, {"dropped", dropped}};
    std::cout << summary.dump() << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint, data, out, per_sample;
    std::string mode = "zero-shot";
    int max_answer_len = 30, stride = 128;
    std::optional<int> max_seq;
};

int cmd_eval(const EvalArgs& a) {
    require_file(a.checkpoint);
    require_file(a.data);
    if (a.mode != "zero-shot" && a.mode != "supervised")
        die("E_USAGE", "unknown --mode " + a.mode + " (valid: zero-shot, supervised)", 2);
    Checkpoint ck = load_checkpoint(a.checkpoint);
    if (a.max_seq && *a.max_seq != ck.params.cfg.max_seq)
        die("E_CONFIG",
            "--max-seq " + std::to_string(*a.max_seq) + " conflicts with checkpoint max_seq " +
                std::to_string(ck.params.cfg.max_seq),
            2);

    // Accept either the eval schema (question/passage/answers strings) or the
    // QA sample schema this pipeline produces; sniff the first record.
    std::vector<EvalSample> dataset;
    {
        std::ifstream probe(a.data);
        std::string first;
        std::getline(probe, first);
        if (first.find("\"query_tokens\"") != std::string::npos) {
            for (const auto& q : load_qa_samples(a.data))
                dataset.push_back(eval_sample_from_qa(q));
        } else {
            dataset = load_eval_samples(a.data);
        }
    }
    EvalConfig cfg;
    cfg.max_answer_len = a.max_answer_len;
    cfg.stride = a.stride;
    EvalReport report = evaluate_dataset(ck.params, ck.vocab, dataset, cfg);

    json out{{"f1", report.f1}, {"em", report.em}, {"n", report.n}, {"mode", a.mode}};
    if (!a.out.empty()) {
        std::ofstream f(a.out, std::ios::trunc);
        if (!f) die("E_IO", "cannot write " + a.out, 2);
        f << out.dump(2) << "\n";
    }
    if (!a.per_sample.empty()) {
        std::ofstream f(a.per_sample, std::ios::trunc);
        if (!f) die("E_IO", "cannot write " + a.per_sample, 2);
        f << "id,f1,em,prediction\n";
        for (const auto& s : report.per_sample) {
            std::string quoted = s.pred;
            size_t pos = 0;
            while ((pos = quoted.find('"', pos)) != std::string::npos) {
                quoted.insert(pos, 1, '"');
                pos += 2;
            }
            f << s.id << "," << s.f1 << "," << s.em << ",\"" << quoted << "\"\n";
        }
    }
    std::cout << out.dump() << "\n";
    return 0;
}

struct DecodeArgs {
    std::string checkpoint, question, passage;
    int max_answer_len = 30, stride = 128;
};

int cmd_decode(const DecodeArgs& a) {
    require_file(a.checkpoint);
    Checkpoint ck = load_checkpoint(a.checkpoint);
    EvalConfig cfg;
    cfg.max_answer_len = a.max_answer_len;
    cfg.stride = a.stride;
    Prediction p = predict_answer(ck.params, ck.vocab, "cli", split_tokens(a.question),
                                  split_tokens(a.passage), cfg);
    std::cout << json{{"text", p.text}, {"st", p.st}, {"en", p.en}, {"joint", p.joint}}.dump()
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Momentum-contrastive pre-training for extractive QA"};
    app.require_subcommand(1);

    GenClozeArgs gen;
    auto* sub_gen = app.add_subcommand("gen-cloze", "Generate cloze samples from a corpus");
    sub_gen->add_option("--corpus", gen.corpus, "Corpus JSONL")->required();
    sub_gen->add_option("--out", gen.out, "Output cloze JSONL")->required();
    sub_gen->add_option("--stats", gen.stats_path, "Write stats JSON here too");
    sub_gen->add_option("--seed", gen.seed, "Master seed");
    sub_gen->add_option("--k1", gen.k1, "BM25 k1");
    sub_gen->add_option("--b", gen.b, "BM25 b");

    PairArgs pair;
    auto* sub_pair = app.add_subcommand("pair", "Attach natural partners to cloze samples");
    sub_pair->add_option("--cloze", pair.cloze, "Cloze JSONL")->required();
    sub_pair->add_option("--out", pair.out, "Output pairs JSONL")->required();
    sub_pair->add_option("--natural", pair.natural, "Natural questions JSONL (implies ingest)");
    sub_pair->add_option("--source", pair.source, "template | ingest");

    PretrainArgs pre;
    auto* sub_pre = app.add_subcommand("pretrain", "Contrastive pre-training");
    sub_pre->add_option("--pairs", pre.pairs, "Paired samples JSONL")->required();
    sub_pre->add_option("--run-dir", pre.run_dir, "Run directory");
    sub_pre->add_option("--config", pre.config_path, "Config JSON file");
    sub_pre->add_flag("--paper-scale", pre.paper_scale, "Paper-scale hyperparameters");
    sub_pre->add_option("--variant", pre.variant, "uni | bi | no-moco | sspt | sspt-natural");
    sub_pre->add_option("--similarity", pre.similarity, "neg_kl | cosine");
    sub_pre->add_option("--support", pre.support, "passage_only | full_sequence");
    sub_pre->add_option("--steps", pre.steps, "Total optimizer steps");
    sub_pre->add_option("--batch", pre.batch, "Batch size");
    sub_pre->add_option("--max-seq", pre.max_seq, "Sequence length");
    sub_pre->add_option("--lr", pre.lr, "Learning rate");
    sub_pre->add_option("--momentum", pre.momentum, "EMA momentum m");
    sub_pre->add_option("--lambda", pre.lambda_moco, "MoCo loss ratio");
    sub_pre->add_option("--tau", pre.tau, "InfoNCE temperature");
    sub_pre->add_option("--seed", pre.seed, "Master seed");
    sub_pre->add_option("--queue", pre.queue_capacity, "Queue capacity");
    sub_pre->add_option("--min-negatives", pre.min_negatives, "Cold-start threshold");
    sub_pre->add_option("--include-positive", pre.include_positive,
                        "Add the positive to the InfoNCE denominator");
    sub_pre->add_option("--checkpoint-every", pre.checkpoint_every, "Periodic checkpoints");
    sub_pre->add_option("--d", pre.d, "Hidden size");
    sub_pre->add_option("--layers", pre.layers, "Encoder layers");
    sub_pre->add_option("--heads", pre.heads, "Attention heads");
    sub_pre->add_option("--ffn-dim", pre.ffn_dim, "Feed-forward size");
    sub_pre->add_option("--vocab-cap", pre.vocab_cap, "Vocabulary cap (0 = none)");
    sub_pre->add_flag("--dump-queues", pre.dump_queues, "Dump queue state to queues.jsonl");

    FinetuneArgs ft;
    auto* sub_ft = app.add_subcommand("finetune", "Supervised fine-tuning");
    sub_ft->add_option("--checkpoint", ft.checkpoint, "Input checkpoint")->required();
    sub_ft->add_option("--data", ft.data, "QA samples JSONL")->required();
    sub_ft->add_option("--run-dir", ft.run_dir, "Run directory");
    sub_ft->add_option("--epochs", ft.epochs, "Epochs");
    sub_ft->add_option("--max-steps", ft.max_steps, "Step cap (0 = none)");
    sub_ft->add_option("--batch", ft.batch, "Batch size");
    sub_ft->add_option("--lr", ft.lr, "Learning rate");
    sub_ft->add_option("--seed", ft.seed, "Shuffle seed");
    sub_ft->add_option("--support", ft.support, "passage_only | full_sequence");

    EvalArgs ev;
    auto* sub_ev = app.add_subcommand("eval", "F1/EM evaluation");
    sub_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
    sub_ev->add_option("--data", ev.data, "Eval JSONL")->required();
    sub_ev->add_option("--mode", ev.mode, "zero-shot | supervised");
    sub_ev->add_option("--out", ev.out, "Report JSON path");
    sub_ev->add_option("--per-sample", ev.per_sample, "Per-sample CSV path");
    sub_ev->add_option("--max-answer-len", ev.max_answer_len, "Answer length cap");
    sub_ev->add_option("--stride", ev.stride, "Sliding-window stride");
    sub_ev->add_option("--max-seq", ev.max_seq, "Must match the checkpoint");

    DecodeArgs dec;
    auto* sub_dec = app.add_subcommand("decode", "Decode one question/passage");
    sub_dec->add_option("--checkpoint", dec.checkpoint, "Checkpoint")->required();
    sub_dec->add_option("--question", dec.question, "Question text")->required();
    sub_dec->add_option("--passage", dec.passage, "Passage text")->required();
    sub_dec->add_option("--max-answer-len", dec.max_answer_len, "Answer length cap");
    sub_dec->add_option("--stride", dec.stride, "Sliding-window stride");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "E_USAGE: " << e.what() << "\n";
        return 2;
    }

    try {
        if (sub_gen->parsed()) return cmd_gen_cloze(gen);
        if (sub_pair->parsed()) return cmd_pair(pair);
        if (sub_pre->parsed()) return cmd_pretrain(pre);
        if (sub_ft->parsed()) return cmd_finetune(ft);
        if (sub_ev->parsed()) return cmd_eval(ev);
        if (sub_dec->parsed()) return cmd_decode(dec);
    } catch (const CliError& e) {
        std::cerr << e.code << ": " << e.msg << "\n";
        return e.rc;
    } catch (const Error& e) {
        std::cerr << "E_RUN: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "E_INTERNAL: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
