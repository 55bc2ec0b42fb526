#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcross/adam.hpp"
#include "mcross/encoder.hpp"
#include "mcross/jsonl.hpp"
#include "mcross/vocab.hpp"

namespace mcross {

constexpr char kCheckpointMagic[4] = {'M', 'C', 'R', 'S'};
constexpr uint32_t kCheckpointVersion = 1;

inline json encoder_config_to_json(const EncoderConfig& c) {
    return json{{"d", c.d},           {"layers", c.layers},   {"heads", c.heads},
                {"ffn_dim", c.ffn_dim}, {"max_seq", c.max_seq}, {"vocab_size", c.vocab_size},
                {"seed", c.seed}};
}

inline EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig c;
    c.d = j.at("d").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.max_seq = j.at("max_seq").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

namespace detail {

inline void put_u32(std::string& out, uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

inline uint32_t get_u32(const unsigned char* p) {
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(p[i]) << (8 * i);
    return x;
}

inline uint64_t get_u64(const unsigned char* p) {
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(p[i]) << (8 * i);
    return x;
}

// Raw IEEE bits, little-endian: the round-trip is exact by construction.
inline void put_doubles(std::string& out, const std::vector<double>& v) {
    for (double d : v) {
        uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u64(out, bits);
    }
}

inline void get_doubles(const unsigned char* p, std::vector<double>& v) {
    for (double& d : v) {
        uint64_t bits = get_u64(p);
        std::memcpy(&d, &bits, 8);
        p += 8;
    }
}

} // namespace detail

struct Checkpoint {
    EncoderParams params;
    Vocab vocab;
    std::optional<EncoderParams> slow;
    std::optional<OptimizerState> opt;
    json extra;
};

inline void save_checkpoint(const std::string& path, const EncoderParams& params,
                            const Vocab& vocab, const EncoderParams* slow = nullptr,
                            const OptimizerState* opt = nullptr,
                            const json& extra = json::object()) {
    json tensors = json::array();
    std::string payload;
    uint64_t offset = 0; // in doubles

    auto emit = [&](const std::string& name, const Tensor& t) {
        tensors.push_back(json{{"name", name}, {"shape", t.shape}, {"offset", offset}});
        detail::put_doubles(payload, t.v);
        offset += t.v.size();
    };
    params.for_each([&](const std::string& name, const Tensor& t) {
        if (!t.all_finite()) throw Error("save_checkpoint: non-finite values in " + name);
        emit(name, t);
    });
    if (slow)
        slow->for_each(
            [&](const std::string& name, const Tensor& t) { emit("slow." + name, t); });
    if (opt) {
        opt->m.for_each(
            [&](const std::string& name, const Tensor& t) { emit("adam_m." + name, t); });
        opt->v.for_each(
            [&](const std::string& name, const Tensor& t) { emit("adam_v." + name, t); });
    }

    json header;
    header["format_version"] = kCheckpointVersion;
    header["config"] = encoder_config_to_json(params.cfg);
    header["vocab"] = vocab.tokens();
    header["tensors"] = tensors;
    if (opt)
        header["optimizer"] =
            json{{"step", opt->step}, {"beta1", opt->beta1}, {"beta2", opt->beta2},
                 {"eps", opt->eps}};
    else
        header["optimizer"] = nullptr;
    header["extra"] = extra;
    std::string hs = header.dump();

    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, hs.size());
    out += hs;
    out += payload;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("save_checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("load_checkpoint: cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (data.size() < 16) throw Error("load_checkpoint: truncated file " + path);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
    if (std::memcmp(p, kCheckpointMagic, 4) != 0)
        throw Error("load_checkpoint: bad magic in " + path);
    uint32_t version = detail::get_u32(p + 4);
    if (version != kCheckpointVersion)
        throw Error("load_checkpoint: unsupported format version " + std::to_string(version));
    uint64_t hlen = detail::get_u64(p + 8);
    if (16 + hlen > data.size()) throw Error("load_checkpoint: truncated header in " + path);
    json header = json::parse(data.substr(16, hlen));

    Checkpoint ck;
    EncoderConfig cfg = encoder_config_from_json(header.at("config"));
    ck.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    ck.extra = header.value("extra", json::object());

    const unsigned char* payload = p + 16 + hlen;
    size_t payload_doubles = (data.size() - 16 - hlen) / 8;
    struct Entry {
        std::vector<int> shape;
        uint64_t offset;
    };
    std::map<std::string, Entry> index;
    for (const auto& t : header.at("tensors"))
        index[t.at("name").get<std::string>()] =
            Entry{t.at("shape").get<std::vector<int>>(), t.at("offset").get<uint64_t>()};

    auto fill = [&](const std::string& name, Tensor& t) {
        auto it = index.find(name);
        if (it == index.end()) throw Error("load_checkpoint: missing tensor " + name);
        if (it->second.shape != t.shape) throw Error("load_checkpoint: shape mismatch for " + name);
        if (it->second.offset + t.v.size() > payload_doubles)
            throw Error("load_checkpoint: tensor " + name + " extends past payload");
        detail::get_doubles(payload + it->second.offset * 8, t.v);
    };

    ck.params = make_zero_params(cfg);
    ck.params.for_each(fill);

    bool has_slow = index.count("slow.tok_emb") > 0;
    if (has_slow) {
        ck.slow = make_zero_params(cfg);
        ck.slow->for_each([&](const std::string& name, Tensor& t) { fill("slow." + name, t); });
    }
    if (!header.at("optimizer").is_null()) {
        OptimizerState opt(cfg);
        const json& oj = header.at("optimizer");
        opt.step = oj.at("step").get<long>();
        opt.beta1 = oj.at("beta1").get<double>();
        opt.beta2 = oj.at("beta2").get<double>();
        opt.eps = oj.at("eps").get<double>();
        opt.m.for_each([&](const std::string& name, Tensor& t) { fill("adam_m." + name, t); });
        opt.v.for_each([&](const std::string& name, Tensor& t) { fill("adam_v." + name, t); });
        ck.opt = std::move(opt);
    }
    return ck;
}

} // namespace mcross
