#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mcross/rng.hpp"
#include "mcross/sequence.hpp"
#include "mcross/tensor.hpp"

namespace mcross {

struct EncoderConfig {
    int d = 64;
    int layers = 2;
    int heads = 2;
    int ffn_dim = 128;
    int max_seq = 128;
    int vocab_size = 0; // set when the vocabulary is built
    uint64_t seed = 42;

    void validate() const {
        if (d <= 0 || layers <= 0 || heads <= 0 || ffn_dim <= 0) throw Error("bad encoder dims");
        if (d % heads != 0) throw Error("d must be divisible by heads");
        if (max_seq < 16) throw Error("max_seq must be >= 16");
        if (vocab_size < kNumSpecials) throw Error("vocab_size too small");
    }

    bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo; // attention, weights (d x d)
    Tensor ln1_g, ln1_b;
    Tensor w1, b1, w2, b2;                 // ffn, w1 (d x f), w2 (f x d)
    Tensor ln2_g, ln2_b;
};

// All trainable tensors of the encoder plus the two span-head linear layers.
// The same structure doubles as the gradient container.
struct EncoderParams {
    EncoderConfig cfg;
    Tensor tok_emb, pos_emb, seg_emb;
    Tensor lne_g, lne_b;
    std::vector<LayerParams> layers;
    Tensor w_start, b_start, w_end, b_end; // span head

    template <class F>
    void for_each(F&& f) {
        f("tok_emb", tok_emb);
        f("pos_emb", pos_emb);
        f("seg_emb", seg_emb);
        f("lne_g", lne_g);
        f("lne_b", lne_b);
        for (size_t l = 0; l < layers.size(); ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            auto& L = layers[l];
            f(p + "wq", L.wq); f(p + "bq", L.bq);
            f(p + "wk", L.wk); f(p + "bk", L.bk);
            f(p + "wv", L.wv); f(p + "bv", L.bv);
            f(p + "wo", L.wo); f(p + "bo", L.bo);
            f(p + "ln1_g", L.ln1_g); f(p + "ln1_b", L.ln1_b);
            f(p + "w1", L.w1); f(p + "b1", L.b1);
            f(p + "w2", L.w2); f(p + "b2", L.b2);
            f(p + "ln2_g", L.ln2_g); f(p + "ln2_b", L.ln2_b);
        }
        f("w_start", w_start);
        f("b_start", b_start);
        f("w_end", w_end);
        f("b_end", b_end);
    }

    template <class F>
    void for_each(F&& f) const {
        const_cast<EncoderParams*>(this)->for_each(
            [&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
    }

    size_t param_count() const {
        size_t n = 0;
        for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
        return n;
    }

    bool same_structure(const EncoderParams& o) const {
        if (layers.size() != o.layers.size()) return false;
        std::vector<const Tensor*> mine, theirs;
        for_each([&](const std::string&, const Tensor& t) { mine.push_back(&t); });
        o.for_each([&](const std::string&, const Tensor& t) { theirs.push_back(&t); });
        if (mine.size() != theirs.size()) return false;
        for (size_t i = 0; i < mine.size(); ++i)
            if (!mine[i]->same_shape(*theirs[i])) return false;
        return true;
    }
};

inline int span_head_param_count(int d) { return (d + 1) * 2; }

inline EncoderParams make_zero_params(const EncoderConfig& cfg) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    int d = cfg.d, f = cfg.ffn_dim;
    p.tok_emb = Tensor::zeros({cfg.vocab_size, d});
    p.pos_emb = Tensor::zeros({cfg.max_seq, d});
    p.seg_emb = Tensor::zeros({2, d});
    p.lne_g = Tensor::zeros({d});
    p.lne_b = Tensor::zeros({d});
    p.layers.resize(static_cast<size_t>(cfg.layers));
    for (auto& L : p.layers) {
        L.wq = Tensor::zeros({d, d}); L.bq = Tensor::zeros({d});
        L.wk = Tensor::zeros({d, d}); L.bk = Tensor::zeros({d});
        L.wv = Tensor::zeros({d, d}); L.bv = Tensor::zeros({d});
        L.wo = Tensor::zeros({d, d}); L.bo = Tensor::zeros({d});
        L.ln1_g = Tensor::zeros({d}); L.ln1_b = Tensor::zeros({d});
        L.w1 = Tensor::zeros({d, f}); L.b1 = Tensor::zeros({f});
        L.w2 = Tensor::zeros({f, d}); L.b2 = Tensor::zeros({d});
        L.ln2_g = Tensor::zeros({d}); L.ln2_b = Tensor::zeros({d});
    }
    p.w_start = Tensor::zeros({d});
    p.b_start = Tensor::zeros({1});
    p.w_end = Tensor::zeros({d});
    p.b_end = Tensor::zeros({1});
    return p;
}

// Truncated normal (sigma 0.02) for weights, zeros for biases, ones for
// layer-norm gains. Each tensor gets its own stream keyed by name, so the
// values do not depend on initialization order.
inline EncoderParams init_params(const EncoderConfig& cfg) {
    EncoderParams p = make_zero_params(cfg);
    p.for_each([&](const std::string& name, Tensor& t) {
        bool is_gain = name.size() >= 2 && name.compare(name.size() - 2, 2, "_g") == 0;
        bool is_bias = !is_gain && (name.find("_b") != std::string::npos ||
                                    name.find(".b") != std::string::npos ||
                                    name[0] == 'b');
        if (is_gain) {
            t.fill(1.0);
        } else if (is_bias) {
            t.fill(0.0);
        } else {
            auto rng = make_rng(cfg.seed, "init/" + name);
            for (double& x : t.v) x = draw_trunc_normal(rng, 0.02);
        }
    });
    return p;
}

constexpr double kLnEps = 1e-5;

struct LnCache {
    std::vector<double> mean, rstd; // per row
};

struct LayerCache {
    std::vector<double> x_in;             // S x d, layer input
    std::vector<double> q, k, v;          // S x d
    std::vector<double> att;              // heads x S x S, softmax probs
    std::vector<double> ctx;              // S x d, heads concatenated
    std::vector<double> attn_out;         // S x d, after wo
    std::vector<double> res1;             // x_in + attn_out
    LnCache ln1;
    std::vector<double> ln1_out;          // S x d
    std::vector<double> h1;               // S x f, pre-gelu
    std::vector<double> g1;               // S x f, gelu(h1)
    std::vector<double> ffn_out;          // S x d
    std::vector<double> res2;             // ln1_out + ffn_out
    LnCache ln2;
};

struct ForwardCache {
    TokenSequence seq;
    std::vector<double> x0;      // embedding sum S x d
    LnCache lne;
    std::vector<double> e_out;   // post-LN embeddings
    std::vector<LayerCache> layers;
    std::vector<double> h;       // final hidden states S x d
};

inline void layer_norm_forward(const double* x, const double* g, const double* b, double* out,
                               int rows, int d, LnCache& cache) {
    cache.mean.resize(static_cast<size_t>(rows));
    cache.rstd.resize(static_cast<size_t>(rows));
    for (int i = 0; i < rows; ++i) {
        const double* xr = x + static_cast<size_t>(i) * d;
        double m = 0.0;
        for (int j = 0; j < d; ++j) m += xr[j];
        m /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double dx = xr[j] - m;
            var += dx * dx;
        }
        var /= d;
        double r = 1.0 / std::sqrt(var + kLnEps);
        cache.mean[static_cast<size_t>(i)] = m;
        cache.rstd[static_cast<size_t>(i)] = r;
        double* orow = out + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = (xr[j] - m) * r * g[j] + b[j];
    }
}

inline void layer_norm_backward(const double* x, const double* g, const LnCache& cache,
                                const double* dy, double* dx, double* dg, double* db, int rows,
                                int d) {
    for (int i = 0; i < rows; ++i) {
        const double* xr = x + static_cast<size_t>(i) * d;
        const double* dyr = dy + static_cast<size_t>(i) * d;
        double* dxr = dx + static_cast<size_t>(i) * d;
        double m = cache.mean[static_cast<size_t>(i)];
        double r = cache.rstd[static_cast<size_t>(i)];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
            double xhat = (xr[j] - m) * r;
            double dxhat = dyr[j] * g[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dg[j] += dyr[j] * xhat;
            db[j] += dyr[j];
        }
        for (int j = 0; j < d; ++j) {
            double xhat = (xr[j] - m) * r;
            double dxhat = dyr[j] * g[j];
            dxr[j] += r * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d);
        }
    }
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779399461;
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// x[S x d] * w[d x n] + b -> out[S x n]
inline void linear_forward(const double* x, const Tensor& w, const Tensor& b, double* out, int S) {
    int d = w.rows(), n = w.cols();
    matmul(x, w.v.data(), out, S, d, n);
    for (int i = 0; i < S; ++i) {
        double* orow = out + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] += b.v[static_cast<size_t>(j)];
    }
}

inline void linear_backward(const double* x, const Tensor& w, const double* dy, double* dx,
                            Tensor& dw, Tensor& db, int S) {
    int d = w.rows(), n = w.cols();
    matmul_at(x, dy, dw.v.data(), S, d, n, true);
    for (int i = 0; i < S; ++i) {
        const double* dyr = dy + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) db.v[static_cast<size_t>(j)] += dyr[j];
    }
    if (dx) matmul_bt(dy, w.v.data(), dx, S, n, d, true);
}

// Deterministic full forward; [PAD] positions are masked out of attention as
// keys. Every row of H is produced, padded rows included.
inline void forward_encoder(const EncoderParams& p, const TokenSequence& seq,
                            ForwardCache& cache) {
    const EncoderConfig& cfg = p.cfg;
    int S = cfg.max_seq, d = cfg.d, H = cfg.heads, f = cfg.ffn_dim;
    int dk = d / H;
    if (seq.max_seq() != S) throw Error("forward_encoder: sequence length mismatch");
    for (int i = 0; i < S; ++i)
        if (seq.ids[static_cast<size_t>(i)] >= cfg.vocab_size)
            throw Error("forward_encoder: token id out of vocab range");

    cache.seq = seq;
    size_t sd = static_cast<size_t>(S) * d;
    cache.x0.assign(sd, 0.0);
    for (int i = 0; i < S; ++i) {
        int tok = seq.ids[static_cast<size_t>(i)];
        int seg = seq.segment(i);
        double* row = cache.x0.data() + static_cast<size_t>(i) * d;
        const double* te = p.tok_emb.v.data() + static_cast<size_t>(tok) * d;
        const double* pe = p.pos_emb.v.data() + static_cast<size_t>(i) * d;
        const double* se = p.seg_emb.v.data() + static_cast<size_t>(seg) * d;
        for (int j = 0; j < d; ++j) row[j] = te[j] + pe[j] + se[j];
    }
    cache.e_out.assign(sd, 0.0);
    layer_norm_forward(cache.x0.data(), p.lne_g.v.data(), p.lne_b.v.data(), cache.e_out.data(), S,
                       d, cache.lne);

    cache.layers.assign(p.layers.size(), LayerCache{});
    std::vector<double> cur = cache.e_out;
    double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    for (size_t l = 0; l < p.layers.size(); ++l) {
        const LayerParams& L = p.layers[l];
        LayerCache& C = cache.layers[l];
        C.x_in = std::move(cur);
        C.q.assign(sd, 0.0);
        C.k.assign(sd, 0.0);
        C.v.assign(sd, 0.0);
        linear_forward(C.x_in.data(), L.wq, L.bq, C.q.data(), S);
        linear_forward(C.x_in.data(), L.wk, L.bk, C.k.data(), S);
        linear_forward(C.x_in.data(), L.wv, L.bv, C.v.data(), S);

        C.att.assign(static_cast<size_t>(H) * S * S, 0.0);
        C.ctx.assign(sd, 0.0);
        for (int h = 0; h < H; ++h) {
            for (int i = 0; i < S; ++i) {
                const double* qi = C.q.data() + static_cast<size_t>(i) * d + h * dk;
                double* arow = C.att.data() + (static_cast<size_t>(h) * S + i) * S;
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < S; ++j) {
                    if (seq.marks[static_cast<size_t>(j)] == Mark::Pad) {
                        arow[j] = -std::numeric_limits<double>::infinity();
                        continue;
                    }
                    const double* kj = C.k.data() + static_cast<size_t>(j) * d + h * dk;
                    double s = dot(qi, kj, dk) * scale;
                    arow[j] = s;
                    if (s > mx) mx = s;
                }
                double denom = 0.0;
                for (int j = 0; j < S; ++j) {
                    double e = std::isinf(arow[j]) ? 0.0 : std::exp(arow[j] - mx);
                    arow[j] = e;
                    denom += e;
                }
                double* crow = C.ctx.data() + static_cast<size_t>(i) * d + h * dk;
                for (int j = 0; j < S; ++j) {
                    arow[j] /= denom;
                    if (arow[j] == 0.0) continue;
                    const double* vj = C.v.data() + static_cast<size_t>(j) * d + h * dk;
                    for (int c = 0; c < dk; ++c) crow[c] += arow[j] * vj[c];
                }
            }
        }

        C.attn_out.assign(sd, 0.0);
        linear_forward(C.ctx.data(), L.wo, L.bo, C.attn_out.data(), S);
        C.res1.assign(sd, 0.0);
        for (size_t i2 = 0; i2 < sd; ++i2) C.res1[i2] = C.x_in[i2] + C.attn_out[i2];
        C.ln1_out.assign(sd, 0.0);
        layer_norm_forward(C.res1.data(), L.ln1_g.v.data(), L.ln1_b.v.data(), C.ln1_out.data(), S,
                           d, C.ln1);

        size_t sf = static_cast<size_t>(S) * f;
        C.h1.assign(sf, 0.0);
        linear_forward(C.ln1_out.data(), L.w1, L.b1, C.h1.data(), S);
        C.g1.assign(sf, 0.0);
        for (size_t i2 = 0; i2 < sf; ++i2) C.g1[i2] = gelu(C.h1[i2]);
        C.ffn_out.assign(sd, 0.0);
        linear_forward(C.g1.data(), L.w2, L.b2, C.ffn_out.data(), S);
        C.res2.assign(sd, 0.0);
        for (size_t i2 = 0; i2 < sd; ++i2) C.res2[i2] = C.ln1_out[i2] + C.ffn_out[i2];

        cur.assign(sd, 0.0);
        layer_norm_forward(C.res2.data(), L.ln2_g.v.data(), L.ln2_b.v.data(), cur.data(), S, d,
                           C.ln2);
    }
    cache.h = p.layers.empty() ? cache.e_out : std::move(cur);
    for (double v2 : cache.h)
        if (!std::isfinite(v2)) throw Error("forward_encoder: non-finite output");
}

// Accumulates d(loss)/d(params) into grads given d(loss)/dH.
inline void backward_encoder(const EncoderParams& p, const ForwardCache& cache,
                             const std::vector<double>& dh, EncoderParams& grads) {
    const EncoderConfig& cfg = p.cfg;
    int S = cfg.max_seq, d = cfg.d, H = cfg.heads, f = cfg.ffn_dim;
    int dk = d / H;
    size_t sd = static_cast<size_t>(S) * d;
    double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    std::vector<double> dx = dh; // gradient flowing down, S x d

    for (int li = static_cast<int>(p.layers.size()) - 1; li >= 0; --li) {
        const LayerParams& L = p.layers[static_cast<size_t>(li)];
        const LayerCache& C = cache.layers[static_cast<size_t>(li)];
        LayerParams& G = grads.layers[static_cast<size_t>(li)];

        // ln2
        std::vector<double> dres2(sd, 0.0);
        layer_norm_backward(C.res2.data(), L.ln2_g.v.data(), C.ln2, dx.data(), dres2.data(),
                            G.ln2_g.v.data(), G.ln2_b.v.data(), S, d);
        // res2 = ln1_out + ffn_out
        std::vector<double> dln1_out = dres2;
        // ffn: w2
        size_t sf = static_cast<size_t>(S) * f;
        std::vector<double> dg1(sf, 0.0);
        linear_backward(C.g1.data(), L.w2, dres2.data(), dg1.data(), G.w2, G.b2, S);
        // gelu
        std::vector<double> dh1(sf, 0.0);
        for (size_t i = 0; i < sf; ++i) dh1[i] = dg1[i] * gelu_grad(C.h1[i]);
        // w1
        linear_backward(C.ln1_out.data(), L.w1, dh1.data(), dln1_out.data(), G.w1, G.b1, S);
        // ln1
        std::vector<double> dres1(sd, 0.0);
        layer_norm_backward(C.res1.data(), L.ln1_g.v.data(), C.ln1, dln1_out.data(), dres1.data(),
                            G.ln1_g.v.data(), G.ln1_b.v.data(), S, d);
        // res1 = x_in + attn_out
        std::vector<double> dx_in = dres1;
        // wo
        std::vector<double> dctx(sd, 0.0);
        linear_backward(C.ctx.data(), L.wo, dres1.data(), dctx.data(), G.wo, G.bo, S);
        // attention
        std::vector<double> dq(sd, 0.0), dk_(sd, 0.0), dv(sd, 0.0);
        for (int h = 0; h < H; ++h) {
            for (int i = 0; i < S; ++i) {
                const double* arow = C.att.data() + (static_cast<size_t>(h) * S + i) * S;
                const double* dcrow = dctx.data() + static_cast<size_t>(i) * d + h * dk;
                // d(ctx) -> d(att), d(v)
                double dot_da_a = 0.0;
                std::vector<double> da(static_cast<size_t>(S), 0.0);
                for (int j = 0; j < S; ++j) {
                    if (arow[j] == 0.0) continue;
                    const double* vj = C.v.data() + static_cast<size_t>(j) * d + h * dk;
                    double* dvj = dv.data() + static_cast<size_t>(j) * d + h * dk;
                    double daj = 0.0;
                    for (int c = 0; c < dk; ++c) {
                        daj += dcrow[c] * vj[c];
                        dvj[c] += dcrow[c] * arow[j];
                    }
                    da[static_cast<size_t>(j)] = daj;
                    dot_da_a += daj * arow[j];
                }
                // softmax backward -> d(scores)
                const double* qi = C.q.data() + static_cast<size_t>(i) * d + h * dk;
                double* dqi = dq.data() + static_cast<size_t>(i) * d + h * dk;
                for (int j = 0; j < S; ++j) {
                    double aj = arow[j];
                    if (aj == 0.0) continue;
                    double ds = aj * (da[static_cast<size_t>(j)] - dot_da_a) * scale;
                    const double* kj = C.k.data() + static_cast<size_t>(j) * d + h * dk;
                    double* dkj = dk_.data() + static_cast<size_t>(j) * d + h * dk;
                    for (int c = 0; c < dk; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
        linear_backward(C.x_in.data(), L.wq, dq.data(), dx_in.data(), G.wq, G.bq, S);
        linear_backward(C.x_in.data(), L.wk, dk_.data(), dx_in.data(), G.wk, G.bk, S);
        linear_backward(C.x_in.data(), L.wv, dv.data(), dx_in.data(), G.wv, G.bv, S);
        dx = std::move(dx_in);
    }

    // embedding layer norm
    std::vector<double> dx0(sd, 0.0);
    layer_norm_backward(cache.x0.data(), p.lne_g.v.data(), cache.lne, dx.data(), dx0.data(),
                        grads.lne_g.v.data(), grads.lne_b.v.data(), S, d);
    for (int i = 0; i < S; ++i) {
        int tok = cache.seq.ids[static_cast<size_t>(i)];
        int seg = cache.seq.segment(i);
        const double* row = dx0.data() + static_cast<size_t>(i) * d;
        double* te = grads.tok_emb.v.data() + static_cast<size_t>(tok) * d;
        double* pe = grads.pos_emb.v.data() + static_cast<size_t>(i) * d;
        double* se = grads.seg_emb.v.data() + static_cast<size_t>(seg) * d;
        for (int j = 0; j < d; ++j) {
            te[j] += row[j];
            pe[j] += row[j];
            se[j] += row[j];
        }
    }
}

} // namespace mcross
