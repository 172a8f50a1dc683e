// sscsr - 1-D residual network over I/Q sequences with hand-written
// reverse-mode differentiation.
//
// Topology: stem conv (stride 2) -> BN -> ReLU, then one residual stage per
// entry of channels_per_stage. The first block of each stage downsamples by 2
// and widens via a strided 1-tap skip projection; the remaining blocks of the
// stage keep shape. All 3-tap convolutions are separable
// (depthwise-then-pointwise). Head: global average pooling -> dense -> softmax.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sscsr/errors.hpp"
#include "sscsr/rng.hpp"
#include "sscsr/tensor.hpp"

namespace sscsr {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

enum class Mode { TRAIN, EVAL };

using WeightMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

struct ArchConfig {
    int input_len = 1024;
    int input_channels = 2;
    int stem_kernels = 64;
    int stem_size = 7;
    int stem_stride = 2;
    int num_res_blocks = 1; // blocks per stage; the first one downsamples
    std::vector<int> channels_per_stage = {32, 64, 64};
    int num_classes = 4;

    void validate() const {
        if (input_len < 1) throw ConfigError("arch: input_len must be >= 1");
        if (input_channels < 1) throw ConfigError("arch: input_channels must be >= 1");
        if (stem_kernels < 1 || stem_size < 1 || stem_stride < 1) {
            throw ConfigError("arch: stem kernels/size/stride must be positive");
        }
        if (num_res_blocks < 1) throw ConfigError("arch: num_res_blocks must be >= 1");
        if (channels_per_stage.empty()) {
            throw ConfigError("arch: channels_per_stage must be non-empty");
        }
        for (int c : channels_per_stage) {
            if (c < 1) throw ConfigError("arch: stage widths must be positive");
        }
        if (num_classes < 2) throw ConfigError("arch: num_classes must be >= 2");
        // Every stage halves the length once; it must never hit zero.
        int len = conv_out_len(input_len, stem_size, stem_stride, stem_size / 2);
        for (std::size_t s = 0; s < channels_per_stage.size(); ++s) {
            len = conv_out_len(len, 3, 2, 1);
            if (len < 1) throw ConfigError("arch: input_len too short for stage count");
        }
    }

    static int conv_out_len(int len, int kernel, int stride, int pad) {
        return (len + 2 * pad - kernel) / stride + 1;
    }
};

struct ParamSet {
    WeightMap theta;
    WeightMap theta_ema;
    std::set<std::string> no_grad; // running stats: in EMA, not in Adam
};

namespace nn {

// y[b,co,t] = sum_{ci,k} w[co,ci,k] * x[b,ci,t*stride + k - pad]
inline Tensor conv1d_fwd(const Tensor& x, const Tensor& w, int stride, int pad) {
    const int B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
    const int Cout = w.dim(0), K = w.dim(2);
    if (w.dim(1) != Cin) throw ShapeError("conv1d: channel mismatch");
    const int Lout = ArchConfig::conv_out_len(L, K, stride, pad);
    Tensor y({B, Cout, Lout});
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            double* yr = &y.data[(static_cast<std::size_t>(b) * Cout + co) * Lout];
            for (int ci = 0; ci < Cin; ++ci) {
                const double* xr =
                    &x.data[(static_cast<std::size_t>(b) * Cin + ci) * L];
                const double* wr =
                    &w.data[(static_cast<std::size_t>(co) * Cin + ci) * K];
                for (int k = 0; k < K; ++k) {
                    const double wk = wr[k];
                    if (wk == 0.0) continue;
                    for (int t = 0; t < Lout; ++t) {
                        const int src = t * stride + k - pad;
                        if (src >= 0 && src < L) yr[t] += wk * xr[src];
                    }
                }
            }
        }
    }
    return y;
}

inline void conv1d_bwd(const Tensor& x, const Tensor& w, int stride, int pad,
                       const Tensor& dy, Tensor& dx, Tensor& dw) {
    const int B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
    const int Cout = w.dim(0), K = w.dim(2);
    const int Lout = dy.dim(2);
    dx = zeros_like(x);
    dw = zeros_like(w);
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            const double* dyr = &dy.data[(static_cast<std::size_t>(b) * Cout + co) * Lout];
            for (int ci = 0; ci < Cin; ++ci) {
                const double* xr = &x.data[(static_cast<std::size_t>(b) * Cin + ci) * L];
                double* dxr = &dx.data[(static_cast<std::size_t>(b) * Cin + ci) * L];
                const double* wr = &w.data[(static_cast<std::size_t>(co) * Cin + ci) * K];
                double* dwr = &dw.data[(static_cast<std::size_t>(co) * Cin + ci) * K];
                for (int k = 0; k < K; ++k) {
                    const double wk = wr[k];
                    double acc = 0.0;
                    for (int t = 0; t < Lout; ++t) {
                        const int src = t * stride + k - pad;
                        if (src < 0 || src >= L) continue;
                        acc += dyr[t] * xr[src];
                        dxr[src] += dyr[t] * wk;
                    }
                    dwr[k] += acc;
                }
            }
        }
    }
}

// Depthwise: y[b,c,t] = sum_k w[c,k] * x[b,c,t*stride + k - pad]
inline Tensor dwconv_fwd(const Tensor& x, const Tensor& w, int stride, int pad) {
    const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
    const int K = w.dim(1);
    if (w.dim(0) != C) throw ShapeError("dwconv: channel mismatch");
    const int Lout = ArchConfig::conv_out_len(L, K, stride, pad);
    Tensor y({B, C, Lout});
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double* xr = &x.data[(static_cast<std::size_t>(b) * C + c) * L];
            double* yr = &y.data[(static_cast<std::size_t>(b) * C + c) * Lout];
            const double* wr = &w.data[static_cast<std::size_t>(c) * K];
            for (int t = 0; t < Lout; ++t) {
                double acc = 0.0;
                for (int k = 0; k < K; ++k) {
                    const int src = t * stride + k - pad;
                    if (src >= 0 && src < L) acc += wr[k] * xr[src];
                }
                yr[t] = acc;
            }
        }
    }
    return y;
}

inline void dwconv_bwd(const Tensor& x, const Tensor& w, int stride, int pad,
                       const Tensor& dy, Tensor& dx, Tensor& dw) {
    const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
    const int K = w.dim(1);
    const int Lout = dy.dim(2);
    dx = zeros_like(x);
    dw = zeros_like(w);
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double* xr = &x.data[(static_cast<std::size_t>(b) * C + c) * L];
            double* dxr = &dx.data[(static_cast<std::size_t>(b) * C + c) * L];
            const double* dyr = &dy.data[(static_cast<std::size_t>(b) * C + c) * Lout];
            const double* wr = &w.data[static_cast<std::size_t>(c) * K];
            double* dwr = &dw.data[static_cast<std::size_t>(c) * K];
            for (int t = 0; t < Lout; ++t) {
                const double g = dyr[t];
                for (int k = 0; k < K; ++k) {
                    const int src = t * stride + k - pad;
                    if (src < 0 || src >= L) continue;
                    dwr[k] += g * xr[src];
                    dxr[src] += g * wr[k];
                }
            }
        }
    }
}

struct BnCache {
    Tensor xhat;
    std::vector<double> inv_std;
};

// Per-channel batch norm over (batch x length). TRAIN uses batch statistics
// and nudges the running estimates; EVAL reads the running estimates.
inline Tensor bn_fwd(const Tensor& x, const Tensor& scale, const Tensor& shift,
                     Tensor& rmean, Tensor& rvar, Mode mode, BnCache* cache) {
    const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
    Tensor y(x.shape);
    if (cache) {
        cache->xhat = Tensor(x.shape);
        cache->inv_std.assign(static_cast<std::size_t>(C), 0.0);
    }
    const double n = static_cast<double>(B) * L;
    for (int c = 0; c < C; ++c) {
        double mean, var;
        if (mode == Mode::TRAIN) {
            double s = 0.0, s2 = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* xr = &x.data[(static_cast<std::size_t>(b) * C + c) * L];
                for (int t = 0; t < L; ++t) {
                    s += xr[t];
                    s2 += xr[t] * xr[t];
                }
            }
            mean = s / n;
            var = std::max(0.0, s2 / n - mean * mean);
            rmean.data[static_cast<std::size_t>(c)] =
                (1.0 - kBnMomentum) * rmean.data[static_cast<std::size_t>(c)] +
                kBnMomentum * mean;
            rvar.data[static_cast<std::size_t>(c)] =
                (1.0 - kBnMomentum) * rvar.data[static_cast<std::size_t>(c)] +
                kBnMomentum * var;
        } else {
            mean = rmean.data[static_cast<std::size_t>(c)];
            var = rvar.data[static_cast<std::size_t>(c)];
        }
        const double inv_std = 1.0 / std::sqrt(var + kBnEps);
        const double g = scale.data[static_cast<std::size_t>(c)];
        const double h = shift.data[static_cast<std::size_t>(c)];
        if (cache) cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
        for (int b = 0; b < B; ++b) {
            const double* xr = &x.data[(static_cast<std::size_t>(b) * C + c) * L];
            double* yr = &y.data[(static_cast<std::size_t>(b) * C + c) * L];
            double* hr = cache
                             ? &cache->xhat.data[(static_cast<std::size_t>(b) * C + c) * L]
                             : nullptr;
            for (int t = 0; t < L; ++t) {
                const double xh = (xr[t] - mean) * inv_std;
                if (hr) hr[t] = xh;
                yr[t] = g * xh + h;
            }
        }
    }
    return y;
}

// Standard train-mode batch-norm backward through the batch statistics.
inline void bn_bwd(const BnCache& cache, const Tensor& scale, const Tensor& dy, Tensor& dx,
                   Tensor& dscale, Tensor& dshift) {
    const int B = dy.dim(0), C = dy.dim(1), L = dy.dim(2);
    dx = Tensor(dy.shape);
    dscale = Tensor({C});
    dshift = Tensor({C});
    const double n = static_cast<double>(B) * L;
    for (int c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < B; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
            for (int t = 0; t < L; ++t) {
                sum_dy += dy.data[base + t];
                sum_dy_xhat += dy.data[base + t] * cache.xhat.data[base + t];
            }
        }
        dscale.data[static_cast<std::size_t>(c)] = sum_dy_xhat;
        dshift.data[static_cast<std::size_t>(c)] = sum_dy;
        const double g = scale.data[static_cast<std::size_t>(c)];
        const double inv_std = cache.inv_std[static_cast<std::size_t>(c)];
        for (int b = 0; b < B; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
            for (int t = 0; t < L; ++t) {
                const double xh = cache.xhat.data[base + t];
                dx.data[base + t] =
                    g * inv_std / n *
                    (n * dy.data[base + t] - sum_dy - xh * sum_dy_xhat);
            }
        }
    }
}

inline Tensor relu_fwd(const Tensor& x) {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = std::max(0.0, x.data[i]);
    return y;
}

// Masks the upstream gradient by the sign of the pre-activation.
inline Tensor relu_bwd(const Tensor& pre, const Tensor& dy) {
    Tensor dx(dy.shape);
    for (std::size_t i = 0; i < dy.data.size(); ++i) {
        dx.data[i] = pre.data[i] > 0.0 ? dy.data[i] : 0.0;
    }
    return dx;
}

inline Tensor gap_fwd(const Tensor& x) {
    const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
    Tensor y({B, C});
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double* xr = &x.data[(static_cast<std::size_t>(b) * C + c) * L];
            double acc = 0.0;
            for (int t = 0; t < L; ++t) acc += xr[t];
            y.data[static_cast<std::size_t>(b) * C + c] = acc / L;
        }
    }
    return y;
}

inline Tensor gap_bwd(const Tensor& dy, int L) {
    const int B = dy.dim(0), C = dy.dim(1);
    Tensor dx({B, C, L});
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double g = dy.data[static_cast<std::size_t>(b) * C + c] / L;
            double* dxr = &dx.data[(static_cast<std::size_t>(b) * C + c) * L];
            for (int t = 0; t < L; ++t) dxr[t] = g;
        }
    }
    return dx;
}

// y[b,k] = sum_c w[k,c] x[b,c] + bias[k]
inline Tensor dense_fwd(const Tensor& x, const Tensor& w, const Tensor& bias) {
    const int B = x.dim(0), C = x.dim(1), K = w.dim(0);
    if (w.dim(1) != C) throw ShapeError("dense: input width mismatch");
    Tensor y({B, K});
    for (int b = 0; b < B; ++b) {
        for (int k = 0; k < K; ++k) {
            double acc = bias.data[static_cast<std::size_t>(k)];
            const double* wr = &w.data[static_cast<std::size_t>(k) * C];
            const double* xr = &x.data[static_cast<std::size_t>(b) * C];
            for (int c = 0; c < C; ++c) acc += wr[c] * xr[c];
            y.data[static_cast<std::size_t>(b) * K + k] = acc;
        }
    }
    return y;
}

inline void dense_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx,
                      Tensor& dw, Tensor& dbias) {
    const int B = x.dim(0), C = x.dim(1), K = w.dim(0);
    dx = Tensor({B, C});
    dw = zeros_like(w);
    dbias = Tensor({K});
    for (int b = 0; b < B; ++b) {
        const double* xr = &x.data[static_cast<std::size_t>(b) * C];
        double* dxr = &dx.data[static_cast<std::size_t>(b) * C];
        for (int k = 0; k < K; ++k) {
            const double g = dy.data[static_cast<std::size_t>(b) * K + k];
            dbias.data[static_cast<std::size_t>(k)] += g;
            const double* wr = &w.data[static_cast<std::size_t>(k) * C];
            double* dwr = &dw.data[static_cast<std::size_t>(k) * C];
            for (int c = 0; c < C; ++c) {
                dxr[c] += g * wr[c];
                dwr[c] += g * xr[c];
            }
        }
    }
}

// Row-wise stable softmax.
inline Tensor softmax_fwd(const Tensor& logits) {
    const int B = logits.dim(0), K = logits.dim(1);
    Tensor y(logits.shape);
    for (int b = 0; b < B; ++b) {
        const double* lr = &logits.data[static_cast<std::size_t>(b) * K];
        double* yr = &y.data[static_cast<std::size_t>(b) * K];
        double mx = lr[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, lr[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) {
            yr[k] = std::exp(lr[k] - mx);
            z += yr[k];
        }
        for (int k = 0; k < K; ++k) yr[k] /= z;
    }
    return y;
}

// dlogit_j = p_j (dp_j - sum_k dp_k p_k)
inline Tensor softmax_bwd(const Tensor& probs, const Tensor& dprobs) {
    const int B = probs.dim(0), K = probs.dim(1);
    Tensor dl(probs.shape);
    for (int b = 0; b < B; ++b) {
        const double* p = &probs.data[static_cast<std::size_t>(b) * K];
        const double* dp = &dprobs.data[static_cast<std::size_t>(b) * K];
        double dot = 0.0;
        for (int k = 0; k < K; ++k) dot += dp[k] * p[k];
        double* o = &dl.data[static_cast<std::size_t>(b) * K];
        for (int k = 0; k < K; ++k) o[k] = p[k] * (dp[k] - dot);
    }
    return dl;
}

} // namespace nn

namespace detail {

struct BlockSpec {
    std::string name;
    int c_in = 0;
    int c_out = 0;
    int stride = 1;
    bool has_proj = false;
};

struct BlockCache {
    Tensor x_in, h1, h2, h3, h4, h5, h6, y_pre;
    nn::BnCache bn1, bn2;
};

struct ForwardCache {
    Tensor x;
    Tensor stem_conv, stem_bn_out;
    nn::BnCache stem_bn;
    std::vector<BlockCache> blocks;
    Tensor gap_in, gap_out, logits, probs;
    int gap_len = 0;
};

} // namespace detail

struct ForwardResult {
    Tensor probs; // [B, C]
    detail::ForwardCache cache;
};

class Model {
  public:
    explicit Model(const ArchConfig& arch) : arch_(arch) {
        arch.validate();
        int c_in = arch.stem_kernels;
        for (std::size_t s = 0; s < arch.channels_per_stage.size(); ++s) {
            const int width = arch.channels_per_stage[s];
            for (int b = 0; b < arch.num_res_blocks; ++b) {
                detail::BlockSpec spec;
                spec.name = "block" + std::to_string(blocks_.size());
                spec.c_in = c_in;
                spec.c_out = width;
                spec.stride = (b == 0) ? 2 : 1;
                spec.has_proj = (spec.stride != 1 || spec.c_in != spec.c_out);
                blocks_.push_back(spec);
                c_in = width;
            }
        }
        final_width_ = c_in;
    }

    const ArchConfig& arch() const { return arch_; }
    const std::vector<detail::BlockSpec>& blocks() const { return blocks_; }

    /// Initial parameters: fan-in-scaled uniform weights, BN scale 1 shift 0,
    /// running stats (0, 1). The EMA shadow starts equal to theta.
    ParamSet init_params(RngStream& rng) const {
        ParamSet ps;
        auto uniform_fill = [&](Tensor& t, int fan_in) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : t.data) v = rng.uniform(-bound, bound);
        };
        auto add_bn = [&](const std::string& prefix, int c) {
            Tensor scale({c}), shift({c}), rmean({c}), rvar({c});
            for (auto& v : scale.data) v = 1.0;
            for (auto& v : rvar.data) v = 1.0;
            ps.theta[prefix + ".scale"] = std::move(scale);
            ps.theta[prefix + ".shift"] = std::move(shift);
            ps.theta[prefix + ".rmean"] = std::move(rmean);
            ps.theta[prefix + ".rvar"] = std::move(rvar);
            ps.no_grad.insert(prefix + ".rmean");
            ps.no_grad.insert(prefix + ".rvar");
        };

        Tensor stem_w({arch_.stem_kernels, arch_.input_channels, arch_.stem_size});
        uniform_fill(stem_w, arch_.input_channels * arch_.stem_size);
        ps.theta["stem.w"] = std::move(stem_w);
        add_bn("stem.bn", arch_.stem_kernels);

        for (const auto& blk : blocks_) {
            Tensor dw1({blk.c_in, 3}), pw1({blk.c_out, blk.c_in, 1});
            Tensor dw2({blk.c_out, 3}), pw2({blk.c_out, blk.c_out, 1});
            uniform_fill(dw1, 3);
            uniform_fill(pw1, blk.c_in);
            uniform_fill(dw2, 3);
            uniform_fill(pw2, blk.c_out);
            ps.theta[blk.name + ".dw1"] = std::move(dw1);
            ps.theta[blk.name + ".pw1"] = std::move(pw1);
            add_bn(blk.name + ".bn1", blk.c_out);
            ps.theta[blk.name + ".dw2"] = std::move(dw2);
            ps.theta[blk.name + ".pw2"] = std::move(pw2);
            add_bn(blk.name + ".bn2", blk.c_out);
            if (blk.has_proj) {
                Tensor proj({blk.c_out, blk.c_in, 1});
                uniform_fill(proj, blk.c_in);
                ps.theta[blk.name + ".skip"] = std::move(proj);
            }
        }

        Tensor head_w({arch_.num_classes, final_width_}), head_b({arch_.num_classes});
        uniform_fill(head_w, final_width_);
        ps.theta["head.w"] = std::move(head_w);
        ps.theta["head.b"] = std::move(head_b);

        ps.theta_ema = ps.theta;
        return ps;
    }

    /// Forward pass. TRAIN mode computes batch statistics and updates the
    /// running estimates inside `weights`; EVAL touches nothing.
    ForwardResult forward(WeightMap& weights, const Tensor& x, Mode mode) const {
        if (x.shape.size() != 3 || x.dim(1) != arch_.input_channels ||
            x.dim(2) != arch_.input_len) {
            throw ShapeError("forward: expected [B, " +
                             std::to_string(arch_.input_channels) + ", " +
                             std::to_string(arch_.input_len) + "], got " + x.shape_str());
        }
        const bool train = (mode == Mode::TRAIN);
        ForwardResult r;
        auto& c = r.cache;
        c.x = x;

        c.stem_conv = nn::conv1d_fwd(x, weights.at("stem.w"), arch_.stem_stride,
                                     arch_.stem_size / 2);
        c.stem_bn_out =
            nn::bn_fwd(c.stem_conv, weights.at("stem.bn.scale"), weights.at("stem.bn.shift"),
                       weights.at("stem.bn.rmean"), weights.at("stem.bn.rvar"), mode,
                       train ? &c.stem_bn : nullptr);
        Tensor act = nn::relu_fwd(c.stem_bn_out);

        c.blocks.resize(blocks_.size());
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const auto& blk = blocks_[i];
            auto& bc = c.blocks[i];
            bc.x_in = std::move(act);
            bc.h1 = nn::dwconv_fwd(bc.x_in, weights.at(blk.name + ".dw1"), blk.stride, 1);
            bc.h2 = nn::conv1d_fwd(bc.h1, weights.at(blk.name + ".pw1"), 1, 0);
            bc.h3 = nn::bn_fwd(bc.h2, weights.at(blk.name + ".bn1.scale"),
                               weights.at(blk.name + ".bn1.shift"),
                               weights.at(blk.name + ".bn1.rmean"),
                               weights.at(blk.name + ".bn1.rvar"), mode,
                               train ? &bc.bn1 : nullptr);
            bc.h4 = nn::relu_fwd(bc.h3);
            bc.h5 = nn::dwconv_fwd(bc.h4, weights.at(blk.name + ".dw2"), 1, 1);
            bc.h6 = nn::conv1d_fwd(bc.h5, weights.at(blk.name + ".pw2"), 1, 0);
            Tensor main = nn::bn_fwd(bc.h6, weights.at(blk.name + ".bn2.scale"),
                                     weights.at(blk.name + ".bn2.shift"),
                                     weights.at(blk.name + ".bn2.rmean"),
                                     weights.at(blk.name + ".bn2.rvar"), mode,
                                     train ? &bc.bn2 : nullptr);
            Tensor skip = blk.has_proj
                              ? nn::conv1d_fwd(bc.x_in, weights.at(blk.name + ".skip"),
                                               blk.stride, 0)
                              : bc.x_in;
            if (!main.same_shape(skip)) throw ShapeError("residual add shape mismatch");
            bc.y_pre = std::move(main);
            for (std::size_t j = 0; j < bc.y_pre.data.size(); ++j) {
                bc.y_pre.data[j] += skip.data[j];
            }
            act = nn::relu_fwd(bc.y_pre);
        }

        c.gap_in = std::move(act);
        c.gap_len = c.gap_in.dim(2);
        c.gap_out = nn::gap_fwd(c.gap_in);
        c.logits = nn::dense_fwd(c.gap_out, weights.at("head.w"), weights.at("head.b"));
        c.probs = nn::softmax_fwd(c.logits);
        r.probs = c.probs;
        return r;
    }

    /// Reverse pass from d(loss)/d(probs). Requires a TRAIN-mode cache.
    GradMap backward(const WeightMap& weights, const detail::ForwardCache& c,
                     const Tensor& dprobs) const {
        if (!dprobs.same_shape(c.probs)) throw ShapeError("backward: dprobs shape mismatch");
        GradMap g;

        Tensor dlogits = nn::softmax_bwd(c.probs, dprobs);
        Tensor d_gap_out, dhw, dhb;
        nn::dense_bwd(c.gap_out, weights.at("head.w"), dlogits, d_gap_out, dhw, dhb);
        g["head.w"] = std::move(dhw);
        g["head.b"] = std::move(dhb);
        Tensor dact = nn::gap_bwd(d_gap_out, c.gap_len);

        for (std::size_t ii = blocks_.size(); ii-- > 0;) {
            const auto& blk = blocks_[ii];
            const auto& bc = c.blocks[ii];
            Tensor dy_pre = nn::relu_bwd(bc.y_pre, dact);

            Tensor dx_skip;
            if (blk.has_proj) {
                Tensor dproj;
                nn::conv1d_bwd(bc.x_in, weights.at(blk.name + ".skip"), blk.stride, 0,
                               dy_pre, dx_skip, dproj);
                g[blk.name + ".skip"] = std::move(dproj);
            } else {
                dx_skip = dy_pre;
            }

            Tensor dh6, dscale2, dshift2;
            nn::bn_bwd(bc.bn2, weights.at(blk.name + ".bn2.scale"), dy_pre, dh6, dscale2,
                       dshift2);
            g[blk.name + ".bn2.scale"] = std::move(dscale2);
            g[blk.name + ".bn2.shift"] = std::move(dshift2);

            Tensor dh5, dpw2;
            nn::conv1d_bwd(bc.h5, weights.at(blk.name + ".pw2"), 1, 0, dh6, dh5, dpw2);
            g[blk.name + ".pw2"] = std::move(dpw2);

            Tensor dh4, ddw2;
            nn::dwconv_bwd(bc.h4, weights.at(blk.name + ".dw2"), 1, 1, dh5, dh4, ddw2);
            g[blk.name + ".dw2"] = std::move(ddw2);

            Tensor dh3 = nn::relu_bwd(bc.h3, dh4);

            Tensor dh2, dscale1, dshift1;
            nn::bn_bwd(bc.bn1, weights.at(blk.name + ".bn1.scale"), dh3, dh2, dscale1,
                       dshift1);
            g[blk.name + ".bn1.scale"] = std::move(dscale1);
            g[blk.name + ".bn1.shift"] = std::move(dshift1);

            Tensor dh1, dpw1;
            nn::conv1d_bwd(bc.h1, weights.at(blk.name + ".pw1"), 1, 0, dh2, dh1, dpw1);
            g[blk.name + ".pw1"] = std::move(dpw1);

            Tensor dx_main, ddw1;
            nn::dwconv_bwd(bc.x_in, weights.at(blk.name + ".dw1"), blk.stride, 1, dh1,
                           dx_main, ddw1);
            g[blk.name + ".dw1"] = std::move(ddw1);

            dact = std::move(dx_main);
            for (std::size_t j = 0; j < dact.data.size(); ++j) {
                dact.data[j] += dx_skip.data[j];
            }
        }

        Tensor d_stem_bn_out = nn::relu_bwd(c.stem_bn_out, dact);
        Tensor d_stem_conv, dsc, dsh;
        nn::bn_bwd(c.stem_bn, weights.at("stem.bn.scale"), d_stem_bn_out, d_stem_conv, dsc,
                   dsh);
        g["stem.bn.scale"] = std::move(dsc);
        g["stem.bn.shift"] = std::move(dsh);
        Tensor dx, dsw;
        nn::conv1d_bwd(c.x, weights.at("stem.w"), arch_.stem_stride, arch_.stem_size / 2,
                       d_stem_conv, dx, dsw);
        g["stem.w"] = std::move(dsw);
        return g;
    }

  private:
    ArchConfig arch_;
    std::vector<detail::BlockSpec> blocks_;
    int final_width_ = 0;
};

inline ParamSet build_model(const ArchConfig& arch, RngStream& rng) {
    return Model(arch).init_params(rng);
}

// -------------------------------- Adam ------------------------------------

struct AdamState {
    GradMap m;
    GradMap v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update over every trainable entry of `params.theta`.
/// Running statistics (params.no_grad) are never touched.
inline void adam_step(ParamSet& params, const GradMap& grads, AdamState& state, double lr) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, w] : params.theta) {
        if (params.no_grad.count(name)) continue;
        auto it = grads.find(name);
        if (it == grads.end()) throw ShapeError("adam_step: missing gradient for " + name);
        const Tensor& gt = it->second;
        if (!gt.same_shape(w)) throw ShapeError("adam_step: gradient shape mismatch for " + name);
        Tensor& m = state.m.try_emplace(name, Tensor(w.shape)).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor(w.shape)).first->second;
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            const double gi = gt.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            w.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

// ----------------------------- checkpoints --------------------------------

inline constexpr char kCheckpointMagic[7] = {'S', 'S', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

namespace detail {

inline void ckpt_put_i32(std::string& out, std::int32_t v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
}

inline void ckpt_put_tensor(std::string& out, const std::string& name, const Tensor& t) {
    const auto name_len = static_cast<std::uint16_t>(name.size());
    out.append(reinterpret_cast<const char*>(&name_len), 2);
    out.append(name);
    const std::uint8_t rank = static_cast<std::uint8_t>(t.shape.size());
    out.push_back(static_cast<char>(rank));
    for (int d : t.shape) {
        const auto dim = static_cast<std::uint32_t>(d);
        out.append(reinterpret_cast<const char*>(&dim), 4);
    }
    for (double v : t.data) {
        const float f = static_cast<float>(v);
        out.append(reinterpret_cast<const char*>(&f), 4);
    }
}

// Reuses the dataset reader's offset-tracking cursor semantics.
class CkptCursor {
  public:
    CkptCursor(const char* data, std::size_t size) : data_(data), size_(size) {}
    std::size_t offset() const { return pos_; }
    const char* take(std::size_t n, const char* what) {
        if (pos_ + n > size_) {
            throw FormatError(std::string("truncated while reading ") + what, pos_);
        }
        const char* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    template <typename T> T scalar(const char* what) {
        T v;
        std::memcpy(&v, take(sizeof(T), what), sizeof(T));
        return v;
    }
    bool exhausted() const { return pos_ == size_; }

  private:
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline std::pair<std::string, Tensor> ckpt_take_tensor(CkptCursor& cur) {
    const auto name_len = cur.scalar<std::uint16_t>("tensor name length");
    const char* nm = cur.take(name_len, "tensor name");
    std::string name(nm, name_len);
    const auto rank = cur.scalar<std::uint8_t>("tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(cur.scalar<std::uint32_t>("tensor dim"));
    Tensor t(shape);
    for (auto& v : t.data) v = static_cast<double>(cur.scalar<float>("tensor data"));
    return {std::move(name), std::move(t)};
}

} // namespace detail

struct Checkpoint {
    ArchConfig arch;
    ParamSet params;
    AdamState opt;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string buf;
    buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    buf.push_back(static_cast<char>(kCheckpointVersion));
    detail::ckpt_put_i32(buf, ckpt.arch.input_len);
    detail::ckpt_put_i32(buf, ckpt.arch.input_channels);
    detail::ckpt_put_i32(buf, ckpt.arch.stem_kernels);
    detail::ckpt_put_i32(buf, ckpt.arch.stem_size);
    detail::ckpt_put_i32(buf, ckpt.arch.stem_stride);
    detail::ckpt_put_i32(buf, ckpt.arch.num_res_blocks);
    detail::ckpt_put_i32(buf, static_cast<std::int32_t>(ckpt.arch.channels_per_stage.size()));
    for (int c : ckpt.arch.channels_per_stage) detail::ckpt_put_i32(buf, c);
    detail::ckpt_put_i32(buf, ckpt.arch.num_classes);

    auto put_map = [&](const WeightMap& m) {
        const auto count = static_cast<std::uint32_t>(m.size());
        buf.append(reinterpret_cast<const char*>(&count), 4);
        for (const auto& [name, t] : m) detail::ckpt_put_tensor(buf, name, t);
    };
    put_map(ckpt.params.theta);
    put_map(ckpt.params.theta_ema);
    put_map(ckpt.opt.m);
    put_map(ckpt.opt.v);
    const auto step = static_cast<std::int64_t>(ckpt.opt.step);
    buf.append(reinterpret_cast<const char*>(&step), 8);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("save_checkpoint: cannot open \"" + path + "\"");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out.good()) throw Error("save_checkpoint: write to \"" + path + "\" failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error("load_checkpoint: cannot open \"" + path + "\"");
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<char> raw(size);
    in.seekg(0);
    in.read(raw.data(), static_cast<std::streamsize>(size));
    if (!in.good()) throw Error("load_checkpoint: read from \"" + path + "\" failed");

    detail::CkptCursor cur(raw.data(), raw.size());
    const char* magic = cur.take(sizeof(kCheckpointMagic), "magic");
    if (std::memcmp(magic, kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw FormatError("bad magic, not a checkpoint file", 0);
    }
    const std::size_t version_at = cur.offset();
    const auto version = cur.scalar<std::uint8_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported version " + std::to_string(version), version_at);
    }

    Checkpoint ckpt;
    ckpt.arch.input_len = cur.scalar<std::int32_t>("input_len");
    ckpt.arch.input_channels = cur.scalar<std::int32_t>("input_channels");
    ckpt.arch.stem_kernels = cur.scalar<std::int32_t>("stem_kernels");
    ckpt.arch.stem_size = cur.scalar<std::int32_t>("stem_size");
    ckpt.arch.stem_stride = cur.scalar<std::int32_t>("stem_stride");
    ckpt.arch.num_res_blocks = cur.scalar<std::int32_t>("num_res_blocks");
    const std::size_t stages_at = cur.offset();
    const auto n_stages = cur.scalar<std::int32_t>("stage count");
    if (n_stages < 1 || n_stages > 64) {
        throw FormatError("implausible stage count " + std::to_string(n_stages), stages_at);
    }
    ckpt.arch.channels_per_stage.resize(static_cast<std::size_t>(n_stages));
    for (auto& c : ckpt.arch.channels_per_stage) c = cur.scalar<std::int32_t>("stage width");
    ckpt.arch.num_classes = cur.scalar<std::int32_t>("num_classes");

    auto take_map = [&](WeightMap& m) {
        const auto count = cur.scalar<std::uint32_t>("tensor count");
        for (std::uint32_t i = 0; i < count; ++i) {
            auto [name, t] = detail::ckpt_take_tensor(cur);
            m[std::move(name)] = std::move(t);
        }
    };
    take_map(ckpt.params.theta);
    take_map(ckpt.params.theta_ema);
    take_map(ckpt.opt.m);
    take_map(ckpt.opt.v);
    ckpt.opt.step = cur.scalar<std::int64_t>("optimizer step");
    if (!cur.exhausted()) {
        throw FormatError("trailing bytes after checkpoint payload", cur.offset());
    }

    // Reconstruct the no-grad set from the naming scheme.
    for (const auto& [name, t] : ckpt.params.theta) {
        if (name.ends_with(".rmean") || name.ends_with(".rvar")) {
            ckpt.params.no_grad.insert(name);
        }
    }
    return ckpt;
}

} // namespace sscsr
