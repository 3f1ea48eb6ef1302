#pragma once

// Recurrent and convolutional building blocks. Every cell is a set of
// parameter ids in a ParamStore plus a pure step function operating on
// row-batched tensors ([R, ...]); recurrent state is owned by the caller.

#include <string>
#include <utility>
#include <vector>

#include "bms/params.hpp"
#include "bms/rng.hpp"
#include "bms/tensor.hpp"

namespace bms {

template <typename Real>
struct Dense {
    int w = -1, b = -1;
    int in = 0, out = 0;
    ops::Act act = ops::Act::none;

    static Dense create(ParamStore<Real>& store, const std::string& prefix, int in, int out,
                        ops::Act act, RngStream& rng) {
        Dense d;
        d.in = in;
        d.out = out;
        d.act = act;
        d.w = store.add(prefix + ".w", {out, in},
                        glorot_uniform<Real>(static_cast<std::size_t>(out) * in, in, out, rng))
                  .id;
        d.b = store.add_zeros(prefix + ".b", {out}).id;
        return d;
    }

    Tensor<Real> apply(const Bound<Real>& p, const Tensor<Real>& x) const {
        return ops::linear(x, p.get(w), p.get(b), act);
    }
};

// Standard LSTM cell without peepholes. Gate blocks are packed along the
// first axis of W_x [4H, D], W_h [4H, H], b [4H] in the fixed order
// i, f, g, o; the forget slice of b is initialized to one.
template <typename Real>
struct LstmCell {
    int wx = -1, wh = -1, b = -1;
    int in_dim = 0, hidden = 0;

    static LstmCell create(ParamStore<Real>& store, const std::string& prefix, int in_dim,
                           int hidden, RngStream& rng) {
        LstmCell c;
        c.in_dim = in_dim;
        c.hidden = hidden;
        const int fourh = 4 * hidden;
        c.wx = store.add(prefix + ".wx", {fourh, in_dim},
                         glorot_uniform<Real>(static_cast<std::size_t>(fourh) * in_dim, in_dim,
                                              fourh, rng))
                   .id;
        c.wh = store.add(prefix + ".wh", {fourh, hidden},
                         glorot_uniform<Real>(static_cast<std::size_t>(fourh) * hidden, hidden,
                                              fourh, rng))
                   .id;
        std::vector<Real> bias(static_cast<std::size_t>(fourh), Real(0));
        for (int i = hidden; i < 2 * hidden; ++i) bias[static_cast<std::size_t>(i)] = Real(1);
        c.b = store.add(prefix + ".b", {fourh}, std::move(bias)).id;
        return c;
    }

    // x [R, in_dim], h and c [R, hidden] -> (h', c').
    std::pair<Tensor<Real>, Tensor<Real>> step(const Bound<Real>& p, const Tensor<Real>& x,
                                               const Tensor<Real>& h, const Tensor<Real>& c) const {
        require(x.rank() == 2 && x.shape[1] == in_dim, "lstm_step: input width");
        require(h.rank() == 2 && h.shape[1] == hidden && c.shape == h.shape, "lstm_step: state width");
        auto pre = ops::linear2(x, p.get(wx), h, p.get(wh), p.get(b));
        auto i = ops::sigmoid(ops::slice_cols(pre, 0, hidden));
        auto f = ops::sigmoid(ops::slice_cols(pre, hidden, 2 * hidden));
        auto g = ops::tanh(ops::slice_cols(pre, 2 * hidden, 3 * hidden));
        auto o = ops::sigmoid(ops::slice_cols(pre, 3 * hidden, 4 * hidden));
        auto c_next = ops::add(ops::mul(f, c), ops::mul(i, g));
        auto h_next = ops::mul(o, ops::tanh(c_next));
        return {h_next, c_next};
    }

    Tensor<Real> zero_state(int rows) const { return Tensor<Real>::zeros({rows, hidden}); }
};

// Convolutional LSTM cell: identical gate algebra with same-padding
// convolutions replacing the matrix products. States are [R, F, H, W].
template <typename Real>
struct ConvLstmCell {
    int kx = -1, kh = -1, b = -1;
    int in_ch = 0, filters = 0, ksize = 3;

    static ConvLstmCell create(ParamStore<Real>& store, const std::string& prefix, int in_ch,
                               int filters, int ksize, RngStream& rng) {
        ConvLstmCell c;
        c.in_ch = in_ch;
        c.filters = filters;
        c.ksize = ksize;
        const int fourf = 4 * filters;
        const std::size_t kk = static_cast<std::size_t>(ksize) * ksize;
        c.kx = store.add(prefix + ".kx", {fourf, in_ch, ksize, ksize},
                         glorot_uniform<Real>(static_cast<std::size_t>(fourf) * in_ch * kk,
                                              static_cast<std::size_t>(in_ch) * kk,
                                              static_cast<std::size_t>(fourf) * kk, rng))
                   .id;
        c.kh = store.add(prefix + ".kh", {fourf, filters, ksize, ksize},
                         glorot_uniform<Real>(static_cast<std::size_t>(fourf) * filters * kk,
                                              static_cast<std::size_t>(filters) * kk,
                                              static_cast<std::size_t>(fourf) * kk, rng))
                   .id;
        std::vector<Real> bias(static_cast<std::size_t>(fourf), Real(0));
        for (int i = filters; i < 2 * filters; ++i) bias[static_cast<std::size_t>(i)] = Real(1);
        c.b = store.add(prefix + ".b", {fourf}, std::move(bias)).id;
        return c;
    }

    // x [R, in_ch, H, W], h and c [R, filters, H, W] -> (h', c').
    std::pair<Tensor<Real>, Tensor<Real>> step(const Bound<Real>& p, const Tensor<Real>& x,
                                               const Tensor<Real>& h, const Tensor<Real>& c) const {
        require(x.rank() == 4 && x.shape[1] == in_ch, "conv_lstm_step: input channels");
        require(h.rank() == 4 && h.shape[1] == filters && c.shape == h.shape,
                "conv_lstm_step: state channels");
        require(x.shape[2] == h.shape[2] && x.shape[3] == h.shape[3],
                "conv_lstm_step: spatial extents differ");
        auto pre = ops::add(ops::conv2d(x, p.get(kx), ops::Padding::same),
                            ops::conv2d(h, p.get(kh), ops::Padding::same));
        pre = ops::add_chan_bias(pre, p.get(b));
        auto i = ops::sigmoid(ops::slice_chan(pre, 0, filters));
        auto f = ops::sigmoid(ops::slice_chan(pre, filters, 2 * filters));
        auto g = ops::tanh(ops::slice_chan(pre, 2 * filters, 3 * filters));
        auto o = ops::sigmoid(ops::slice_chan(pre, 3 * filters, 4 * filters));
        auto c_next = ops::add(ops::mul(f, c), ops::mul(i, g));
        auto h_next = ops::mul(o, ops::tanh(c_next));
        return {h_next, c_next};
    }

    Tensor<Real> zero_state(int rows, int height, int width) const {
        return Tensor<Real>::zeros({rows, filters, height, width});
    }
};

// Same-padded 3x3 conv layer with per-channel bias.
template <typename Real>
struct Conv {
    int k = -1, b = -1;
    int in_ch = 0, out_ch = 0, ksize = 3;
    bool tanh_act = false;

    static Conv create(ParamStore<Real>& store, const std::string& prefix, int in_ch, int out_ch,
                       int ksize, bool tanh_act, RngStream& rng) {
        Conv c;
        c.in_ch = in_ch;
        c.out_ch = out_ch;
        c.ksize = ksize;
        c.tanh_act = tanh_act;
        const std::size_t kk = static_cast<std::size_t>(ksize) * ksize;
        c.k = store.add(prefix + ".k", {out_ch, in_ch, ksize, ksize},
                        glorot_uniform<Real>(static_cast<std::size_t>(out_ch) * in_ch * kk,
                                             static_cast<std::size_t>(in_ch) * kk,
                                             static_cast<std::size_t>(out_ch) * kk, rng))
                  .id;
        c.b = store.add_zeros(prefix + ".b", {out_ch}).id;
        return c;
    }

    Tensor<Real> apply(const Bound<Real>& p, const Tensor<Real>& x) const {
        auto y = ops::add_chan_bias(ops::conv2d(x, p.get(k), ops::Padding::same), p.get(b));
        return tanh_act ? ops::tanh(y) : y;
    }
};

// Conv-pool stack and two dense layers producing a fixed-width visual
// summary; tanh throughout. Input extents must be divisible by 16.
template <typename Real>
struct CnnEncoder {
    std::vector<Conv<Real>> blocks;
    Dense<Real> fc1, fc2;
    int in_ch = 1;
    int img_h = 0, img_w = 0;
    int out_dim = 0;

    static CnnEncoder create(ParamStore<Real>& store, const std::string& prefix, int in_ch,
                             int img_h, int img_w, const std::vector<int>& channels, int fc1_dim,
                             int out_dim, RngStream& rng) {
        require(img_h % 16 == 0 && img_w % 16 == 0,
                "cnn_encode: input extents must be divisible by 16");
        require(channels.size() == 4, "cnn encoder expects four conv blocks");
        CnnEncoder e;
        e.in_ch = in_ch;
        e.img_h = img_h;
        e.img_w = img_w;
        e.out_dim = out_dim;
        int ch = in_ch;
        for (int i = 0; i < 4; ++i) {
            e.blocks.push_back(Conv<Real>::create(store, prefix + ".c" + std::to_string(i + 1), ch,
                                                  channels[static_cast<std::size_t>(i)], 3, true, rng));
            ch = channels[static_cast<std::size_t>(i)];
        }
        const int flat = ch * (img_h / 16) * (img_w / 16);
        e.fc1 = Dense<Real>::create(store, prefix + ".fc1", flat, fc1_dim, ops::Act::tanh, rng);
        e.fc2 = Dense<Real>::create(store, prefix + ".fc2", fc1_dim, out_dim, ops::Act::tanh, rng);
        return e;
    }

    // img [R, C, H, W] -> [R, out_dim], all values in (-1, 1).
    Tensor<Real> encode(const Bound<Real>& p, const Tensor<Real>& img) const {
        require(img.rank() == 4, "cnn_encode: image batch must be rank 4");
        const int H = img.shape[2], W = img.shape[3];
        require(H % 16 == 0 && W % 16 == 0, "cnn_encode: extents " + std::to_string(H) + "x" +
                                                std::to_string(W) + " not divisible by 16");
        require(H == img_h && W == img_w, "cnn_encode: resolution differs from construction");
        auto t = img;
        for (const auto& blk : blocks) t = ops::maxpool2(blk.apply(p, t));
        const int R = t.shape[0];
        t = ops::reshape(t, {R, static_cast<int>(t.size() / static_cast<std::size_t>(R))});
        return fc2.apply(p, fc1.apply(p, t));
    }
};

}  // namespace bms
