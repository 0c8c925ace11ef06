#include "ldrc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ldrc/parallel.hpp"
#include "node_util.hpp"

namespace ldrc {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(Shape4 shape, const char* op, std::vector<NodePtr> parents) {
    return detail::make_op_node(shape, op, std::move(parents));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!(a.shape() == b.shape()))
        throw Error(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                    b.shape().str());
}

// ---- conv2d kernels -------------------------------------------------------
//
// All three directions accumulate in f64 and are parallelized over disjoint
// output rows, so results do not depend on the thread count.

struct ConvDims {
    int n, cin, h, w;
    int cout, kh, kw;
    int ho, wo;
    int stride, padding, dilation;
};

void conv_forward(const float* x, const float* w, const float* bias, float* y,
                  const ConvDims& d) {
    parallel_for(std::int64_t(d.n) * d.cout * d.ho, [&](std::int64_t r0, std::int64_t r1, int) {
        std::vector<double> acc(size_t(d.wo));
        for (std::int64_t r = r0; r < r1; ++r) {
            int oh = int(r % d.ho);
            int co = int((r / d.ho) % d.cout);
            int n = int(r / (std::int64_t(d.ho) * d.cout));
            std::fill(acc.begin(), acc.end(), bias ? double(bias[co]) : 0.0);
            const float* xn = x + std::int64_t(n) * d.cin * d.h * d.w;
            const float* wc = w + std::int64_t(co) * d.cin * d.kh * d.kw;
            for (int ci = 0; ci < d.cin; ++ci) {
                const float* xc = xn + std::int64_t(ci) * d.h * d.w;
                const float* wk = wc + std::int64_t(ci) * d.kh * d.kw;
                for (int u = 0; u < d.kh; ++u) {
                    int ih = oh * d.stride - d.padding + u * d.dilation;
                    if (ih < 0 || ih >= d.h) continue;
                    const float* xrow = xc + std::int64_t(ih) * d.w;
                    for (int v = 0; v < d.kw; ++v) {
                        double wv = wk[u * d.kw + v];
                        int base = v * d.dilation - d.padding;
                        if (d.stride == 1) {
                            int lo = std::max(0, -base);
                            int hi = std::min(d.wo, d.w - base);
                            const float* xr = xrow + base;
                            for (int ow = lo; ow < hi; ++ow) acc[size_t(ow)] += wv * xr[ow];
                        } else {
                            for (int ow = 0; ow < d.wo; ++ow) {
                                int iw = ow * d.stride + base;
                                if (iw < 0 || iw >= d.w) continue;
                                acc[size_t(ow)] += wv * xrow[iw];
                            }
                        }
                    }
                }
            }
            float* yrow = y + ((std::int64_t(n) * d.cout + co) * d.ho + oh) * d.wo;
            for (int ow = 0; ow < d.wo; ++ow) yrow[ow] = float(acc[size_t(ow)]);
        }
    });
}

void conv_backward_input(const float* dy, const float* w, float* dx, const ConvDims& d) {
    parallel_for(std::int64_t(d.n) * d.cin * d.h, [&](std::int64_t r0, std::int64_t r1, int) {
        std::vector<double> acc(size_t(d.w));
        for (std::int64_t r = r0; r < r1; ++r) {
            int ih = int(r % d.h);
            int ci = int((r / d.h) % d.cin);
            int n = int(r / (std::int64_t(d.h) * d.cin));
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* dyn = dy + std::int64_t(n) * d.cout * d.ho * d.wo;
            for (int co = 0; co < d.cout; ++co) {
                const float* wk = w + (std::int64_t(co) * d.cin + ci) * d.kh * d.kw;
                for (int u = 0; u < d.kh; ++u) {
                    int t = ih + d.padding - u * d.dilation;
                    if (t < 0 || t % d.stride != 0) continue;
                    int oh = t / d.stride;
                    if (oh >= d.ho) continue;
                    const float* dyrow = dyn + (std::int64_t(co) * d.ho + oh) * d.wo;
                    for (int v = 0; v < d.kw; ++v) {
                        double wv = wk[u * d.kw + v];
                        int base = v * d.dilation - d.padding;
                        if (d.stride == 1) {
                            int lo = std::max(0, -base);
                            int hi = std::min(d.wo, d.w - base);
                            double* ar = acc.data() + base;
                            for (int ow = lo; ow < hi; ++ow) ar[ow] += wv * dyrow[ow];
                        } else {
                            for (int ow = 0; ow < d.wo; ++ow) {
                                int iw = ow * d.stride + base;
                                if (iw < 0 || iw >= d.w) continue;
                                acc[size_t(iw)] += wv * dyrow[ow];
                            }
                        }
                    }
                }
            }
            float* dxrow = dx + ((std::int64_t(n) * d.cin + ci) * d.h + ih) * d.w;
            for (int iw = 0; iw < d.w; ++iw) dxrow[iw] += float(acc[size_t(iw)]);
        }
    });
}

// One pass over a stride-1 output row accumulating all KW taps at once; the
// fixed KW lets the v-reductions unroll and vectorize. Edge columns outside
// the common in-bounds interior run scalar per tap.
template <int KW>
void dw_row_taps(const double* dyrow, const float* xrow, double* ac, int wo, int w, int padding,
                 int dilation) {
    const float* xr[KW];
    int vlo[KW], vhi[KW];
    int lo = 0, hi = wo;
    for (int v = 0; v < KW; ++v) {
        int base = v * dilation - padding;
        xr[v] = xrow + base;
        vlo[v] = std::max(0, -base);
        vhi[v] = std::min(wo, w - base);
        lo = std::max(lo, vlo[v]);
        hi = std::min(hi, vhi[v]);
    }
    lo = std::min(lo, wo);
    hi = std::max(hi, lo);
    double acc[KW] = {};
    for (int v = 0; v < KW; ++v) {
        for (int ow = vlo[v]; ow < std::min(lo, vhi[v]); ++ow) acc[v] += dyrow[ow] * xr[v][ow];
        for (int ow = std::max(hi, vlo[v]); ow < vhi[v]; ++ow) acc[v] += dyrow[ow] * xr[v][ow];
    }
    for (int ow = lo; ow < hi; ++ow) {
        double dv = dyrow[ow];
        for (int v = 0; v < KW; ++v) acc[v] += dv * xr[v][ow];
    }
    for (int v = 0; v < KW; ++v) ac[v] += acc[v];
}

void dw_row_generic(const double* dyrow, const float* xrow, double* ac, const ConvDims& d) {
    for (int v = 0; v < d.kw; ++v) {
        int base = v * d.dilation - d.padding;
        double a = 0.0;
        for (int ow = 0; ow < d.wo; ++ow) {
            int iw = ow * d.stride + base;
            if (iw < 0 || iw >= d.w) continue;
            a += dyrow[ow] * xrow[iw];
        }
        ac[v] += a;
    }
}

void conv_backward_weight(const float* dy, const float* x, float* dw, const ConvDims& d) {
    parallel_for(d.cout, [&](std::int64_t c0, std::int64_t c1, int) {
        std::vector<double> acc(size_t(d.cin) * d.kh * d.kw);
        std::vector<double> dyd(size_t(d.wo));
        for (std::int64_t co = c0; co < c1; ++co) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int n = 0; n < d.n; ++n) {
                const float* xn = x + std::int64_t(n) * d.cin * d.h * d.w;
                const float* dyc = dy + (std::int64_t(n) * d.cout + co) * d.ho * d.wo;
                for (int oh = 0; oh < d.ho; ++oh) {
                    const float* dyrow0 = dyc + std::int64_t(oh) * d.wo;
                    for (int i = 0; i < d.wo; ++i) dyd[size_t(i)] = dyrow0[i];
                    const double* dyrow = dyd.data();
                    for (int ci = 0; ci < d.cin; ++ci) {
                        const float* xc = xn + std::int64_t(ci) * d.h * d.w;
                        double* ac = acc.data() + std::int64_t(ci) * d.kh * d.kw;
                        for (int u = 0; u < d.kh; ++u) {
                            int ih = oh * d.stride - d.padding + u * d.dilation;
                            if (ih < 0 || ih >= d.h) continue;
                            const float* xrow = xc + std::int64_t(ih) * d.w;
                            double* av = ac + u * d.kw;
                            if (d.stride != 1) {
                                dw_row_generic(dyrow, xrow, av, d);
                            } else {
                                switch (d.kw) {
                                    case 1: dw_row_taps<1>(dyrow, xrow, av, d.wo, d.w, d.padding, d.dilation); break;
                                    case 3: dw_row_taps<3>(dyrow, xrow, av, d.wo, d.w, d.padding, d.dilation); break;
                                    case 5: dw_row_taps<5>(dyrow, xrow, av, d.wo, d.w, d.padding, d.dilation); break;
                                    case 7: dw_row_taps<7>(dyrow, xrow, av, d.wo, d.w, d.padding, d.dilation); break;
                                    default: dw_row_generic(dyrow, xrow, av, d); break;
                                }
                            }
                        }
                    }
                }
            }
            float* dwc = dw + std::int64_t(co) * d.cin * d.kh * d.kw;
            for (size_t i = 0; i < acc.size(); ++i) dwc[i] += float(acc[i]);
        }
    });
}

void conv_backward_bias(const float* dy, float* db, const ConvDims& d) {
    for (int co = 0; co < d.cout; ++co) {
        double a = 0.0;
        for (int n = 0; n < d.n; ++n) {
            const float* dyc = dy + (std::int64_t(n) * d.cout + co) * d.ho * d.wo;
            for (std::int64_t i = 0; i < std::int64_t(d.ho) * d.wo; ++i) a += dyc[i];
        }
        db[co] += float(a);
    }
}

}  // namespace

int conv_out_dim(int in, int kernel, int stride, int padding, int dilation) {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias,
              int stride, int padding, int dilation) {
    const Shape4& xs = x.shape();
    const Shape4& ws = weight.shape();
    if (stride < 1 || dilation < 1 || padding < 0)
        throw Error("conv2d: invalid stride/padding/dilation");
    if (xs.c != ws.c)
        throw Error("conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                    std::to_string(ws.c));
    if (bias && !(bias->shape() == Shape4{1, ws.n, 1, 1}))
        throw Error("conv2d: bias shape must be 1x" + std::to_string(ws.n) + "x1x1");

    ConvDims d{xs.n, xs.c,  xs.h, xs.w, ws.n, ws.h, ws.w, conv_out_dim(xs.h, ws.h, stride, padding, dilation),
               conv_out_dim(xs.w, ws.w, stride, padding, dilation), stride, padding, dilation};
    if (d.ho <= 0 || d.wo <= 0)
        throw Error("conv2d: non-positive output dims for input " + xs.str());

    std::vector<NodePtr> parents{x.node(), weight.node()};
    if (bias) parents.push_back(bias->node());
    auto out = make_node({xs.n, ws.n, d.ho, d.wo}, "conv2d", parents);
    conv_forward(x.data(), weight.data(), bias ? bias->data() : nullptr, out->data.data(), d);
    check_finite(std::span<const float>(out->data), "conv2d");

    if (out->requires_grad) {
        NodePtr xn = x.node(), wn = weight.node();
        NodePtr bn = bias ? bias->node() : nullptr;
        Node* on = out.get();
        out->backward_fn = [xn, wn, bn, on, d]() {
            const float* dy = on->grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                conv_backward_input(dy, wn->data.data(), xn->grad.data(), d);
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                conv_backward_weight(dy, xn->data.data(), wn->grad.data(), d);
            }
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                conv_backward_bias(dy, bn->grad.data(), d);
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor avgpool2d(const Tensor& x, int kernel, int stride, int padding) {
    const Shape4& xs = x.shape();
    if (kernel < 1) throw Error("avgpool2d: kernel must be >= 1");
    if (stride < 1 || padding < 0) throw Error("avgpool2d: invalid stride/padding");
    int ho = conv_out_dim(xs.h, kernel, stride, padding, 1);
    int wo = conv_out_dim(xs.w, kernel, stride, padding, 1);
    if (ho <= 0 || wo <= 0)
        throw Error("avgpool2d: non-positive output dims for input " + xs.str());

    auto out = make_node({xs.n, xs.c, ho, wo}, "avgpool2d", {x.node()});
    const double inv = 1.0 / (double(kernel) * kernel);
    const float* xd = x.data();
    float* yd = out->data.data();
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            const float* xc = xd + (std::int64_t(n) * xs.c + c) * xs.h * xs.w;
            float* yc = yd + (std::int64_t(n) * xs.c + c) * ho * wo;
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    double a = 0.0;
                    for (int u = 0; u < kernel; ++u) {
                        int ih = oh * stride - padding + u;
                        if (ih < 0 || ih >= xs.h) continue;
                        for (int v = 0; v < kernel; ++v) {
                            int iw = ow * stride - padding + v;
                            if (iw < 0 || iw >= xs.w) continue;
                            a += xc[std::int64_t(ih) * xs.w + iw];
                        }
                    }
                    yc[std::int64_t(oh) * wo + ow] = float(a * inv);
                }
        }
    check_finite(std::span<const float>(out->data), "avgpool2d");

    if (out->requires_grad) {
        NodePtr xn = x.node();
        Node* on = out.get();
        out->backward_fn = [xn, on, kernel, stride, padding, ho, wo]() {
            const Shape4& s = xn->shape;
            xn->ensure_grad();
            const float inv = 1.0f / (float(kernel) * kernel);
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    float* gx = xn->grad.data() + (std::int64_t(n) * s.c + c) * s.h * s.w;
                    const float* gy = on->grad.data() + (std::int64_t(n) * s.c + c) * ho * wo;
                    for (int oh = 0; oh < ho; ++oh)
                        for (int ow = 0; ow < wo; ++ow) {
                            float g = gy[std::int64_t(oh) * wo + ow] * inv;
                            for (int u = 0; u < kernel; ++u) {
                                int ih = oh * stride - padding + u;
                                if (ih < 0 || ih >= s.h) continue;
                                for (int v = 0; v < kernel; ++v) {
                                    int iw = ow * stride - padding + v;
                                    if (iw < 0 || iw >= s.w) continue;
                                    gx[std::int64_t(ih) * s.w + iw] += g;
                                }
                            }
                        }
                }
        };
    }
    return Tensor::wrap(out);
}

Tensor global_avgpool(const Tensor& x) {
    const Shape4& xs = x.shape();
    auto out = make_node({xs.n, xs.c, 1, 1}, "global_avgpool", {x.node()});
    const std::int64_t hw = std::int64_t(xs.h) * xs.w;
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            const float* xc = x.data() + (std::int64_t(n) * xs.c + c) * hw;
            double a = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) a += xc[i];
            out->data[size_t(std::int64_t(n) * xs.c + c)] = float(a / double(hw));
        }
    check_finite(std::span<const float>(out->data), "global_avgpool");

    if (out->requires_grad) {
        NodePtr xn = x.node();
        Node* on = out.get();
        out->backward_fn = [xn, on]() {
            const Shape4& s = xn->shape;
            xn->ensure_grad();
            const std::int64_t hw = std::int64_t(s.h) * s.w;
            const float inv = 1.0f / float(hw);
            for (std::int64_t nc = 0; nc < std::int64_t(s.n) * s.c; ++nc) {
                float g = on->grad[size_t(nc)] * inv;
                float* gx = xn->grad.data() + nc * hw;
                for (std::int64_t i = 0; i < hw; ++i) gx[i] += g;
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor relu(const Tensor& x) {
    auto out = make_node(x.shape(), "relu", {x.node()});
    const float* xd = x.data();
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
    check_finite(std::span<const float>(out->data), "relu");
    if (out->requires_grad) {
        NodePtr xn = x.node();
        Node* on = out.get();
        out->backward_fn = [xn, on]() {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i)
                if (xn->data[i] > 0.0f) xn->grad[i] += on->grad[i];
        };
    }
    return Tensor::wrap(out);
}

Tensor sigmoid(const Tensor& x) {
    auto out = make_node(x.shape(), "sigmoid", {x.node()});
    const float* xd = x.data();
    for (size_t i = 0; i < out->data.size(); ++i)
        out->data[i] = float(1.0 / (1.0 + std::exp(-double(xd[i]))));
    check_finite(std::span<const float>(out->data), "sigmoid");
    if (out->requires_grad) {
        NodePtr xn = x.node();
        Node* on = out.get();
        out->backward_fn = [xn, on]() {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) {
                float y = on->data[i];
                xn->grad[i] += on->grad[i] * y * (1.0f - y);
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto out = make_node(a.shape(), "add", {a.node(), b.node()});
    const float* ad = a.data();
    const float* bd = b.data();
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = ad[i] + bd[i];
    check_finite(std::span<const float>(out->data), "add");
    if (out->requires_grad) {
        NodePtr an = a.node(), bn = b.node();
        Node* on = out.get();
        out->backward_fn = [an, bn, on]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto out = make_node(a.shape(), "sub", {a.node(), b.node()});
    const float* ad = a.data();
    const float* bd = b.data();
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = ad[i] - bd[i];
    check_finite(std::span<const float>(out->data), "sub");
    if (out->requires_grad) {
        NodePtr an = a.node(), bn = b.node();
        Node* on = out.get();
        out->backward_fn = [an, bn, on]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto out = make_node(a.shape(), "mul", {a.node(), b.node()});
    const float* ad = a.data();
    const float* bd = b.data();
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = ad[i] * bd[i];
    check_finite(std::span<const float>(out->data), "mul");
    if (out->requires_grad) {
        NodePtr an = a.node(), bn = b.node();
        Node* on = out.get();
        out->backward_fn = [an, bn, on]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i)
                    an->grad[i] += on->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i)
                    bn->grad[i] += on->grad[i] * an->data[i];
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor scale(const Tensor& x, float alpha) {
    auto out = make_node(x.shape(), "scale", {x.node()});
    const float* xd = x.data();
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = alpha * xd[i];
    check_finite(std::span<const float>(out->data), "scale");
    if (out->requires_grad) {
        NodePtr xn = x.node();
        Node* on = out.get();
        out->backward_fn = [xn, on, alpha]() {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += alpha * on->grad[i];
        };
    }
    return Tensor::wrap(out);
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
    const Shape4& xs = x.shape();
    const Shape4& ss = s.shape();
    if (ss.n != xs.n || ss.c != xs.c || ss.h != 1 || ss.w != 1)
        throw Error("scale_channels: scale must be " + std::to_string(xs.n) + "x" +
                    std::to_string(xs.c) + "x1x1, got " + ss.str());
    auto out = make_node(xs, "scale_channels", {x.node(), s.node()});
    const std::int64_t hw = std::int64_t(xs.h) * xs.w;
    for (std::int64_t nc = 0; nc < std::int64_t(xs.n) * xs.c; ++nc) {
        float g = s.data()[nc];
        const float* xc = x.data() + nc * hw;
        float* yc = out->data.data() + nc * hw;
        for (std::int64_t i = 0; i < hw; ++i) yc[i] = g * xc[i];
    }
    check_finite(std::span<const float>(out->data), "scale_channels");

    if (out->requires_grad) {
        NodePtr xn = x.node(), sn = s.node();
        Node* on = out.get();
        out->backward_fn = [xn, sn, on]() {
            const Shape4& s4 = xn->shape;
            const std::int64_t hw = std::int64_t(s4.h) * s4.w;
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::int64_t nc = 0; nc < std::int64_t(s4.n) * s4.c; ++nc) {
                    float g = sn->data[size_t(nc)];
                    const float* gy = on->grad.data() + nc * hw;
                    float* gx = xn->grad.data() + nc * hw;
                    for (std::int64_t i = 0; i < hw; ++i) gx[i] += g * gy[i];
                }
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                for (std::int64_t nc = 0; nc < std::int64_t(s4.n) * s4.c; ++nc) {
                    const float* gy = on->grad.data() + nc * hw;
                    const float* xc = xn->data.data() + nc * hw;
                    double a = 0.0;
                    for (std::int64_t i = 0; i < hw; ++i) a += double(gy[i]) * xc[i];
                    sn->grad[size_t(nc)] += float(a);
                }
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw Error("concat_channels: empty input list");
    const Shape4& s0 = xs[0].shape();
    int ctot = 0;
    for (const auto& t : xs) {
        const Shape4& s = t.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw Error("concat_channels: spatial/batch mismatch " + s.str() + " vs " + s0.str());
        ctot += s.c;
    }
    std::vector<NodePtr> parents;
    parents.reserve(xs.size());
    for (const auto& t : xs) parents.push_back(t.node());

    Shape4 os{s0.n, ctot, s0.h, s0.w};
    auto out = make_node(os, "concat_channels", parents);
    const std::int64_t hw = std::int64_t(s0.h) * s0.w;
    for (int n = 0; n < s0.n; ++n) {
        std::int64_t coff = 0;
        for (const auto& t : xs) {
            const Shape4& s = t.shape();
            const float* src = t.data() + std::int64_t(n) * s.c * hw;
            float* dst = out->data.data() + (std::int64_t(n) * ctot + coff) * hw;
            std::memcpy(dst, src, size_t(s.c * hw) * sizeof(float));
            coff += s.c;
        }
    }

    if (out->requires_grad) {
        std::vector<NodePtr> ps = parents;
        Node* on = out.get();
        out->backward_fn = [ps, on, ctot, hw]() {
            const int n_batch = on->shape.n;
            for (int n = 0; n < n_batch; ++n) {
                std::int64_t coff = 0;
                for (const auto& p : ps) {
                    const int c = p->shape.c;
                    if (p->requires_grad) {
                        p->ensure_grad();
                        const float* gy = on->grad.data() + (std::int64_t(n) * ctot + coff) * hw;
                        float* gx = p->grad.data() + std::int64_t(n) * c * hw;
                        for (std::int64_t i = 0; i < c * hw; ++i) gx[i] += gy[i];
                    }
                    coff += c;
                }
            }
        };
    }
    return Tensor::wrap(out);
}

namespace {

// align-corners=false source position; taps clamp to the image border.
struct LerpTap {
    int i0, i1;
    float f;
};

std::vector<LerpTap> bilinear_taps(int out_dim, int in_dim) {
    std::vector<LerpTap> taps;
    taps.resize(size_t(out_dim));
    for (int o = 0; o < out_dim; ++o) {
        float src = 0.5f * float(o) - 0.25f;
        int i0 = int(std::floor(src));
        float f = src - float(i0);
        taps[size_t(o)] = {std::clamp(i0, 0, in_dim - 1), std::clamp(i0 + 1, 0, in_dim - 1), f};
    }
    return taps;
}

}  // namespace

Tensor upsample2x(const Tensor& x, UpsampleMode mode) {
    const Shape4& xs = x.shape();
    Shape4 os{xs.n, xs.c, xs.h * 2, xs.w * 2};
    auto out = make_node(os, "upsample2x", {x.node()});
    const std::int64_t ihw = std::int64_t(xs.h) * xs.w;
    const std::int64_t ohw = std::int64_t(os.h) * os.w;

    if (mode == UpsampleMode::Nearest) {
        for (std::int64_t nc = 0; nc < std::int64_t(xs.n) * xs.c; ++nc) {
            const float* xc = x.data() + nc * ihw;
            float* yc = out->data.data() + nc * ohw;
            for (int oh = 0; oh < os.h; ++oh) {
                const float* xrow = xc + std::int64_t(oh / 2) * xs.w;
                float* yrow = yc + std::int64_t(oh) * os.w;
                for (int ow = 0; ow < os.w; ++ow) yrow[ow] = xrow[ow / 2];
            }
        }
    } else {
        auto ty = bilinear_taps(os.h, xs.h);
        auto tx = bilinear_taps(os.w, xs.w);
        for (std::int64_t nc = 0; nc < std::int64_t(xs.n) * xs.c; ++nc) {
            const float* xc = x.data() + nc * ihw;
            float* yc = out->data.data() + nc * ohw;
            for (int oh = 0; oh < os.h; ++oh) {
                const LerpTap& ry = ty[size_t(oh)];
                const float* r0 = xc + std::int64_t(ry.i0) * xs.w;
                const float* r1 = xc + std::int64_t(ry.i1) * xs.w;
                float* yrow = yc + std::int64_t(oh) * os.w;
                for (int ow = 0; ow < os.w; ++ow) {
                    const LerpTap& rx = tx[size_t(ow)];
                    float top = (1.0f - rx.f) * r0[rx.i0] + rx.f * r0[rx.i1];
                    float bot = (1.0f - rx.f) * r1[rx.i0] + rx.f * r1[rx.i1];
                    yrow[ow] = (1.0f - ry.f) * top + ry.f * bot;
                }
            }
        }
    }
    check_finite(std::span<const float>(out->data), "upsample2x");

    if (out->requires_grad) {
        NodePtr xn = x.node();
        Node* on = out.get();
        out->backward_fn = [xn, on, mode]() {
            const Shape4& s = xn->shape;
            const Shape4& os = on->shape;
            xn->ensure_grad();
            const std::int64_t ihw = std::int64_t(s.h) * s.w;
            const std::int64_t ohw = std::int64_t(os.h) * os.w;
            if (mode == UpsampleMode::Nearest) {
                for (std::int64_t nc = 0; nc < std::int64_t(s.n) * s.c; ++nc) {
                    float* gx = xn->grad.data() + nc * ihw;
                    const float* gy = on->grad.data() + nc * ohw;
                    for (int oh = 0; oh < os.h; ++oh)
                        for (int ow = 0; ow < os.w; ++ow)
                            gx[std::int64_t(oh / 2) * s.w + ow / 2] +=
                                gy[std::int64_t(oh) * os.w + ow];
                }
            } else {
                auto ty = bilinear_taps(os.h, s.h);
                auto tx = bilinear_taps(os.w, s.w);
                for (std::int64_t nc = 0; nc < std::int64_t(s.n) * s.c; ++nc) {
                    float* gx = xn->grad.data() + nc * ihw;
                    const float* gy = on->grad.data() + nc * ohw;
                    for (int oh = 0; oh < os.h; ++oh) {
                        const LerpTap& ry = ty[size_t(oh)];
                        for (int ow = 0; ow < os.w; ++ow) {
                            const LerpTap& rx = tx[size_t(ow)];
                            float g = gy[std::int64_t(oh) * os.w + ow];
                            gx[std::int64_t(ry.i0) * s.w + rx.i0] += (1.0f - ry.f) * (1.0f - rx.f) * g;
                            gx[std::int64_t(ry.i0) * s.w + rx.i1] += (1.0f - ry.f) * rx.f * g;
                            gx[std::int64_t(ry.i1) * s.w + rx.i0] += ry.f * (1.0f - rx.f) * g;
                            gx[std::int64_t(ry.i1) * s.w + rx.i1] += ry.f * rx.f * g;
                        }
                    }
                }
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor crop2d(const Tensor& x, int h, int w) {
    const Shape4& xs = x.shape();
    if (h < 1 || w < 1 || h > xs.h || w > xs.w)
        throw Error("crop2d: window " + std::to_string(h) + "x" + std::to_string(w) +
                    " does not fit in " + xs.str());
    auto out = make_node({xs.n, xs.c, h, w}, "crop2d", {x.node()});
    for (std::int64_t nc = 0; nc < std::int64_t(xs.n) * xs.c; ++nc) {
        const float* xc = x.data() + nc * xs.h * xs.w;
        float* yc = out->data.data() + nc * h * w;
        for (int r = 0; r < h; ++r)
            std::memcpy(yc + std::int64_t(r) * w, xc + std::int64_t(r) * xs.w,
                        size_t(w) * sizeof(float));
    }
    if (out->requires_grad) {
        NodePtr xn = x.node();
        Node* on = out.get();
        out->backward_fn = [xn, on, h, w]() {
            const Shape4& s = xn->shape;
            xn->ensure_grad();
            for (std::int64_t nc = 0; nc < std::int64_t(s.n) * s.c; ++nc) {
                float* gx = xn->grad.data() + nc * s.h * s.w;
                const float* gy = on->grad.data() + nc * h * w;
                for (int r = 0; r < h; ++r)
                    for (int cx = 0; cx < w; ++cx)
                        gx[std::int64_t(r) * s.w + cx] += gy[std::int64_t(r) * w + cx];
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse_loss");
    auto out = make_node({1, 1, 1, 1}, "mse_loss", {a.node(), b.node()});
    const float* ad = a.data();
    const float* bd = b.data();
    const std::int64_t n = a.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double d = double(ad[i]) - bd[i];
        acc += d * d;
    }
    out->data[0] = float(acc / double(n));
    check_finite(std::span<const float>(out->data), "mse_loss");

    if (out->requires_grad) {
        NodePtr an = a.node(), bn = b.node();
        Node* on = out.get();
        out->backward_fn = [an, bn, on, n]() {
            const float g = on->grad[0] * 2.0f / float(n);
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i)
                    an->grad[size_t(i)] += g * (an->data[size_t(i)] - bn->data[size_t(i)]);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i)
                    bn->grad[size_t(i)] -= g * (an->data[size_t(i)] - bn->data[size_t(i)]);
            }
        };
    }
    return Tensor::wrap(out);
}

}  // namespace ldrc
