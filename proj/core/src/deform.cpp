#include "ldrc/deform.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

#include "ldrc/ops.hpp"
#include "ldrc/parallel.hpp"
#include "node_util.hpp"

namespace ldrc {

namespace debug {
namespace {
std::atomic<bool> g_backward_fault{false};
std::atomic<bool> g_forward_fault{false};
}  // namespace
void set_deform_backward_fault(bool on) { g_backward_fault.store(on); }
void set_deform_forward_fault(bool on) { g_forward_fault.store(on); }
}  // namespace debug

int offset_channels(int kh, int kw) { return 2 * kh * kw; }

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

// Four corner taps of one fractional position. Out-of-range corners get
// weight zero so the zero extension needs no special cases downstream.
struct Corners {
    int y0, y1, x0, x1;
    float w00, w01, w10, w11;
    float fy, fx;
    bool y0v, y1v, x0v, x1v;
};

inline Corners corners_at(float py, float px, int h, int w) {
    Corners c;
    float fy0 = std::floor(py), fx0 = std::floor(px);
    c.y0 = int(fy0);
    c.x0 = int(fx0);
    c.y1 = c.y0 + 1;
    c.x1 = c.x0 + 1;
    c.fy = py - fy0;
    c.fx = px - fx0;
    c.y0v = c.y0 >= 0 && c.y0 < h;
    c.y1v = c.y1 >= 0 && c.y1 < h;
    c.x0v = c.x0 >= 0 && c.x0 < w;
    c.x1v = c.x1 >= 0 && c.x1 < w;
    float wy0 = 1.0f - c.fy, wy1 = c.fy;
    float wx0 = 1.0f - c.fx, wx1 = c.fx;
    c.w00 = (c.y0v && c.x0v) ? wy0 * wx0 : 0.0f;
    c.w01 = (c.y0v && c.x1v) ? wy0 * wx1 : 0.0f;
    c.w10 = (c.y1v && c.x0v) ? wy1 * wx0 : 0.0f;
    c.w11 = (c.y1v && c.x1v) ? wy1 * wx1 : 0.0f;
    return c;
}

struct DeformDims {
    int n, cin, h, w;
    int cout, kh, kw, k;
    int ho, wo;
    int stride, padding, dilation;
};

// Backward scatter into dx/dw uses a fixed number of accumulation buckets
// over contiguous row ranges, reduced in bucket order. The grouping does not
// depend on the thread count, so results are bit-identical for any value of
// num_threads().
constexpr int kReduceBuckets = 8;

void deform_forward(const float* x, const float* off, const float* w, const float* bias,
                    float* y, const DeformDims& d) {
    const std::int64_t rows = std::int64_t(d.n) * d.ho;
    const std::int64_t xplane = std::int64_t(d.h) * d.w;
    const std::int64_t oplane = std::int64_t(d.ho) * d.wo;
    parallel_for(rows, [&](std::int64_t r0, std::int64_t r1, int) {
        std::vector<float> smp(size_t(d.cin) * d.k);  // smp[ci*K + j]
        for (std::int64_t r = r0; r < r1; ++r) {
            int oh = int(r % d.ho);
            int n = int(r / d.ho);
            const float* xn = x + std::int64_t(n) * d.cin * xplane;
            const float* offn = off + std::int64_t(n) * 2 * d.k * oplane;
            for (int ow = 0; ow < d.wo; ++ow) {
                for (int j = 0; j < d.k; ++j) {
                    int u = j / d.kw, v = j % d.kw;
                    float py = float(oh * d.stride - d.padding + u * d.dilation) +
                               offn[(2 * j) * oplane + oh * d.wo + ow];
                    float px = float(ow * d.stride - d.padding + v * d.dilation) +
                               offn[(2 * j + 1) * oplane + oh * d.wo + ow];
                    Corners c = corners_at(py, px, d.h, d.w);
                    for (int ci = 0; ci < d.cin; ++ci) {
                        const float* xc = xn + ci * xplane;
                        float v00 = c.w00 != 0.0f ? xc[c.y0 * d.w + c.x0] : 0.0f;
                        float v01 = c.w01 != 0.0f ? xc[c.y0 * d.w + c.x1] : 0.0f;
                        float v10 = c.w10 != 0.0f ? xc[c.y1 * d.w + c.x0] : 0.0f;
                        float v11 = c.w11 != 0.0f ? xc[c.y1 * d.w + c.x1] : 0.0f;
                        smp[size_t(ci) * d.k + j] =
                            c.w00 * v00 + c.w01 * v01 + c.w10 * v10 + c.w11 * v11;
                    }
                }
                for (int co = 0; co < d.cout; ++co) {
                    const float* wc = w + std::int64_t(co) * d.cin * d.k;
                    double acc = bias ? double(bias[co]) : 0.0;
                    for (std::int64_t i = 0; i < std::int64_t(d.cin) * d.k; ++i)
                        acc += double(wc[i]) * smp[size_t(i)];
                    y[((std::int64_t(n) * d.cout + co) * d.ho + oh) * d.wo + ow] = float(acc);
                }
            }
        }
    });
    if (debug::g_forward_fault.load()) y[0] += 0.01f;
}

void deform_backward(const float* x, const float* off, const float* w, const float* dy,
                     float* dx, float* dwt, float* db, float* doff, const DeformDims& d) {
    const std::int64_t rows = std::int64_t(d.n) * d.ho;
    const std::int64_t xplane = std::int64_t(d.h) * d.w;
    const std::int64_t oplane = std::int64_t(d.ho) * d.wo;
    const std::int64_t xsize = std::int64_t(d.n) * d.cin * xplane;
    const std::int64_t wsize = std::int64_t(d.cout) * d.cin * d.k;

    const int buckets = int(std::min<std::int64_t>(kReduceBuckets, rows));
    const std::int64_t per = (rows + buckets - 1) / buckets;
    std::vector<std::vector<double>> dx_buf, dw_buf;
    if (dx) dx_buf.assign(size_t(buckets), std::vector<double>(size_t(xsize), 0.0));
    if (dwt) dw_buf.assign(size_t(buckets), std::vector<double>(size_t(wsize), 0.0));

    parallel_for(buckets, [&](std::int64_t b0, std::int64_t b1, int) {
        std::vector<float> smp(size_t(d.cin) * d.k);
        std::vector<float> gci(size_t(d.cin) * d.k);  // dL/d(sample value)
        for (std::int64_t b = b0; b < b1; ++b) {
            double* dxb = dx ? dx_buf[size_t(b)].data() : nullptr;
            double* dwb = dwt ? dw_buf[size_t(b)].data() : nullptr;
            std::int64_t rlo = b * per, rhi = std::min(rows, rlo + per);
            for (std::int64_t r = rlo; r < rhi; ++r) {
                int oh = int(r % d.ho);
                int n = int(r / d.ho);
                const float* xn = x + std::int64_t(n) * d.cin * xplane;
                const float* offn = off + std::int64_t(n) * 2 * d.k * oplane;
                float* doffn = doff ? doff + std::int64_t(n) * 2 * d.k * oplane : nullptr;
                for (int ow = 0; ow < d.wo; ++ow) {
                    // g[ci][j] = sum_co dy[co] * w[co][ci][j]
                    std::fill(gci.begin(), gci.end(), 0.0f);
                    for (int co = 0; co < d.cout; ++co) {
                        float g = dy[((std::int64_t(n) * d.cout + co) * d.ho + oh) * d.wo + ow];
                        if (g == 0.0f) continue;
                        const float* wc = w + std::int64_t(co) * d.cin * d.k;
                        for (std::int64_t i = 0; i < std::int64_t(d.cin) * d.k; ++i)
                            gci[size_t(i)] += g * wc[i];
                    }
                    for (int j = 0; j < d.k; ++j) {
                        int u = j / d.kw, v = j % d.kw;
                        float py = float(oh * d.stride - d.padding + u * d.dilation) +
                                   offn[(2 * j) * oplane + oh * d.wo + ow];
                        float px = float(ow * d.stride - d.padding + v * d.dilation) +
                                   offn[(2 * j + 1) * oplane + oh * d.wo + ow];
                        Corners c = corners_at(py, px, d.h, d.w);
                        double dpy = 0.0, dpx = 0.0;
                        for (int ci = 0; ci < d.cin; ++ci) {
                            const float* xc = xn + ci * xplane;
                            float v00 = c.w00 != 0.0f ? xc[c.y0 * d.w + c.x0] : 0.0f;
                            float v01 = c.w01 != 0.0f ? xc[c.y0 * d.w + c.x1] : 0.0f;
                            float v10 = c.w10 != 0.0f ? xc[c.y1 * d.w + c.x0] : 0.0f;
                            float v11 = c.w11 != 0.0f ? xc[c.y1 * d.w + c.x1] : 0.0f;
                            if (dwt)
                                smp[size_t(ci) * d.k + j] =
                                    c.w00 * v00 + c.w01 * v01 + c.w10 * v10 + c.w11 * v11;
                            float g = gci[size_t(ci) * d.k + j];
                            if (g == 0.0f) continue;
                            if (dxb) {
                                double* dxc = dxb + (std::int64_t(ci) + std::int64_t(n) * d.cin) * xplane;
                                if (c.w00 != 0.0f) dxc[c.y0 * d.w + c.x0] += double(g) * c.w00;
                                if (c.w01 != 0.0f) dxc[c.y0 * d.w + c.x1] += double(g) * c.w01;
                                if (c.w10 != 0.0f) dxc[c.y1 * d.w + c.x0] += double(g) * c.w10;
                                if (c.w11 != 0.0f) dxc[c.y1 * d.w + c.x1] += double(g) * c.w11;
                            }
                            if (doffn) {
                                // d(sample)/dpy with corner validity folded in
                                float wx0 = c.x0v ? 1.0f - c.fx : 0.0f;
                                float wx1 = c.x1v ? c.fx : 0.0f;
                                float wy0 = c.y0v ? 1.0f - c.fy : 0.0f;
                                float wy1 = c.y1v ? c.fy : 0.0f;
                                float row0 = wx0 * v00 + wx1 * v01;
                                float row1 = wx0 * v10 + wx1 * v11;
                                float col0 = wy0 * v00 + wy1 * v10;
                                float col1 = wy0 * v01 + wy1 * v11;
                                dpy += double(g) * (row1 - row0);
                                dpx += double(g) * (col1 - col0);
                            }
                        }
                        if (dwt) {
                            for (int co = 0; co < d.cout; ++co) {
                                float g =
                                    dy[((std::int64_t(n) * d.cout + co) * d.ho + oh) * d.wo + ow];
                                if (g == 0.0f) continue;
                                double* dwc = dwb + std::int64_t(co) * d.cin * d.k;
                                for (int ci = 0; ci < d.cin; ++ci)
                                    dwc[std::int64_t(ci) * d.k + j] +=
                                        double(g) * smp[size_t(ci) * d.k + j];
                            }
                        }
                        if (doffn) {
                            if (debug::g_backward_fault.load()) {
                                dpy += 0.25 * (1.0 + std::fabs(dpy));
                                dpx += 0.25 * (1.0 + std::fabs(dpx));
                            }
                            doffn[(2 * j) * oplane + oh * d.wo + ow] += float(dpy);
                            doffn[(2 * j + 1) * oplane + oh * d.wo + ow] += float(dpx);
                        }
                    }
                }
            }
        }
    });

    if (dx) {
        for (std::int64_t i = 0; i < xsize; ++i) {
            double a = 0.0;
            for (int b = 0; b < buckets; ++b) a += dx_buf[size_t(b)][size_t(i)];
            dx[i] += float(a);
        }
    }
    if (dwt) {
        for (std::int64_t i = 0; i < wsize; ++i) {
            double a = 0.0;
            for (int b = 0; b < buckets; ++b) a += dw_buf[size_t(b)][size_t(i)];
            dwt[i] += float(a);
        }
    }
    if (db) {
        for (int co = 0; co < d.cout; ++co) {
            double a = 0.0;
            for (int n = 0; n < d.n; ++n) {
                const float* dyc = dy + (std::int64_t(n) * d.cout + co) * oplane;
                for (std::int64_t i = 0; i < oplane; ++i) a += dyc[i];
            }
            db[co] += float(a);
        }
    }
}

}  // namespace

float bilinear_sample(const Tensor& x, int n, int c, float py, float px) {
    const Shape4& s = x.shape();
    Corners co = corners_at(py, px, s.h, s.w);
    const float* xc = x.data() + (std::int64_t(n) * s.c + c) * s.h * s.w;
    float v = 0.0f;
    if (co.w00 != 0.0f) v += co.w00 * xc[co.y0 * s.w + co.x0];
    if (co.w01 != 0.0f) v += co.w01 * xc[co.y0 * s.w + co.x1];
    if (co.w10 != 0.0f) v += co.w10 * xc[co.y1 * s.w + co.x0];
    if (co.w11 != 0.0f) v += co.w11 * xc[co.y1 * s.w + co.x1];
    return v;
}

BilinearGrad bilinear_sample_grad(const Tensor& x, int n, int c, float py, float px) {
    const Shape4& s = x.shape();
    Corners co = corners_at(py, px, s.h, s.w);
    const float* xc = x.data() + (std::int64_t(n) * s.c + c) * s.h * s.w;
    float v00 = co.w00 != 0.0f ? xc[co.y0 * s.w + co.x0] : 0.0f;
    float v01 = co.w01 != 0.0f ? xc[co.y0 * s.w + co.x1] : 0.0f;
    float v10 = co.w10 != 0.0f ? xc[co.y1 * s.w + co.x0] : 0.0f;
    float v11 = co.w11 != 0.0f ? xc[co.y1 * s.w + co.x1] : 0.0f;
    float wx0 = co.x0v ? 1.0f - co.fx : 0.0f;
    float wx1 = co.x1v ? co.fx : 0.0f;
    float wy0 = co.y0v ? 1.0f - co.fy : 0.0f;
    float wy1 = co.y1v ? co.fy : 0.0f;
    BilinearGrad g;
    g.value = co.w00 * v00 + co.w01 * v01 + co.w10 * v10 + co.w11 * v11;
    g.d_py = (wx0 * v10 + wx1 * v11) - (wx0 * v00 + wx1 * v01);
    g.d_px = (wy0 * v01 + wy1 * v11) - (wy0 * v00 + wy1 * v10);
    return g;
}

Tensor deform_conv2d(const Tensor& x, const Tensor& offsets, const Tensor& weight,
                     const std::optional<Tensor>& bias, int stride, int padding, int dilation) {
    const Shape4& xs = x.shape();
    const Shape4& ws = weight.shape();
    const Shape4& os = offsets.shape();
    if (stride < 1 || dilation < 1 || padding < 0)
        throw Error("deform_conv2d: invalid stride/padding/dilation");
    if (xs.c != ws.c)
        throw Error("deform_conv2d: input has " + std::to_string(xs.c) +
                    " channels, kernel expects " + std::to_string(ws.c));
    int ho = conv_out_dim(xs.h, ws.h, stride, padding, dilation);
    int wo = conv_out_dim(xs.w, ws.w, stride, padding, dilation);
    if (ho <= 0 || wo <= 0)
        throw Error("deform_conv2d: non-positive output dims for input " + xs.str());
    int k = ws.h * ws.w;
    if (!(os == Shape4{xs.n, 2 * k, ho, wo}))
        throw Error("deform_conv2d: offset field must be " +
                    Shape4{xs.n, 2 * k, ho, wo}.str() + ", got " + os.str());
    if (bias && !(bias->shape() == Shape4{1, ws.n, 1, 1}))
        throw Error("deform_conv2d: bias shape must be 1x" + std::to_string(ws.n) + "x1x1");

    DeformDims d{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, ws.w, k, ho, wo, stride, padding, dilation};

    std::vector<NodePtr> parents{x.node(), offsets.node(), weight.node()};
    if (bias) parents.push_back(bias->node());
    auto out = detail::make_op_node({xs.n, ws.n, ho, wo}, "deform_conv2d", std::move(parents));
    deform_forward(x.data(), offsets.data(), weight.data(), bias ? bias->data() : nullptr,
                   out->data.data(), d);
    check_finite(std::span<const float>(out->data), "deform_conv2d");

    if (out->requires_grad) {
        NodePtr xn = x.node(), on_off = offsets.node(), wn = weight.node();
        NodePtr bn = bias ? bias->node() : nullptr;
        Node* on = out.get();
        out->backward_fn = [xn, on_off, wn, bn, on, d]() {
            float* dx = nullptr;
            float* dw = nullptr;
            float* db = nullptr;
            float* doff = nullptr;
            if (xn->requires_grad) {
                xn->ensure_grad();
                dx = xn->grad.data();
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                dw = wn->grad.data();
            }
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                db = bn->grad.data();
            }
            if (on_off->requires_grad) {
                on_off->ensure_grad();
                doff = on_off->grad.data();
            }
            deform_backward(xn->data.data(), on_off->data.data(), wn->data.data(),
                            on->grad.data(), dx, dw, db, doff, d);
        };
    }
    return Tensor::wrap(out);
}

}  // namespace ldrc
