#include "ldrc/reference.hpp"

#include "ldrc/ops.hpp"

namespace ldrc::ref {

Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias,
              int stride, int padding, int dilation) {
    const Shape4& xs = x.shape();
    const Shape4& ws = weight.shape();
    if (xs.c != ws.c) throw Error("ref::conv2d: channel mismatch");
    int ho = conv_out_dim(xs.h, ws.h, stride, padding, dilation);
    int wo = conv_out_dim(xs.w, ws.w, stride, padding, dilation);
    if (ho <= 0 || wo <= 0) throw Error("ref::conv2d: non-positive output dims");

    Tensor y({xs.n, ws.n, ho, wo});
    for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < ws.n; ++co)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    double a = bias ? double(bias->at(0, co, 0, 0)) : 0.0;
                    for (int ci = 0; ci < xs.c; ++ci)
                        for (int u = 0; u < ws.h; ++u)
                            for (int v = 0; v < ws.w; ++v) {
                                int ih = oh * stride - padding + u * dilation;
                                int iw = ow * stride - padding + v * dilation;
                                if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
                                a += double(weight.at(co, ci, u, v)) * x.at(n, ci, ih, iw);
                            }
                    y.at(n, co, oh, ow) = float(a);
                }
    return y;
}

Tensor shift_image(const Tensor& x, int dy, int dx) {
    const Shape4& s = x.shape();
    Tensor y(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    int sh = h - dy, sw = w - dx;
                    y.at(n, c, h, w) = (sh >= 0 && sh < s.h && sw >= 0 && sw < s.w)
                                           ? x.at(n, c, sh, sw)
                                           : 0.0f;
                }
    return y;
}

}  // namespace ldrc::ref
