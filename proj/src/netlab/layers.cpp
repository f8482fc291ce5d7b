#include "tlab/netlab/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

namespace tlab::netlab {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

namespace {

void im2col(const float* x, int ch, int h, int w, int k, int stride, int pad,
            float* cols, int col_stride, int col_offset) {
    // cols is (ch*k*k, total_cols) row-major; this sample's columns start at col_offset
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    for (int c = 0; c < ch; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                float* row = cols + (std::size_t)((c * k + ki) * k + kj) * col_stride + col_offset;
                const float* xc = x + (std::size_t)c * h * w;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) {
                        for (int oj = 0; oj < ow; ++oj) row[oi * ow + oj] = 0.0f;
                        continue;
                    }
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        row[oi * ow + oj] = (jj >= 0 && jj < w) ? xc[ii * w + jj] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* cols, int ch, int h, int w, int k, int stride, int pad,
            float* dx, int col_stride, int col_offset) {
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    for (int c = 0; c < ch; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const float* row = cols + (std::size_t)((c * k + ki) * k + kj) * col_stride + col_offset;
                float* xc = dx + (std::size_t)c * h * w;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (jj >= 0 && jj < w) xc[ii * w + jj] += row[oi * ow + oj];
                    }
                }
            }
        }
    }
}

} // namespace

Conv2d::Conv2d(int in_c, int out_c, int k, int s, int p)
    : in_ch(in_c), out_ch(out_c), ksize(k), stride(s), pad(p),
      weight({out_c, in_c, k, k}), bias({out_c}) {}

Tensor Conv2d::forward(const Tensor& x, bool train) {
    if (x.rank() != 4 || x.dim(1) != in_ch)
        throw ShapeError("Conv2d: expected (B," + std::to_string(in_ch) + ",H,W), got " + shape_str(x.shape));
    const int b = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_extent(h), ow = out_extent(w);
    if (oh <= 0 || ow <= 0) throw ShapeError("Conv2d: input too small for kernel");
    const int patch = in_ch * ksize * ksize;
    const int per = oh * ow;

    Tensor cols({patch, b * per});
    for (int s = 0; s < b; ++s)
        im2col(x.ptr() + (std::size_t)s * in_ch * h * w, in_ch, h, w, ksize, stride, pad,
               cols.ptr(), b * per, s * per);

    Tensor ymat({out_ch, b * per});
    {
        CMapM wm(weight.value.ptr(), out_ch, patch);
        CMapM cm(cols.ptr(), patch, b * per);
        MapM ym(ymat.ptr(), out_ch, b * per);
        ym.noalias() = wm * cm;
    }
    Tensor y({b, out_ch, oh, ow});
    for (int s = 0; s < b; ++s)
        for (int o = 0; o < out_ch; ++o) {
            const float* src = ymat.ptr() + (std::size_t)o * b * per + (std::size_t)s * per;
            float* dst = y.ptr() + ((std::size_t)s * out_ch + o) * per;
            const float bv = bias.value[o];
            for (int p = 0; p < per; ++p) dst[p] = src[p] + bv;
        }

    if (train) {
        cols_ = std::move(cols);
        x_shape_ = x.shape;
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const int b = x_shape_[0], h = x_shape_[2], w = x_shape_[3];
    const int oh = dy.dim(2), ow = dy.dim(3);
    const int patch = in_ch * ksize * ksize;
    const int per = oh * ow;

    Tensor dymat({out_ch, b * per});
    for (int s = 0; s < b; ++s)
        for (int o = 0; o < out_ch; ++o) {
            const float* src = dy.ptr() + ((std::size_t)s * out_ch + o) * per;
            float* dst = dymat.ptr() + (std::size_t)o * b * per + (std::size_t)s * per;
            double acc = 0.0;
            for (int p = 0; p < per; ++p) { dst[p] = src[p]; acc += src[p]; }
            bias.grad[o] += static_cast<float>(acc);
        }

    {
        CMapM dym(dymat.ptr(), out_ch, b * per);
        CMapM cm(cols_.ptr(), patch, b * per);
        MapM gw(weight.grad.ptr(), out_ch, patch);
        gw.noalias() += dym * cm.transpose();
    }

    Tensor dcols({patch, b * per});
    {
        CMapM wm(weight.value.ptr(), out_ch, patch);
        CMapM dym(dymat.ptr(), out_ch, b * per);
        MapM dcm(dcols.ptr(), patch, b * per);
        dcm.noalias() = wm.transpose() * dym;
    }

    Tensor dx(x_shape_);
    for (int s = 0; s < b; ++s)
        col2im(dcols.ptr(), in_ch, h, w, ksize, stride, pad,
               dx.ptr() + (std::size_t)s * in_ch * h * w, b * per, s * per);
    return dx;
}

BatchNorm2d::BatchNorm2d(int ch)
    : channels(ch), gamma({ch}), beta({ch}), running_mean({ch}), running_var({ch}) {
    gamma.value.fill(1.0f);
    running_var.fill(1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != channels) throw ShapeError("BatchNorm2d: channel mismatch");
    const std::size_t per = (std::size_t)h * w;
    const std::size_t n = (std::size_t)b * per;
    Tensor y(x.shape);
    if (train) {
        xhat_ = Tensor(x.shape);
        invstd_.assign(c, 0.0f);
        x_shape_ = x.shape;
        for (int ch = 0; ch < c; ++ch) {
            double mean = 0.0, var = 0.0;
            for (int s = 0; s < b; ++s) {
                const float* xc = x.ptr() + ((std::size_t)s * c + ch) * per;
                for (std::size_t p = 0; p < per; ++p) mean += xc[p];
            }
            mean /= (double)n;
            for (int s = 0; s < b; ++s) {
                const float* xc = x.ptr() + ((std::size_t)s * c + ch) * per;
                for (std::size_t p = 0; p < per; ++p) {
                    const double d = xc[p] - mean;
                    var += d * d;
                }
            }
            var /= (double)n;
            const float istd = 1.0f / std::sqrt((float)var + eps);
            invstd_[ch] = istd;
            const float g = gamma.value[ch], bt = beta.value[ch], mu = (float)mean;
            for (int s = 0; s < b; ++s) {
                const float* xc = x.ptr() + ((std::size_t)s * c + ch) * per;
                float* xh = xhat_.ptr() + ((std::size_t)s * c + ch) * per;
                float* yc = y.ptr() + ((std::size_t)s * c + ch) * per;
                for (std::size_t p = 0; p < per; ++p) {
                    xh[p] = (xc[p] - mu) * istd;
                    yc[p] = g * xh[p] + bt;
                }
            }
            const double unbiased = n > 1 ? var * (double)n / (double)(n - 1) : var;
            running_mean[ch] = (1.0f - momentum) * running_mean[ch] + momentum * (float)mean;
            running_var[ch] = (1.0f - momentum) * running_var[ch] + momentum * (float)unbiased;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            const float istd = 1.0f / std::sqrt(running_var[ch] + eps);
            const float g = gamma.value[ch], bt = beta.value[ch], mu = running_mean[ch];
            for (int s = 0; s < b; ++s) {
                const float* xc = x.ptr() + ((std::size_t)s * c + ch) * per;
                float* yc = y.ptr() + ((std::size_t)s * c + ch) * per;
                for (std::size_t p = 0; p < per; ++p) yc[p] = g * (xc[p] - mu) * istd + bt;
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    const int b = x_shape_[0], c = x_shape_[1], h = x_shape_[2], w = x_shape_[3];
    const std::size_t per = (std::size_t)h * w;
    const double n = (double)b * per;
    Tensor dx(x_shape_);
    for (int ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int s = 0; s < b; ++s) {
            const float* d = dy.ptr() + ((std::size_t)s * c + ch) * per;
            const float* xh = xhat_.ptr() + ((std::size_t)s * c + ch) * per;
            for (std::size_t p = 0; p < per; ++p) {
                sum_dy += d[p];
                sum_dy_xhat += (double)d[p] * xh[p];
            }
        }
        gamma.grad[ch] += (float)sum_dy_xhat;
        beta.grad[ch] += (float)sum_dy;
        const float g = gamma.value[ch], istd = invstd_[ch];
        const float k1 = (float)(sum_dy / n), k2 = (float)(sum_dy_xhat / n);
        for (int s = 0; s < b; ++s) {
            const float* d = dy.ptr() + ((std::size_t)s * c + ch) * per;
            const float* xh = xhat_.ptr() + ((std::size_t)s * c + ch) * per;
            float* dxc = dx.ptr() + ((std::size_t)s * c + ch) * per;
            for (std::size_t p = 0; p < per; ++p)
                dxc[p] = g * istd * (d[p] - k1 - xh[p] * k2);
        }
    }
    return dx;
}

LayerNorm::LayerNorm(int d) : dim(d), gamma({d}), beta({d}) { gamma.value.fill(1.0f); }

Tensor LayerNorm::forward(const Tensor& x, bool train) {
    const int d = dim;
    if (x.shape.empty() || x.shape.back() != d) throw ShapeError("LayerNorm: trailing dim mismatch");
    const std::size_t rows = x.numel() / d;
    Tensor y(x.shape);
    if (train) {
        xhat_ = Tensor(x.shape);
        invstd_.assign(rows, 0.0f);
        x_shape_ = x.shape;
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x.ptr() + r * d;
        float* yr = y.ptr() + r * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += xr[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dv = xr[i] - mean;
            var += dv * dv;
        }
        var /= d;
        const float istd = 1.0f / std::sqrt((float)var + eps);
        if (train) {
            invstd_[r] = istd;
            float* xh = xhat_.ptr() + r * d;
            for (int i = 0; i < d; ++i) {
                xh[i] = ((float)(xr[i] - mean)) * istd;
                yr[i] = gamma.value[i] * xh[i] + beta.value[i];
            }
        } else {
            for (int i = 0; i < d; ++i)
                yr[i] = gamma.value[i] * ((float)(xr[i] - mean)) * istd + beta.value[i];
        }
    }
    return y;
}

Tensor LayerNorm::backward(const Tensor& dy) {
    const int d = dim;
    const std::size_t rows = dy.numel() / d;
    Tensor dx(x_shape_);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* dr = dy.ptr() + r * d;
        const float* xh = xhat_.ptr() + r * d;
        float* dxr = dx.ptr() + r * d;
        double sum_g = 0.0, sum_gx = 0.0;
        for (int i = 0; i < d; ++i) {
            const double gdy = (double)dr[i] * gamma.value[i];
            sum_g += gdy;
            sum_gx += gdy * xh[i];
            gamma.grad[i] += dr[i] * xh[i];
            beta.grad[i] += dr[i];
        }
        const float istd = invstd_[r];
        const float k1 = (float)(sum_g / d), k2 = (float)(sum_gx / d);
        for (int i = 0; i < d; ++i)
            dxr[i] = istd * (dr[i] * gamma.value[i] - k1 - xh[i] * k2);
    }
    return dx;
}

Linear::Linear(int in_f, int out_f)
    : in_features(in_f), out_features(out_f), weight({out_f, in_f}), bias({out_f}) {}

Tensor Linear::forward(const Tensor& x, bool train) {
    if (x.rank() != 2 || x.dim(1) != in_features) throw ShapeError("Linear: bad input " + shape_str(x.shape));
    const int rows = x.dim(0);
    Tensor y({rows, out_features});
    {
        CMapM xm(x.ptr(), rows, in_features);
        CMapM wm(weight.value.ptr(), out_features, in_features);
        MapM ym(y.ptr(), rows, out_features);
        ym.noalias() = xm * wm.transpose();
        ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.value.ptr(), out_features);
    }
    if (train) x_cache_ = x;
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    const int rows = dy.dim(0);
    Tensor dx({rows, in_features});
    CMapM dym(dy.ptr(), rows, out_features);
    CMapM xm(x_cache_.ptr(), rows, in_features);
    CMapM wm(weight.value.ptr(), out_features, in_features);
    MapM gw(weight.grad.ptr(), out_features, in_features);
    gw.noalias() += dym.transpose() * xm;
    // strict-order accumulation (colwise().sum() is alignment-sensitive)
    for (int r = 0; r < rows; ++r) {
        const float* row = dy.ptr() + (std::size_t)r * out_features;
        for (int j = 0; j < out_features; ++j) bias.grad[j] += row[j];
    }
    MapM dxm(dx.ptr(), rows, in_features);
    dxm.noalias() = dym * wm;
    return dx;
}

Tensor ReLU::forward(const Tensor& x, bool train) {
    Tensor y(x.shape);
    if (train) mask_ = Tensor(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const bool pos = x[i] > 0.0f;
        y[i] = pos ? x[i] : 0.0f;
        if (train) mask_[i] = pos ? 1.0f : 0.0f;
    }
    return y;
}

Tensor ReLU::backward(const Tensor& dy) const {
    Tensor dx(dy.shape);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
}

namespace {

constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)

// SIMD transcendentals run on fixed aligned scratch so the packet/scalar lane
// split depends only on the element index, never on heap addresses; otherwise
// bitwise reproducibility across network instances would break.
constexpr int kVecChunk = 1024;
using AlignedArr = Eigen::Map<Eigen::ArrayXf, Eigen::Aligned64>;

template <class F>
void chunked_unary(const float* src, float* dst, std::size_t n, F&& f) {
    alignas(64) float buf[kVecChunk];
    for (std::size_t start = 0; start < n; start += kVecChunk) {
        const int len = (int)std::min<std::size_t>(kVecChunk, n - start);
        std::memcpy(buf, src + start, sizeof(float) * len);
        f(AlignedArr(buf, len));
        std::memcpy(dst + start, buf, sizeof(float) * len);
    }
}

template <class F>
void chunked_binary(const float* a, const float* b, float* dst, std::size_t n, F&& f) {
    alignas(64) float ba[kVecChunk];
    alignas(64) float bb[kVecChunk];
    for (std::size_t start = 0; start < n; start += kVecChunk) {
        const int len = (int)std::min<std::size_t>(kVecChunk, n - start);
        std::memcpy(ba, a + start, sizeof(float) * len);
        std::memcpy(bb, b + start, sizeof(float) * len);
        f(AlignedArr(ba, len), AlignedArr(bb, len));
        std::memcpy(dst + start, ba, sizeof(float) * len);
    }
}

} // namespace

Tensor Gelu::forward(const Tensor& x, bool train) {
    Tensor y(x.shape);
    chunked_unary(x.ptr(), y.ptr(), x.numel(), [](AlignedArr v) {
        v = 0.5f * v * (1.0f + (kGeluC * (v + 0.044715f * v.cube())).tanh());
    });
    if (train) x_cache_ = x;
    return y;
}

Tensor Gelu::backward(const Tensor& dy) const {
    Tensor dx(dy.shape);
    chunked_binary(x_cache_.ptr(), dy.ptr(), dx.ptr(), dy.numel(),
                   [](AlignedArr xv, AlignedArr dyv) {
                       const auto t = (kGeluC * (xv + 0.044715f * xv.cube())).tanh();
                       const auto du = kGeluC * (1.0f + 3.0f * 0.044715f * xv.square());
                       xv = dyv * (0.5f * (1.0f + t) + 0.5f * xv * (1.0f - t.square()) * du);
                   });
    return dx;
}

void softmax_rows(float* data, int rows, int cols) {
    if (cols > kVecChunk) throw ShapeError("softmax_rows: row too wide");
    alignas(64) float buf[kVecChunk];
    for (int r = 0; r < rows; ++r) {
        float* row = data + (std::size_t)r * cols;
        float mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        std::memcpy(buf, row, sizeof(float) * cols);
        AlignedArr m(buf, cols);
        m = (m - mx).exp();
        double sum = 0.0;  // strict-order reduction
        for (int c = 0; c < cols; ++c) sum += buf[c];
        const float inv = (float)(1.0 / sum);
        for (int c = 0; c < cols; ++c) row[c] = buf[c] * inv;
    }
}

SelfAttention::SelfAttention(int d, int h)
    : dim(d), heads(h), head_dim(d / h), qkv(d, 3 * d), proj(d, d) {
    if (d % h != 0) throw ConfigError("SelfAttention: dim not divisible by heads");
}

Tensor SelfAttention::forward(const Tensor& x, bool train, Tensor* capture) {
    const int b = x.dim(0), t = x.dim(1), d = x.dim(2);
    batch_ = b;
    tokens_ = t;
    Tensor x2d = x;
    x2d.shape = {b * t, d};
    Tensor qkv_out = qkv.forward(x2d, train);  // (B*T, 3D)

    Tensor attn({b, heads, t, t});
    Tensor ctx({b * t, d});
    const float scale = 1.0f / std::sqrt((float)head_dim);
    const int hd = head_dim;
    for (int s = 0; s < b; ++s) {
        for (int h = 0; h < heads; ++h) {
            using Stride = Eigen::Stride<Eigen::Dynamic, 1>;
            Eigen::Map<const MatRM, 0, Stride> q(
                qkv_out.ptr() + (std::size_t)s * t * 3 * d + h * hd, t, hd, Stride(3 * d, 1));
            Eigen::Map<const MatRM, 0, Stride> k(
                qkv_out.ptr() + (std::size_t)s * t * 3 * d + d + h * hd, t, hd, Stride(3 * d, 1));
            Eigen::Map<const MatRM, 0, Stride> v(
                qkv_out.ptr() + (std::size_t)s * t * 3 * d + 2 * d + h * hd, t, hd, Stride(3 * d, 1));
            MapM a(attn.ptr() + ((std::size_t)s * heads + h) * t * t, t, t);
            a.noalias() = q * k.transpose() * scale;
            softmax_rows(a.data(), t, t);
            Eigen::Map<MatRM, 0, Stride> o(ctx.ptr() + (std::size_t)s * t * d + h * hd, t, hd,
                                           Stride(d, 1));
            o.noalias() = a * v;
        }
    }
    if (capture) *capture = attn;
    Tensor out = proj.forward(ctx, train);
    out.shape = {b, t, d};
    if (train) {
        attn_ = std::move(attn);
        qkv_out_ = std::move(qkv_out);
        ctx_ = std::move(ctx);
    }
    return out;
}

Tensor SelfAttention::backward(const Tensor& dy) {
    const int b = batch_, t = tokens_, d = dim, hd = head_dim;
    Tensor dy2d = dy;
    dy2d.shape = {b * t, d};
    Tensor dctx = proj.backward(dy2d);  // (B*T, D)

    Tensor dqkv({b * t, 3 * d});
    const float scale = 1.0f / std::sqrt((float)hd);
    using Stride = Eigen::Stride<Eigen::Dynamic, 1>;
    MatRM da(t, t), ds(t, t);
    for (int s = 0; s < b; ++s) {
        for (int h = 0; h < heads; ++h) {
            Eigen::Map<const MatRM, 0, Stride> q(
                qkv_out_.ptr() + (std::size_t)s * t * 3 * d + h * hd, t, hd, Stride(3 * d, 1));
            Eigen::Map<const MatRM, 0, Stride> k(
                qkv_out_.ptr() + (std::size_t)s * t * 3 * d + d + h * hd, t, hd, Stride(3 * d, 1));
            Eigen::Map<const MatRM, 0, Stride> v(
                qkv_out_.ptr() + (std::size_t)s * t * 3 * d + 2 * d + h * hd, t, hd, Stride(3 * d, 1));
            CMapM a(attn_.ptr() + ((std::size_t)s * heads + h) * t * t, t, t);
            Eigen::Map<const MatRM, 0, Stride> dctx_h(
                dctx.ptr() + (std::size_t)s * t * d + h * hd, t, hd, Stride(d, 1));

            da.noalias() = dctx_h * v.transpose();
            // softmax backward row-wise: ds = (da - rowsum(da*a)) * a
            for (int r = 0; r < t; ++r) {
                double dot = 0.0;  // strict-order dot keeps results address-free
                for (int c2 = 0; c2 < t; ++c2) dot += (double)a(r, c2) * da(r, c2);
                ds.row(r) = (da.row(r).array() - (float)dot) * a.row(r).array();
            }
            Eigen::Map<MatRM, 0, Stride> dq(dqkv.ptr() + (std::size_t)s * t * 3 * d + h * hd, t, hd,
                                            Stride(3 * d, 1));
            Eigen::Map<MatRM, 0, Stride> dk(
                dqkv.ptr() + (std::size_t)s * t * 3 * d + d + h * hd, t, hd, Stride(3 * d, 1));
            Eigen::Map<MatRM, 0, Stride> dv(
                dqkv.ptr() + (std::size_t)s * t * 3 * d + 2 * d + h * hd, t, hd, Stride(3 * d, 1));
            dq.noalias() = ds * k * scale;
            dk.noalias() = ds.transpose() * q * scale;
            dv.noalias() = a.transpose() * dctx_h;
        }
    }
    Tensor dx = qkv.backward(dqkv);
    dx.shape = {b, t, d};
    return dx;
}

Mlp::Mlp(int dim, int hidden) : fc1(dim, hidden), fc2(hidden, dim) {}

Tensor Mlp::forward(const Tensor& x, bool train) {
    const int b = x.dim(0), t = x.dim(1), d = x.dim(2);
    Tensor x2d = x;
    x2d.shape = {b * t, d};
    Tensor y = fc2.forward(act.forward(fc1.forward(x2d, train), train), train);
    y.shape = {b, t, d};
    return y;
}

Tensor Mlp::backward(const Tensor& dy) {
    const int b = dy.dim(0), t = dy.dim(1), d = dy.dim(2);
    Tensor dy2d = dy;
    dy2d.shape = {b * t, d};
    Tensor dx = fc1.backward(act.backward(fc2.backward(dy2d)));
    dx.shape = {b, t, d};
    return dx;
}

TransformerBlock::TransformerBlock(int dim, int heads, int mlp_hidden)
    : ln1(dim), ln2(dim), attn(dim, heads), mlp(dim, mlp_hidden) {}

Tensor TransformerBlock::forward(const Tensor& x, bool train, Tensor* attn_out, Tensor* attn_maps) {
    Tensor a = attn.forward(ln1.forward(x, train), train, attn_maps);
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] += x[i];
    if (attn_out) *attn_out = a;
    Tensor m = mlp.forward(ln2.forward(a, train), train);
    for (std::size_t i = 0; i < m.numel(); ++i) m[i] += a[i];
    return m;
}

Tensor TransformerBlock::backward(const Tensor& dy) {
    Tensor da = ln2.backward(mlp.backward(dy));
    for (std::size_t i = 0; i < da.numel(); ++i) da[i] += dy[i];
    Tensor dx = ln1.backward(attn.backward(da));
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += da[i];
    return dx;
}

BasicBlock::BasicBlock(int in_ch, int out_ch, int stride)
    : conv1(in_ch, out_ch, 3, stride, 1),
      conv2(out_ch, out_ch, 3, 1, 1),
      bn1(out_ch),
      bn2(out_ch) {
    if (stride != 1 || in_ch != out_ch) {
        has_down = true;
        down_conv = Conv2d(in_ch, out_ch, 1, stride, 0);
        down_bn = BatchNorm2d(out_ch);
    }
}

Tensor BasicBlock::forward(const Tensor& x, bool train) {
    Tensor out = relu1.forward(bn1.forward(conv1.forward(x, train), train), train);
    out = bn2.forward(conv2.forward(out, train), train);
    Tensor sc = has_down ? down_bn.forward(down_conv.forward(x, train), train) : x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += sc[i];
    return relu2.forward(out, train);
}

Tensor BasicBlock::backward(const Tensor& dy) {
    Tensor d = relu2.backward(dy);
    Tensor dmain = conv1.backward(bn1.backward(relu1.backward(conv2.backward(bn2.backward(d)))));
    Tensor dskip = has_down ? down_conv.backward(down_bn.backward(d)) : d;
    for (std::size_t i = 0; i < dmain.numel(); ++i) dmain[i] += dskip[i];
    return dmain;
}

Tensor global_avg_pool(const Tensor& x) {
    const int b = x.dim(0), c = x.dim(1);
    const std::size_t per = (std::size_t)x.dim(2) * x.dim(3);
    Tensor y({b, c});
    for (int s = 0; s < b; ++s)
        for (int ch = 0; ch < c; ++ch) {
            const float* xc = x.ptr() + ((std::size_t)s * c + ch) * per;
            double acc = 0.0;
            for (std::size_t p = 0; p < per; ++p) acc += xc[p];
            y[(std::size_t)s * c + ch] = (float)(acc / (double)per);
        }
    return y;
}

Tensor gap_backward(const Tensor& dy, const std::vector<int>& x_shape) {
    const int b = x_shape[0], c = x_shape[1];
    const std::size_t per = (std::size_t)x_shape[2] * x_shape[3];
    Tensor dx(x_shape);
    const float inv = 1.0f / (float)per;
    for (int s = 0; s < b; ++s)
        for (int ch = 0; ch < c; ++ch) {
            const float g = dy[(std::size_t)s * c + ch] * inv;
            float* d = dx.ptr() + ((std::size_t)s * c + ch) * per;
            for (std::size_t p = 0; p < per; ++p) d[p] = g;
        }
    return dx;
}

} // namespace tlab::netlab
