#include "nadjust/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>

#include "nadjust/errors.hpp"

namespace nadjust {

namespace {

struct ConvDims {
    int pad, ho, wo;
};

ConvDims conv_dims(const Tensor4& x, const Tensor4& w, int stride) {
    int k = w.h;
    assert(w.w == k && k % 2 == 1);
    assert(w.c == x.c);
    return {(k - 1) / 2, (x.h + stride - 1) / stride, (x.w + stride - 1) / stride};
}

// Valid output range so that ow*stride - pad + kw stays inside [0, in_w).
inline void out_range(int kw, int pad, int stride, int in_w, int out_w, int& lo, int& hi) {
    int shift = pad - kw;  // iw = ow*stride - shift
    lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
    hi = std::min(out_w - 1, (in_w - 1 + shift) / stride);
}

}  // namespace

void conv2d_forward(const Tensor4& x, const Tensor4& w, Tensor4& y, int stride) {
    auto [pad, ho, wo] = conv_dims(x, w, stride);
    assert(y.n == x.n && y.c == w.n && y.h == ho && y.w == wo);

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < x.n; ++n) {
        for (int co = 0; co < w.n; ++co) {
            double* yp = y.plane(n, co);
            std::memset(yp, 0, sizeof(double) * static_cast<size_t>(ho) * wo);
            for (int ci = 0; ci < x.c; ++ci) {
                const double* xp = x.plane(n, ci);
                const double* wp = w.plane(co, ci);
                for (int kh = 0; kh < w.h; ++kh) {
                    for (int kw = 0; kw < w.w; ++kw) {
                        double wv = wp[kh * w.w + kw];
                        int lo, hi;
                        out_range(kw, pad, stride, x.w, wo, lo, hi);
                        for (int oh = 0; oh < ho; ++oh) {
                            int ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= x.h) continue;
                            const double* xrow = xp + static_cast<size_t>(ih) * x.w;
                            double* yrow = yp + static_cast<size_t>(oh) * wo;
                            int base = -pad + kw;
                            for (int ow = lo; ow <= hi; ++ow)
                                yrow[ow] += wv * xrow[ow * stride + base];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const Tensor4& dy, const Tensor4& w, Tensor4& dx, int stride) {
    int k = w.h, pad = (k - 1) / 2;
    assert(dx.c == w.c && dy.c == w.n && dy.n == dx.n);

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < dx.n; ++n) {
        for (int ci = 0; ci < dx.c; ++ci) {
            double* dxp = dx.plane(n, ci);
            std::memset(dxp, 0, sizeof(double) * static_cast<size_t>(dx.h) * dx.w);
            for (int co = 0; co < dy.c; ++co) {
                const double* dyp = dy.plane(n, co);
                const double* wp = w.plane(co, ci);
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        double wv = wp[kh * k + kw];
                        int lo, hi;
                        out_range(kw, pad, stride, dx.w, dy.w, lo, hi);
                        for (int oh = 0; oh < dy.h; ++oh) {
                            int ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= dx.h) continue;
                            double* dxrow = dxp + static_cast<size_t>(ih) * dx.w;
                            const double* dyrow = dyp + static_cast<size_t>(oh) * dy.w;
                            int base = -pad + kw;
                            for (int ow = lo; ow <= hi; ++ow)
                                dxrow[ow * stride + base] += wv * dyrow[ow];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weights(const Tensor4& x, const Tensor4& dy, Tensor4& dw, int stride) {
    int k = dw.h, pad = (k - 1) / 2;
    assert(dw.n == dy.c && dw.c == x.c);

#pragma omp parallel for schedule(static)
    for (int co = 0; co < dw.n; ++co) {
        for (int ci = 0; ci < x.c; ++ci) {
            double* dwp = dw.plane(co, ci);
            for (int kh = 0; kh < k; ++kh) {
                for (int kw = 0; kw < k; ++kw) {
                    int lo, hi;
                    out_range(kw, pad, stride, x.w, dy.w, lo, hi);
                    double acc = 0.0;
                    for (int n = 0; n < x.n; ++n) {
                        const double* xp = x.plane(n, ci);
                        const double* dyp = dy.plane(n, co);
                        for (int oh = 0; oh < dy.h; ++oh) {
                            int ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= x.h) continue;
                            const double* xrow = xp + static_cast<size_t>(ih) * x.w;
                            const double* dyrow = dyp + static_cast<size_t>(oh) * dy.w;
                            int base = -pad + kw;
                            for (int ow = lo; ow <= hi; ++ow)
                                acc += dyrow[ow] * xrow[ow * stride + base];
                        }
                    }
                    dwp[kh * k + kw] = acc;
                }
            }
        }
    }
}

void batchnorm_forward_train(const Tensor4& x, std::span<const double> gamma,
                             std::span<const double> beta, Tensor4& y,
                             std::vector<double>& batch_mean, std::vector<double>& batch_var,
                             double eps) {
    batch_mean.assign(x.c, 0.0);
    batch_var.assign(x.c, 0.0);
    const double count = static_cast<double>(x.n) * x.h * x.w;
    const size_t plane = static_cast<size_t>(x.h) * x.w;

#pragma omp parallel for schedule(static)
    for (int c = 0; c < x.c; ++c) {
        double sum = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const double* xp = x.plane(n, c);
            for (size_t i = 0; i < plane; ++i) sum += xp[i];
        }
        double mean = sum / count;
        double sq = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const double* xp = x.plane(n, c);
            for (size_t i = 0; i < plane; ++i) {
                double d = xp[i] - mean;
                sq += d * d;
            }
        }
        double var = sq / count;
        batch_mean[c] = mean;
        batch_var[c] = var;
        double inv = 1.0 / std::sqrt(var + eps);
        double g = gamma[c], b = beta[c];
        for (int n = 0; n < x.n; ++n) {
            const double* xp = x.plane(n, c);
            double* yp = y.plane(n, c);
            for (size_t i = 0; i < plane; ++i) yp[i] = g * (xp[i] - mean) * inv + b;
        }
    }
}

void batchnorm_forward_eval(const Tensor4& x, std::span<const double> gamma,
                            std::span<const double> beta, std::span<const double> running_mean,
                            std::span<const double> running_var, Tensor4& y, double eps) {
    const size_t plane = static_cast<size_t>(x.h) * x.w;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            double inv = 1.0 / std::sqrt(running_var[c] + eps);
            double scale = gamma[c] * inv;
            double shift = beta[c] - running_mean[c] * scale;
            const double* xp = x.plane(n, c);
            double* yp = y.plane(n, c);
            for (size_t i = 0; i < plane; ++i) yp[i] = scale * xp[i] + shift;
        }
    }
}

void batchnorm_backward(const Tensor4& x, const Tensor4& dy, std::span<const double> gamma,
                        const std::vector<double>& batch_mean, const std::vector<double>& batch_var,
                        Tensor4& dx, std::vector<double>& dgamma, std::vector<double>& dbeta,
                        double eps) {
    dgamma.assign(x.c, 0.0);
    dbeta.assign(x.c, 0.0);
    const double count = static_cast<double>(x.n) * x.h * x.w;
    const size_t plane = static_cast<size_t>(x.h) * x.w;

#pragma omp parallel for schedule(static)
    for (int c = 0; c < x.c; ++c) {
        double mean = batch_mean[c];
        double inv = 1.0 / std::sqrt(batch_var[c] + eps);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const double* xp = x.plane(n, c);
            const double* dyp = dy.plane(n, c);
            for (size_t i = 0; i < plane; ++i) {
                double xhat = (xp[i] - mean) * inv;
                sum_dy += dyp[i];
                sum_dy_xhat += dyp[i] * xhat;
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        double g = gamma[c];
        for (int n = 0; n < x.n; ++n) {
            const double* xp = x.plane(n, c);
            const double* dyp = dy.plane(n, c);
            double* dxp = dx.plane(n, c);
            for (size_t i = 0; i < plane; ++i) {
                double xhat = (xp[i] - mean) * inv;
                dxp[i] = g * inv * (dyp[i] - sum_dy / count - xhat * sum_dy_xhat / count);
            }
        }
    }
}

void relu_forward(const Tensor4& x, Tensor4& y) {
    const size_t total = x.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < total; ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
}

void relu_backward(const Tensor4& x, const Tensor4& dy, Tensor4& dx) {
    const size_t total = x.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < total; ++i) dx.data[i] = x.data[i] > 0.0 ? dy.data[i] : 0.0;
}

void avgpool_forward(const Tensor4& x, Tensor4& y, int kernel, int stride) {
    const size_t plane = static_cast<size_t>(x.h) * x.w;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            const double* xp = x.plane(n, c);
            double* yp = y.plane(n, c);
            if (kernel == 0) {
                double sum = 0.0;
                for (size_t i = 0; i < plane; ++i) sum += xp[i];
                yp[0] = sum / static_cast<double>(plane);
            } else {
                double norm = 1.0 / (static_cast<double>(kernel) * kernel);
                for (int oh = 0; oh < y.h; ++oh) {
                    for (int ow = 0; ow < y.w; ++ow) {
                        double sum = 0.0;
                        for (int kh = 0; kh < kernel; ++kh)
                            for (int kw = 0; kw < kernel; ++kw)
                                sum += xp[static_cast<size_t>(oh * stride + kh) * x.w +
                                          (ow * stride + kw)];
                        yp[static_cast<size_t>(oh) * y.w + ow] = sum * norm;
                    }
                }
            }
        }
    }
}

void avgpool_backward(const Tensor4& dy, Tensor4& dx, int kernel, int stride) {
    const size_t plane = static_cast<size_t>(dx.h) * dx.w;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < dx.n; ++n) {
        for (int c = 0; c < dx.c; ++c) {
            double* dxp = dx.plane(n, c);
            const double* dyp = dy.plane(n, c);
            std::memset(dxp, 0, sizeof(double) * plane);
            if (kernel == 0) {
                double g = dyp[0] / static_cast<double>(plane);
                for (size_t i = 0; i < plane; ++i) dxp[i] = g;
            } else {
                double norm = 1.0 / (static_cast<double>(kernel) * kernel);
                for (int oh = 0; oh < dy.h; ++oh)
                    for (int ow = 0; ow < dy.w; ++ow) {
                        double g = dyp[static_cast<size_t>(oh) * dy.w + ow] * norm;
                        for (int kh = 0; kh < kernel; ++kh)
                            for (int kw = 0; kw < kernel; ++kw)
                                dxp[static_cast<size_t>(oh * stride + kh) * dx.w +
                                    (ow * stride + kw)] += g;
                    }
            }
        }
    }
}

void fc_forward(const Tensor4& x, std::span<const double> w, std::span<const double> b,
                Tensor4& y) {
    const int in = x.c * x.h * x.w;
    const int out = y.c;
    assert(w.size() == static_cast<size_t>(in) * out && b.size() == static_cast<size_t>(out));

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < x.n; ++n) {
        for (int o = 0; o < out; ++o) {
            const double* xp = x.data.data() + static_cast<size_t>(n) * in;
            const double* wp = w.data() + static_cast<size_t>(o) * in;
            double acc = b[o];
            for (int i = 0; i < in; ++i) acc += wp[i] * xp[i];
            y.data[static_cast<size_t>(n) * out + o] = acc;
        }
    }
}

void fc_backward(const Tensor4& x, std::span<const double> w, const Tensor4& dy, Tensor4& dx,
                 std::vector<double>& dw, std::vector<double>& db) {
    const int in = x.c * x.h * x.w;
    const int out = dy.c;
    dw.assign(static_cast<size_t>(out) * in, 0.0);
    db.assign(out, 0.0);

#pragma omp parallel for schedule(static)
    for (int o = 0; o < out; ++o) {
        double* dwp = dw.data() + static_cast<size_t>(o) * in;
        double acc_b = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const double g = dy.data[static_cast<size_t>(n) * out + o];
            const double* xp = x.data.data() + static_cast<size_t>(n) * in;
            acc_b += g;
            for (int i = 0; i < in; ++i) dwp[i] += g * xp[i];
        }
        db[o] = acc_b;
    }

#pragma omp parallel for schedule(static)
    for (int n = 0; n < x.n; ++n) {
        double* dxp = dx.data.data() + static_cast<size_t>(n) * in;
        const double* dyp = dy.data.data() + static_cast<size_t>(n) * out;
        for (int i = 0; i < in; ++i) {
            double acc = 0.0;
            for (int o = 0; o < out; ++o) acc += w[static_cast<size_t>(o) * in + i] * dyp[o];
            dxp[i] = acc;
        }
    }
}

void add_forward_padded(const Tensor4& a, const Tensor4& b, Tensor4& y) {
    assert(a.h == b.h && a.w == b.w && y.c == std::max(a.c, b.c));
    const size_t plane = static_cast<size_t>(a.h) * a.w;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < a.n; ++n) {
        for (int c = 0; c < y.c; ++c) {
            double* yp = y.plane(n, c);
            if (c < a.c && c < b.c) {
                const double* ap = a.plane(n, c);
                const double* bp = b.plane(n, c);
                for (size_t i = 0; i < plane; ++i) yp[i] = ap[i] + bp[i];
            } else if (c < a.c) {
                std::memcpy(yp, a.plane(n, c), plane * sizeof(double));
            } else {
                std::memcpy(yp, b.plane(n, c), plane * sizeof(double));
            }
        }
    }
}

void add_backward_padded(const Tensor4& dy, Tensor4& da, Tensor4& db) {
    const size_t plane = static_cast<size_t>(dy.h) * dy.w;
#pragma omp parallel for schedule(static)
    for (int n = 0; n < dy.n; ++n) {
        for (int c = 0; c < da.c; ++c)
            std::memcpy(da.plane(n, c), dy.plane(n, c), plane * sizeof(double));
        for (int c = 0; c < db.c; ++c)
            std::memcpy(db.plane(n, c), dy.plane(n, c), plane * sizeof(double));
    }
}

void concat_forward(const std::vector<const Tensor4*>& inputs, Tensor4& y) {
    const size_t plane = static_cast<size_t>(y.h) * y.w;
#pragma omp parallel for schedule(static)
    for (int n = 0; n < y.n; ++n) {
        int c_off = 0;
        for (const Tensor4* in : inputs) {
            for (int c = 0; c < in->c; ++c)
                std::memcpy(y.plane(n, c_off + c), in->plane(n, c), plane * sizeof(double));
            c_off += in->c;
        }
    }
}

void concat_backward(const Tensor4& dy, const std::vector<Tensor4*>& grads) {
    const size_t plane = static_cast<size_t>(dy.h) * dy.w;
#pragma omp parallel for schedule(static)
    for (int n = 0; n < dy.n; ++n) {
        int c_off = 0;
        for (Tensor4* g : grads) {
            for (int c = 0; c < g->c; ++c)
                std::memcpy(g->plane(n, c), dy.plane(n, c_off + c), plane * sizeof(double));
            c_off += g->c;
        }
    }
}

void apply_channel_mask(Tensor4& x, std::span<const double> mask) {
    const size_t plane = static_cast<size_t>(x.h) * x.w;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            double m = mask[static_cast<size_t>(n) * x.c + c];
            if (m == 1.0) continue;
            double* xp = x.plane(n, c);
            for (size_t i = 0; i < plane; ++i) xp[i] *= m;
        }
    }
}

double softmax_xent(const Tensor4& scores, std::span<const int> labels, Tensor4& dscores) {
    const int classes = scores.c;
    const double inv_n = 1.0 / scores.n;
    double loss = 0.0;
    for (int n = 0; n < scores.n; ++n) {
        const double* s = scores.data.data() + static_cast<size_t>(n) * classes;
        double* d = dscores.data.data() + static_cast<size_t>(n) * classes;
        double mx = s[0];
        for (int k = 1; k < classes; ++k) mx = std::max(mx, s[k]);
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) sum += std::exp(s[k] - mx);
        double log_sum = std::log(sum);
        loss += (log_sum - (s[labels[n]] - mx)) * inv_n;
        for (int k = 0; k < classes; ++k) {
            double p = std::exp(s[k] - mx) / sum;
            d[k] = (p - (k == labels[n] ? 1.0 : 0.0)) * inv_n;
        }
    }
    return loss;
}

void sgd_momentum_update(std::span<double> param, std::span<const double> grad,
                         std::span<double> velocity, double lr, double momentum) {
    const size_t total = param.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < total; ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] -= lr * velocity[i];
    }
}

namespace ref {

void conv2d_forward(const Tensor4& x, const Tensor4& w, Tensor4& y, int stride) {
    int k = w.h, pad = (k - 1) / 2;
    for (int n = 0; n < x.n; ++n)
        for (int co = 0; co < w.n; ++co)
            for (int oh = 0; oh < y.h; ++oh)
                for (int ow = 0; ow < y.w; ++ow) {
                    double acc = 0.0;
                    for (int ci = 0; ci < x.c; ++ci)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                int ih = oh * stride - pad + kh;
                                int iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= x.h || iw < 0 || iw >= x.w) continue;
                                acc += w.at(co, ci, kh, kw) * x.at(n, ci, ih, iw);
                            }
                    y.at(n, co, oh, ow) = acc;
                }
}

void conv2d_backward_input(const Tensor4& dy, const Tensor4& w, Tensor4& dx, int stride) {
    int k = w.h, pad = (k - 1) / 2;
    dx.fill(0.0);
    for (int n = 0; n < dx.n; ++n)
        for (int ci = 0; ci < dx.c; ++ci)
            for (int co = 0; co < dy.c; ++co)
                for (int kh = 0; kh < k; ++kh)
                    for (int kw = 0; kw < k; ++kw)
                        for (int oh = 0; oh < dy.h; ++oh)
                            for (int ow = 0; ow < dy.w; ++ow) {
                                int ih = oh * stride - pad + kh;
                                int iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= dx.h || iw < 0 || iw >= dx.w) continue;
                                dx.at(n, ci, ih, iw) += w.at(co, ci, kh, kw) * dy.at(n, co, oh, ow);
                            }
}

void conv2d_backward_weights(const Tensor4& x, const Tensor4& dy, Tensor4& dw, int stride) {
    int k = dw.h, pad = (k - 1) / 2;
    for (int co = 0; co < dw.n; ++co)
        for (int ci = 0; ci < dw.c; ++ci)
            for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                    double acc = 0.0;
                    for (int n = 0; n < x.n; ++n)
                        for (int oh = 0; oh < dy.h; ++oh)
                            for (int ow = 0; ow < dy.w; ++ow) {
                                int ih = oh * stride - pad + kh;
                                int iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= x.h || iw < 0 || iw >= x.w) continue;
                                acc += dy.at(n, co, oh, ow) * x.at(n, ci, ih, iw);
                            }
                    dw.at(co, ci, kh, kw) = acc;
                }
}

void batchnorm_forward_train(const Tensor4& x, std::span<const double> gamma,
                             std::span<const double> beta, Tensor4& y,
                             std::vector<double>& batch_mean, std::vector<double>& batch_var,
                             double eps) {
    batch_mean.assign(x.c, 0.0);
    batch_var.assign(x.c, 0.0);
    const double count = static_cast<double>(x.n) * x.h * x.w;
    for (int c = 0; c < x.c; ++c) {
        double sum = 0.0;
        for (int n = 0; n < x.n; ++n)
            for (int i = 0; i < x.h * x.w; ++i) sum += x.plane(n, c)[i];
        double mean = sum / count;
        double sq = 0.0;
        for (int n = 0; n < x.n; ++n)
            for (int i = 0; i < x.h * x.w; ++i) {
                double d = x.plane(n, c)[i] - mean;
                sq += d * d;
            }
        double var = sq / count;
        batch_mean[c] = mean;
        batch_var[c] = var;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int n = 0; n < x.n; ++n)
            for (int i = 0; i < x.h * x.w; ++i)
                y.plane(n, c)[i] = gamma[c] * (x.plane(n, c)[i] - mean) * inv + beta[c];
    }
}

void avgpool_forward(const Tensor4& x, Tensor4& y, int kernel, int stride) {
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c) {
            if (kernel == 0) {
                double sum = 0.0;
                for (int i = 0; i < x.h * x.w; ++i) sum += x.plane(n, c)[i];
                y.at(n, c, 0, 0) = sum / (static_cast<double>(x.h) * x.w);
            } else {
                for (int oh = 0; oh < y.h; ++oh)
                    for (int ow = 0; ow < y.w; ++ow) {
                        double sum = 0.0;
                        for (int kh = 0; kh < kernel; ++kh)
                            for (int kw = 0; kw < kernel; ++kw)
                                sum += x.at(n, c, oh * stride + kh, ow * stride + kw);
                        y.at(n, c, oh, ow) = sum / (static_cast<double>(kernel) * kernel);
                    }
            }
        }
}

void fc_forward(const Tensor4& x, std::span<const double> w, std::span<const double> b,
                Tensor4& y) {
    const int in = x.c * x.h * x.w;
    const int out = y.c;
    for (int n = 0; n < x.n; ++n)
        for (int o = 0; o < out; ++o) {
            double acc = b[o];
            for (int i = 0; i < in; ++i)
                acc += w[static_cast<size_t>(o) * in + i] *
                       x.data[static_cast<size_t>(n) * in + i];
            y.data[static_cast<size_t>(n) * out + o] = acc;
        }
}

}  // namespace ref

}  // namespace nadjust
