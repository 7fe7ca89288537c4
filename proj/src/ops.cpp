#include "mpct/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <initializer_list>
#include <utility>

namespace mpct::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

// Per-op tape context: which tape (if any) records this op, and which inputs
// actually need gradients. Both are frozen at creation time; tapes never gain
// or lose nodes between forward and backward within a phase.
struct Ctx {
    Tape* tape = nullptr;
    std::vector<bool> need;

    bool track() const { return tape != nullptr; }
    bool need_any() const {
        for (bool b : need) {
            if (b) {
                return true;
            }
        }
        return false;
    }
};

Ctx make_ctx_from(const std::vector<const Tensor*>& ins) {
    Ctx c;
    if (!grad_enabled()) {
        return c;
    }
    for (const Tensor* t : ins) {
        if (Tape* tp = t->node()->tape) {
            if (c.tape && c.tape != tp) {
                throw ConfigError("op mixes tensors recorded on different tapes");
            }
            c.tape = tp;
        }
    }
    if (!c.tape) {
        return c;
    }
    for (const Tensor* t : ins) {
        c.need.push_back(t->node()->tape == c.tape);
    }
    return c;
}

Ctx make_ctx(std::initializer_list<const Tensor*> ins) {
    return make_ctx_from(std::vector<const Tensor*>(ins));
}

void push_record(Ctx& c, std::vector<std::shared_ptr<TensorData>> ins, const Tensor& out,
                 const char* op, std::function<void()> fn) {
    TapeRecord rec;
    rec.inputs = std::move(ins);
    rec.output = out.ptr();
    rec.op = op;
    rec.backward = std::move(fn);
    c.tape->record(std::move(rec));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + format_shape(a.shape()) + " vs " +
                         format_shape(b.shape()) + " do not match");
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.shape().size() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + format_shape(t.shape()));
    }
}

// Elementwise unary helper: y = f(x), dx += dy * df(x, y).
Tensor unary_map(const Tensor& x, const char* op, double (*f)(double),
                 double (*df)(double, double)) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    const double* xv = x.values().data();
    double* yv = out.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        yv[i] = f(xv[i]);
    }
    check_finite(out.values(), op);
    Ctx c = make_ctx({&x});
    if (c.track()) {
        TensorData* xn = x.node();
        TensorData* yn = out.node();
        push_record(c, {x.ptr()}, out, op, [xn, yn, df, n]() {
            const double* g = yn->g.data();
            const double* xv2 = xn->v.data();
            const double* yv2 = yn->v.data();
            double* xg = xn->g.data();
            for (std::size_t i = 0; i < n; ++i) {
                xg[i] += g[i] * df(xv2[i], yv2[i]);
            }
        });
    }
    return out;
}

constexpr double kSigmoidClamp = 1e-12;
constexpr double kLogFloor = 1e-8;

// im2col layout: row = c*KH*KW + kh*KW + kw, col = oh*Wout + ow.
void im2col(const double* img, int C, int H, int W, int KH, int KW, int stride, int pad,
            int Hout, int Wout, double* col) {
    for (int c = 0; c < C; ++c) {
        for (int kh = 0; kh < KH; ++kh) {
            for (int kw = 0; kw < KW; ++kw) {
                double* row = col + (static_cast<std::size_t>(c) * KH * KW + kh * KW + kw) *
                                        (static_cast<std::size_t>(Hout) * Wout);
                for (int oh = 0; oh < Hout; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) {
                        for (int ow = 0; ow < Wout; ++ow) {
                            row[oh * Wout + ow] = 0.0;
                        }
                        continue;
                    }
                    const double* src = img + (static_cast<std::size_t>(c) * H + ih) * W;
                    for (int ow = 0; ow < Wout; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        row[oh * Wout + ow] = (iw < 0 || iw >= W) ? 0.0 : src[iw];
                    }
                }
            }
        }
    }
}

// Scatter-add inverse of im2col (same indexing), accumulating into img.
void col2im_add(const double* col, int C, int H, int W, int KH, int KW, int stride, int pad,
                int Hout, int Wout, double* img) {
    for (int c = 0; c < C; ++c) {
        for (int kh = 0; kh < KH; ++kh) {
            for (int kw = 0; kw < KW; ++kw) {
                const double* row = col + (static_cast<std::size_t>(c) * KH * KW + kh * KW + kw) *
                                              (static_cast<std::size_t>(Hout) * Wout);
                for (int oh = 0; oh < Hout; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) {
                        continue;
                    }
                    double* dst = img + (static_cast<std::size_t>(c) * H + ih) * W;
                    for (int ow = 0; ow < Wout; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < W) {
                            dst[iw] += row[oh * Wout + ow];
                        }
                    }
                }
            }
        }
    }
}

thread_local std::vector<double> g_col_scratch;
thread_local std::vector<double> g_col_scratch2;

double* col_scratch(std::size_t n) {
    if (g_col_scratch.size() < n) {
        g_col_scratch.resize(n);
    }
    return g_col_scratch.data();
}

double* col_scratch2(std::size_t n) {
    if (g_col_scratch2.size() < n) {
        g_col_scratch2.resize(n);
    }
    return g_col_scratch2.data();
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.values()[i] = a.values()[i] + b.values()[i];
    }
    check_finite(out.values(), "add");
    Ctx c = make_ctx({&a, &b});
    if (c.track()) {
        TensorData* an = a.node();
        TensorData* bn = b.node();
        TensorData* yn = out.node();
        const bool na = c.need[0], nb = c.need[1];
        push_record(c, {a.ptr(), b.ptr()}, out, "add", [an, bn, yn, na, nb, n]() {
            const double* g = yn->g.data();
            if (na) {
                for (std::size_t i = 0; i < n; ++i) {
                    an->g[i] += g[i];
                }
            }
            if (nb) {
                for (std::size_t i = 0; i < n; ++i) {
                    bn->g[i] += g[i];
                }
            }
        });
    }
    return out;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "subtract");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.values()[i] = a.values()[i] - b.values()[i];
    }
    check_finite(out.values(), "subtract");
    Ctx c = make_ctx({&a, &b});
    if (c.track()) {
        TensorData* an = a.node();
        TensorData* bn = b.node();
        TensorData* yn = out.node();
        const bool na = c.need[0], nb = c.need[1];
        push_record(c, {a.ptr(), b.ptr()}, out, "subtract", [an, bn, yn, na, nb, n]() {
            const double* g = yn->g.data();
            if (na) {
                for (std::size_t i = 0; i < n; ++i) {
                    an->g[i] += g[i];
                }
            }
            if (nb) {
                for (std::size_t i = 0; i < n; ++i) {
                    bn->g[i] -= g[i];
                }
            }
        });
    }
    return out;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "multiply");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.values()[i] = a.values()[i] * b.values()[i];
    }
    check_finite(out.values(), "multiply");
    Ctx c = make_ctx({&a, &b});
    if (c.track()) {
        TensorData* an = a.node();
        TensorData* bn = b.node();
        TensorData* yn = out.node();
        const bool na = c.need[0], nb = c.need[1];
        push_record(c, {a.ptr(), b.ptr()}, out, "multiply", [an, bn, yn, na, nb, n]() {
            const double* g = yn->g.data();
            if (na) {
                for (std::size_t i = 0; i < n; ++i) {
                    an->g[i] += g[i] * bn->v[i];
                }
            }
            if (nb) {
                for (std::size_t i = 0; i < n; ++i) {
                    bn->g[i] += g[i] * an->v[i];
                }
            }
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double cval) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.values()[i] = a.values()[i] + cval;
    }
    check_finite(out.values(), "add_scalar");
    Ctx c = make_ctx({&a});
    if (c.track()) {
        TensorData* an = a.node();
        TensorData* yn = out.node();
        push_record(c, {a.ptr()}, out, "add_scalar", [an, yn, n]() {
            for (std::size_t i = 0; i < n; ++i) {
                an->g[i] += yn->g[i];
            }
        });
    }
    return out;
}

Tensor mul_scalar(const Tensor& a, double cval) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.values()[i] = a.values()[i] * cval;
    }
    check_finite(out.values(), "mul_scalar");
    Ctx c = make_ctx({&a});
    if (c.track()) {
        TensorData* an = a.node();
        TensorData* yn = out.node();
        push_record(c, {a.ptr()}, out, "mul_scalar", [an, yn, cval, n]() {
            for (std::size_t i = 0; i < n; ++i) {
                an->g[i] += yn->g[i] * cval;
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int M = a.shape()[0], K = a.shape()[1];
    const int K2 = b.shape()[0], N = b.shape()[1];
    if (K != K2) {
        throw ShapeError("matmul: inner extents of " + format_shape(a.shape()) + " and " +
                         format_shape(b.shape()) + " differ");
    }
    Tensor out = Tensor::zeros({M, N});
    {
        CMatMap am(a.values().data(), M, K);
        CMatMap bm(b.values().data(), K, N);
        MatMap ym(out.values().data(), M, N);
        ym.noalias() = am * bm;
    }
    check_finite(out.values(), "matmul");
    Ctx c = make_ctx({&a, &b});
    if (c.track()) {
        TensorData* an = a.node();
        TensorData* bn = b.node();
        TensorData* yn = out.node();
        const bool na = c.need[0], nb = c.need[1];
        push_record(c, {a.ptr(), b.ptr()}, out, "matmul", [an, bn, yn, na, nb, M, K, N]() {
            CMatMap gy(yn->g.data(), M, N);
            if (na) {
                CMatMap bm(bn->v.data(), K, N);
                MatMap ga(an->g.data(), M, K);
                ga.noalias() += gy * bm.transpose();
            }
            if (nb) {
                CMatMap am(an->v.data(), M, K);
                MatMap gb(bn->g.data(), K, N);
                gb.noalias() += am.transpose() * gy;
            }
        });
    }
    return out;
}

Tensor add_bias_rows(const Tensor& m, const Tensor& bias) {
    require_rank(m, 2, "add_bias_rows");
    require_rank(bias, 1, "add_bias_rows");
    const int N = m.shape()[0], C = m.shape()[1];
    if (bias.shape()[0] != C) {
        throw ShapeError("add_bias_rows: bias " + format_shape(bias.shape()) +
                         " does not match row width of " + format_shape(m.shape()));
    }
    Tensor out = Tensor::zeros(m.shape());
    for (int r = 0; r < N; ++r) {
        for (int col = 0; col < C; ++col) {
            out.values()[static_cast<std::size_t>(r) * C + col] =
                m.values()[static_cast<std::size_t>(r) * C + col] + bias.values()[col];
        }
    }
    check_finite(out.values(), "add_bias_rows");
    Ctx c = make_ctx({&m, &bias});
    if (c.track()) {
        TensorData* mn = m.node();
        TensorData* bn = bias.node();
        TensorData* yn = out.node();
        const bool nm = c.need[0], nb = c.need[1];
        push_record(c, {m.ptr(), bias.ptr()}, out, "add_bias_rows", [mn, bn, yn, nm, nb, N, C]() {
            const double* g = yn->g.data();
            if (nm) {
                for (std::size_t i = 0; i < static_cast<std::size_t>(N) * C; ++i) {
                    mn->g[i] += g[i];
                }
            }
            if (nb) {
                for (int r = 0; r < N; ++r) {
                    for (int col = 0; col < C; ++col) {
                        bn->g[col] += g[static_cast<std::size_t>(r) * C + col];
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    require_rank(b, 1, "conv2d bias");
    const int N = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Cout = w.shape()[0], KH = w.shape()[2], KW = w.shape()[3];
    if (w.shape()[1] != Cin) {
        throw ShapeError("conv2d: weight " + format_shape(w.shape()) +
                         " does not accept input " + format_shape(x.shape()));
    }
    if (b.shape()[0] != Cout) {
        throw ShapeError("conv2d: bias " + format_shape(b.shape()) + " does not match weight " +
                         format_shape(w.shape()));
    }
    const int Hout = (H + 2 * padding - KH) / stride + 1;
    const int Wout = (W + 2 * padding - KW) / stride + 1;
    if (Hout <= 0 || Wout <= 0) {
        throw ShapeError("conv2d: kernel " + format_shape(w.shape()) + " does not fit input " +
                         format_shape(x.shape()));
    }
    Tensor out = Tensor::zeros({N, Cout, Hout, Wout});
    const std::size_t krows = static_cast<std::size_t>(Cin) * KH * KW;
    const std::size_t cols = static_cast<std::size_t>(Hout) * Wout;
    const std::size_t in_stride = static_cast<std::size_t>(Cin) * H * W;
    const std::size_t out_stride = static_cast<std::size_t>(Cout) * cols;
    {
        double* col = col_scratch(krows * cols);
        CMatMap wm(w.values().data(), Cout, static_cast<int>(krows));
        for (int n = 0; n < N; ++n) {
            im2col(x.values().data() + n * in_stride, Cin, H, W, KH, KW, stride, padding, Hout,
                   Wout, col);
            CMatMap cm(col, static_cast<int>(krows), static_cast<int>(cols));
            MatMap ym(out.values().data() + n * out_stride, Cout, static_cast<int>(cols));
            ym.noalias() = wm * cm;
            for (int co = 0; co < Cout; ++co) {
                ym.row(co).array() += b.values()[co];
            }
        }
    }
    check_finite(out.values(), "conv2d");
    Ctx c = make_ctx({&x, &w, &b});
    if (c.track() && c.need_any()) {
        TensorData* xn = x.node();
        TensorData* wn = w.node();
        TensorData* bn = b.node();
        TensorData* yn = out.node();
        const bool nx = c.need[0], nw = c.need[1], nb = c.need[2];
        push_record(c, {x.ptr(), w.ptr(), b.ptr()}, out, "conv2d",
                    [xn, wn, bn, yn, nx, nw, nb, N, Cin, H, W, Cout, KH, KW, stride, padding,
                     Hout, Wout, krows, cols, in_stride, out_stride]() {
                        double* col = col_scratch(krows * cols);
                        double* dcol = nx ? col_scratch2(krows * cols) : nullptr;
                        CMatMap wm(wn->v.data(), Cout, static_cast<int>(krows));
                        for (int n = 0; n < N; ++n) {
                            CMatMap gy(yn->g.data() + n * out_stride, Cout,
                                       static_cast<int>(cols));
                            if (nw) {
                                // recompute the unfolding instead of caching it
                                im2col(xn->v.data() + n * in_stride, Cin, H, W, KH, KW, stride,
                                       padding, Hout, Wout, col);
                                CMatMap cm(col, static_cast<int>(krows), static_cast<int>(cols));
                                MatMap gw(wn->g.data(), Cout, static_cast<int>(krows));
                                gw.noalias() += gy * cm.transpose();
                            }
                            if (nb) {
                                for (int co = 0; co < Cout; ++co) {
                                    bn->g[co] += gy.row(co).sum();
                                }
                            }
                            if (nx) {
                                MatMap dcm(dcol, static_cast<int>(krows),
                                           static_cast<int>(cols));
                                dcm.noalias() = wm.transpose() * gy;
                                col2im_add(dcol, Cin, H, W, KH, KW, stride, padding, Hout, Wout,
                                           xn->g.data() + n * in_stride);
                            }
                        }
                    });
    }
    return out;
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                         int padding, int output_padding) {
    require_rank(x, 4, "transposed_conv2d input");
    require_rank(w, 4, "transposed_conv2d weight");
    require_rank(b, 1, "transposed_conv2d bias");
    const int N = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Cout = w.shape()[1], KH = w.shape()[2], KW = w.shape()[3];
    if (w.shape()[0] != Cin) {
        throw ShapeError("transposed_conv2d: weight " + format_shape(w.shape()) +
                         " does not accept input " + format_shape(x.shape()));
    }
    if (b.shape()[0] != Cout) {
        throw ShapeError("transposed_conv2d: bias " + format_shape(b.shape()) +
                         " does not match weight " + format_shape(w.shape()));
    }
    const int Hout = (H - 1) * stride - 2 * padding + KH + output_padding;
    const int Wout = (W - 1) * stride - 2 * padding + KW + output_padding;
    if (Hout <= 0 || Wout <= 0) {
        throw ShapeError("transposed_conv2d: output collapses for input " +
                         format_shape(x.shape()));
    }
    // Geometry check: running conv2d's size map on the produced output must
    // land back on the input grid, otherwise the scatter misses positions.
    if ((Hout + 2 * padding - KH) / stride + 1 != H ||
        (Wout + 2 * padding - KW) / stride + 1 != W) {
        throw ShapeError("transposed_conv2d: stride/padding/output_padding combination is not "
                         "invertible for input " + format_shape(x.shape()));
    }
    Tensor out = Tensor::zeros({N, Cout, Hout, Wout});
    const std::size_t krows = static_cast<std::size_t>(Cout) * KH * KW;
    const std::size_t cols = static_cast<std::size_t>(H) * W;
    const std::size_t in_stride = static_cast<std::size_t>(Cin) * cols;
    const std::size_t out_stride = static_cast<std::size_t>(Cout) * Hout * Wout;
    {
        double* col = col_scratch(krows * cols);
        CMatMap wm(w.values().data(), Cin, static_cast<int>(krows));
        for (int n = 0; n < N; ++n) {
            CMatMap xm(x.values().data() + n * in_stride, Cin, static_cast<int>(cols));
            MatMap cm(col, static_cast<int>(krows), static_cast<int>(cols));
            cm.noalias() = wm.transpose() * xm;
            double* y = out.values().data() + n * out_stride;
            col2im_add(col, Cout, Hout, Wout, KH, KW, stride, padding, H, W, y);
            for (int co = 0; co < Cout; ++co) {
                const double bc = b.values()[co];
                double* plane = y + static_cast<std::size_t>(co) * Hout * Wout;
                for (std::size_t i = 0; i < static_cast<std::size_t>(Hout) * Wout; ++i) {
                    plane[i] += bc;
                }
            }
        }
    }
    check_finite(out.values(), "transposed_conv2d");
    Ctx c = make_ctx({&x, &w, &b});
    if (c.track() && c.need_any()) {
        TensorData* xn = x.node();
        TensorData* wn = w.node();
        TensorData* bn = b.node();
        TensorData* yn = out.node();
        const bool nx = c.need[0], nw = c.need[1], nb = c.need[2];
        push_record(c, {x.ptr(), w.ptr(), b.ptr()}, out, "transposed_conv2d",
                    [xn, wn, bn, yn, nx, nw, nb, N, Cin, H, W, Cout, KH, KW, stride, padding,
                     Hout, Wout, krows, cols, in_stride, out_stride]() {
                        double* dcol = col_scratch(krows * cols);
                        CMatMap wm(wn->v.data(), Cin, static_cast<int>(krows));
                        for (int n = 0; n < N; ++n) {
                            const double* gy = yn->g.data() + n * out_stride;
                            im2col(gy, Cout, Hout, Wout, KH, KW, stride, padding, H, W, dcol);
                            CMatMap dcm(dcol, static_cast<int>(krows), static_cast<int>(cols));
                            if (nx) {
                                MatMap gx(xn->g.data() + n * in_stride, Cin,
                                          static_cast<int>(cols));
                                gx.noalias() += wm * dcm;
                            }
                            if (nw) {
                                CMatMap xm(xn->v.data() + n * in_stride, Cin,
                                           static_cast<int>(cols));
                                MatMap gw(wn->g.data(), Cin, static_cast<int>(krows));
                                gw.noalias() += xm * dcm.transpose();
                            }
                            if (nb) {
                                for (int co = 0; co < Cout; ++co) {
                                    const double* plane =
                                        gy + static_cast<std::size_t>(co) * Hout * Wout;
                                    double s = 0.0;
                                    for (std::size_t i = 0;
                                         i < static_cast<std::size_t>(Hout) * Wout; ++i) {
                                        s += plane[i];
                                    }
                                    bn->g[co] += s;
                                }
                            }
                        }
                    });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    return unary_map(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
    return unary_map(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_map(
        x, "sigmoid",
        [](double v) {
            const double y = 1.0 / (1.0 + std::exp(-v));
            if (y < kSigmoidClamp) {
                return kSigmoidClamp;
            }
            if (y > 1.0 - kSigmoidClamp) {
                return 1.0 - kSigmoidClamp;
            }
            return y;
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log_stable(const Tensor& x) {
    return unary_map(
        x, "log_stable", [](double v) { return std::log(v < kLogFloor ? kLogFloor : v); },
        [](double v, double) { return v < kLogFloor ? 0.0 : 1.0 / v; });
}

Tensor exp(const Tensor& x) {
    return unary_map(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor mean_reduce(const Tensor& x) {
    const std::size_t n = x.numel();
    double s = 0.0;
    for (double v : x.values()) {
        s += v;
    }
    Tensor out = Tensor::scalar_value(s / static_cast<double>(n));
    check_finite(out.values(), "mean_reduce");
    Ctx c = make_ctx({&x});
    if (c.track()) {
        TensorData* xn = x.node();
        TensorData* yn = out.node();
        push_record(c, {x.ptr()}, out, "mean_reduce", [xn, yn, n]() {
            const double g = yn->g[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                xn->g[i] += g;
            }
        });
    }
    return out;
}

Tensor l1_distance(const Tensor& a, const Tensor& b, L1Mode mode) {
    require_same_shape(a, b, "l1_distance");
    const std::size_t n = a.numel();
    if (a.shape().empty()) {
        throw ShapeError("l1_distance: rank-0 input");
    }
    const double scale = mode == L1Mode::ElementMean
                             ? 1.0 / static_cast<double>(n)
                             : 1.0 / static_cast<double>(a.shape()[0]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += std::abs(a.values()[i] - b.values()[i]);
    }
    Tensor out = Tensor::scalar_value(s * scale);
    check_finite(out.values(), "l1_distance");
    Ctx c = make_ctx({&a, &b});
    if (c.track()) {
        TensorData* an = a.node();
        TensorData* bn = b.node();
        TensorData* yn = out.node();
        const bool na = c.need[0], nb = c.need[1];
        push_record(c, {a.ptr(), b.ptr()}, out, "l1_distance", [an, bn, yn, na, nb, n, scale]() {
            const double g = yn->g[0] * scale;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = an->v[i] - bn->v[i];
                // subgradient at the kink is taken as zero
                const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (na) {
                    an->g[i] += g * sg;
                }
                if (nb) {
                    bn->g[i] -= g * sg;
                }
            }
        });
    }
    return out;
}

namespace {

Tensor concat_axis(const std::vector<Tensor>& xs, int axis, const char* op) {
    if (xs.empty()) {
        throw ShapeError(std::string(op) + ": empty input list");
    }
    for (const Tensor& t : xs) {
        require_rank(t, 4, op);
    }
    std::vector<int> shape = xs[0].shape();
    for (std::size_t i = 1; i < xs.size(); ++i) {
        for (int d = 0; d < 4; ++d) {
            if (d != axis && xs[i].shape()[d] != shape[d]) {
                throw ShapeError(std::string(op) + ": shapes " + format_shape(shape) + " vs " +
                                 format_shape(xs[i].shape()) + " differ off the concat axis");
            }
        }
        shape[axis] += xs[i].shape()[axis];
    }
    Tensor out = Tensor::zeros(shape);

    // Copy block-wise: for axis=0 one block per tensor; for axis=1 one block
    // per (tensor, sample).
    const int N = shape[0];
    std::vector<std::size_t> offsets(xs.size());
    if (axis == 0) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            offsets[i] = off;
            std::copy(xs[i].values().begin(), xs[i].values().end(), out.values().begin() + off);
            off += xs[i].numel();
        }
    } else {
        const std::size_t plane = static_cast<std::size_t>(shape[2]) * shape[3];
        const std::size_t out_sample = static_cast<std::size_t>(shape[1]) * plane;
        std::size_t ch_off = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            offsets[i] = ch_off * plane;
            const std::size_t in_sample = static_cast<std::size_t>(xs[i].shape()[1]) * plane;
            for (int nidx = 0; nidx < N; ++nidx) {
                std::copy(xs[i].values().begin() + nidx * in_sample,
                          xs[i].values().begin() + (nidx + 1) * in_sample,
                          out.values().begin() + nidx * out_sample + offsets[i]);
            }
            ch_off += xs[i].shape()[1];
        }
    }
    check_finite(out.values(), op);

    std::vector<const Tensor*> ptrs;
    ptrs.reserve(xs.size());
    for (const Tensor& t : xs) {
        ptrs.push_back(&t);
    }
    Ctx c = make_ctx_from(ptrs);
    if (c.track()) {
        std::vector<std::shared_ptr<TensorData>> ins;
        std::vector<TensorData*> in_nodes;
        for (const Tensor& t : xs) {
            ins.push_back(t.ptr());
            in_nodes.push_back(t.node());
        }
        TensorData* yn = out.node();
        std::vector<bool> need = c.need;
        std::vector<int> in_ch;
        for (const Tensor& t : xs) {
            in_ch.push_back(t.shape()[1]);
        }
        const std::vector<int> out_shape = shape;
        push_record(c, std::move(ins), out, op,
                    [in_nodes, yn, need, offsets, axis, out_shape, in_ch, N]() {
                        if (axis == 0) {
                            for (std::size_t i = 0; i < in_nodes.size(); ++i) {
                                if (!need[i]) {
                                    continue;
                                }
                                TensorData* in = in_nodes[i];
                                for (std::size_t k = 0; k < in->g.size(); ++k) {
                                    in->g[k] += yn->g[offsets[i] + k];
                                }
                            }
                        } else {
                            const std::size_t plane =
                                static_cast<std::size_t>(out_shape[2]) * out_shape[3];
                            const std::size_t out_sample =
                                static_cast<std::size_t>(out_shape[1]) * plane;
                            for (std::size_t i = 0; i < in_nodes.size(); ++i) {
                                if (!need[i]) {
                                    continue;
                                }
                                TensorData* in = in_nodes[i];
                                const std::size_t in_sample =
                                    static_cast<std::size_t>(in_ch[i]) * plane;
                                for (int nidx = 0; nidx < N; ++nidx) {
                                    const double* src =
                                        yn->g.data() + nidx * out_sample + offsets[i];
                                    double* dst = in->g.data() + nidx * in_sample;
                                    for (std::size_t k = 0; k < in_sample; ++k) {
                                        dst[k] += src[k];
                                    }
                                }
                            }
                        }
                    });
    }
    return out;
}

} // namespace

Tensor concat_channels(const std::vector<Tensor>& xs) { return concat_axis(xs, 1, "concat_channels"); }

Tensor concat_batch(const std::vector<Tensor>& xs) { return concat_axis(xs, 0, "concat_batch"); }

Tensor reshape(const Tensor& x, const std::vector<int>& shape) {
    Tensor out = Tensor::zeros(shape);
    if (out.numel() != x.numel()) {
        throw ShapeError("reshape: " + format_shape(x.shape()) + " has " +
                         std::to_string(x.numel()) + " elements, target " + format_shape(shape) +
                         " has " + std::to_string(out.numel()));
    }
    out.values() = x.values();
    Ctx c = make_ctx({&x});
    if (c.track()) {
        TensorData* xn = x.node();
        TensorData* yn = out.node();
        const std::size_t n = x.numel();
        push_record(c, {x.ptr()}, out, "reshape", [xn, yn, n]() {
            for (std::size_t i = 0; i < n; ++i) {
                xn->g[i] += yn->g[i];
            }
        });
    }
    return out;
}

Tensor flatten_rows(const Tensor& x) {
    if (x.shape().size() < 2) {
        throw ShapeError("flatten_rows: need rank >= 2, got " + format_shape(x.shape()));
    }
    int rest = 1;
    for (std::size_t d = 1; d < x.shape().size(); ++d) {
        rest *= x.shape()[d];
    }
    return reshape(x, {x.shape()[0], rest});
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    require_rank(x, 4, "instance_norm");
    require_rank(gamma, 1, "instance_norm gamma");
    require_rank(beta, 1, "instance_norm beta");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (gamma.shape()[0] != C || beta.shape()[0] != C) {
        throw ShapeError("instance_norm: affine params " + format_shape(gamma.shape()) + "/" +
                         format_shape(beta.shape()) + " do not match channels of " +
                         format_shape(x.shape()));
    }
    constexpr double eps = 1e-5;
    const std::size_t m = static_cast<std::size_t>(H) * W;
    Tensor out = Tensor::zeros(x.shape());
    // Cache per-(sample,channel) inverse stddev and normalized values for the
    // reverse pass; both are needed by the analytic gradient.
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * C);
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    for (int n = 0; n < N; ++n) {
        for (int ch = 0; ch < C; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + ch) * m;
            const double* xv = x.values().data() + base;
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                mean += xv[i];
            }
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double d = xv[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[static_cast<std::size_t>(n) * C + ch] = is;
            const double gc = gamma.values()[ch], bc = beta.values()[ch];
            for (std::size_t i = 0; i < m; ++i) {
                const double xh = (xv[i] - mean) * is;
                (*xhat)[base + i] = xh;
                out.values()[base + i] = gc * xh + bc;
            }
        }
    }
    check_finite(out.values(), "instance_norm");
    Ctx c = make_ctx({&x, &gamma, &beta});
    if (c.track()) {
        TensorData* xn = x.node();
        TensorData* gn = gamma.node();
        TensorData* bn = beta.node();
        TensorData* yn = out.node();
        const bool nx = c.need[0], ng = c.need[1], nb = c.need[2];
        push_record(
            c, {x.ptr(), gamma.ptr(), beta.ptr()}, out, "instance_norm",
            [xn, gn, bn, yn, nx, ng, nb, N, C, m, inv_std, xhat]() {
                for (int n = 0; n < N; ++n) {
                    for (int ch = 0; ch < C; ++ch) {
                        const std::size_t base = (static_cast<std::size_t>(n) * C + ch) * m;
                        const double* gy = yn->g.data() + base;
                        const double* xh = xhat->data() + base;
                        double sum_gy = 0.0, sum_gyxh = 0.0;
                        for (std::size_t i = 0; i < m; ++i) {
                            sum_gy += gy[i];
                            sum_gyxh += gy[i] * xh[i];
                        }
                        if (ng) {
                            gn->g[ch] += sum_gyxh;
                        }
                        if (nb) {
                            bn->g[ch] += sum_gy;
                        }
                        if (nx) {
                            const double is =
                                (*inv_std)[static_cast<std::size_t>(n) * C + ch];
                            const double gc = gn->v[ch];
                            const double md = static_cast<double>(m);
                            const double k = gc * is / md;
                            for (std::size_t i = 0; i < m; ++i) {
                                xn->g[base + i] +=
                                    k * (md * gy[i] - sum_gy - xh[i] * sum_gyxh);
                            }
                        }
                    }
                }
            });
    }
    return out;
}

Tensor log_softmax(const Tensor& x) {
    require_rank(x, 2, "log_softmax");
    const int N = x.shape()[0], C = x.shape()[1];
    Tensor out = Tensor::zeros(x.shape());
    for (int r = 0; r < N; ++r) {
        const double* row = x.values().data() + static_cast<std::size_t>(r) * C;
        double mx = row[0];
        for (int j = 1; j < C; ++j) {
            mx = std::max(mx, row[j]);
        }
        double se = 0.0;
        for (int j = 0; j < C; ++j) {
            se += std::exp(row[j] - mx);
        }
        const double lse = mx + std::log(se);
        double* orow = out.values().data() + static_cast<std::size_t>(r) * C;
        for (int j = 0; j < C; ++j) {
            orow[j] = row[j] - lse;
        }
    }
    check_finite(out.values(), "log_softmax");
    Ctx c = make_ctx({&x});
    if (c.track()) {
        TensorData* xn = x.node();
        TensorData* yn = out.node();
        push_record(c, {x.ptr()}, out, "log_softmax", [xn, yn, N, C]() {
            for (int r = 0; r < N; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * C;
                const double* gy = yn->g.data() + base;
                const double* y = yn->v.data() + base;
                double sum_gy = 0.0;
                for (int j = 0; j < C; ++j) {
                    sum_gy += gy[j];
                }
                for (int j = 0; j < C; ++j) {
                    xn->g[base + j] += gy[j] - std::exp(y[j]) * sum_gy;
                }
            }
        });
    }
    return out;
}

Tensor take_column(const Tensor& x, int col) {
    require_rank(x, 2, "take_column");
    const int N = x.shape()[0], C = x.shape()[1];
    if (col < 0 || col >= C) {
        throw ShapeError("take_column: column " + std::to_string(col) + " out of range for " +
                         format_shape(x.shape()));
    }
    Tensor out = Tensor::zeros({N, 1});
    for (int r = 0; r < N; ++r) {
        out.values()[r] = x.values()[static_cast<std::size_t>(r) * C + col];
    }
    Ctx c = make_ctx({&x});
    if (c.track()) {
        TensorData* xn = x.node();
        TensorData* yn = out.node();
        push_record(c, {x.ptr()}, out, "take_column", [xn, yn, N, C, col]() {
            for (int r = 0; r < N; ++r) {
                xn->g[static_cast<std::size_t>(r) * C + col] += yn->g[r];
            }
        });
    }
    return out;
}

} // namespace mpct::ops
