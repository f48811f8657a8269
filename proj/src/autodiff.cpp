#include "mwat/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <map>

namespace mwat {

namespace {

std::atomic<std::uint64_t> g_tape_counter{1};
thread_local Tape* g_active_tape = nullptr;

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

void Tape::watch(Tensor& t) {
    if (t.empty()) throw ContractError("cannot watch an empty tensor");
    Node n;
    n.op = Op::leaf;
    n.out_shape = t.shape();
    n.out_data.assign(t.data().begin(), t.data().end());
    nodes_.push_back(std::move(n));
    t.node_ = static_cast<int>(nodes_.size()) - 1;
    t.tape_id_ = id_;
    t.requires_grad_ = true;
}

// Shared recording helper: collects which inputs are live on the active tape,
// saves copies, checks the output finite, and stamps the result tensor.
struct OpRecorder {
    static bool live(const Tensor& t) {
        Tape* tape = Tape::active();
        return tape != nullptr && t.node() >= 0 && t.tape_id() == tape->id();
    }

    static Tensor record(Op op, const std::vector<const Tensor*>& inputs, Tensor out,
                         std::vector<double> attrs) {
        for (double v : out.data())
            if (!std::isfinite(v)) throw NumericError("primitive produced a non-finite value");
        Tape* tape = Tape::active();
        bool any_live = false;
        if (tape)
            for (const Tensor* in : inputs)
                if (live(*in)) { any_live = true; break; }
        if (!any_live) return out;

        Tape::Node n;
        n.op = op;
        n.attrs = std::move(attrs);
        for (const Tensor* in : inputs) {
            n.in_ids.push_back(live(*in) ? in->node() : -1);
            n.in_shapes.push_back(in->shape());
            n.in_data.emplace_back(in->data().begin(), in->data().end());
        }
        n.out_shape = out.shape();
        n.out_data.assign(out.data().begin(), out.data().end());
        tape->nodes_.push_back(std::move(n));
        out.node_ = tape->num_nodes() - 1;
        out.tape_id_ = tape->id();
        out.requires_grad_ = true;
        return out;
    }
};

// ---------------------------------------------------------------------------
// forward implementations

namespace {

enum class Pair : int { same = 0, broadcast0 = 1, scalar_left = 2, scalar_right = 3 };

Pair classify_pair(const Tensor& a, const Tensor& b, const char* opname, bool allow_scalar) {
    if (a.same_shape(b)) return Pair::same;
    // b broadcast across the leading dimension of a
    if (a.ndim() >= 2 && b.ndim() == a.ndim() - 1 &&
        std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin()))
        return Pair::broadcast0;
    if (allow_scalar && a.size() == 1) return Pair::scalar_left;
    if (allow_scalar && b.size() == 1) return Pair::scalar_right;
    throw DimensionError(std::string(opname) + ": incompatible shapes " + a.shape_str() + " and " +
                         b.shape_str());
}

Tensor addsub_impl(const Tensor& a, const Tensor& b, bool is_add) {
    const Pair mode = classify_pair(a, b, is_add ? "add" : "sub", false);
    std::vector<double> out(a.data().begin(), a.data().end());
    const double s = is_add ? 1.0 : -1.0;
    if (mode == Pair::same) {
        for (int i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] += s * b[i];
    } else {
        const int inner = b.size();
        const int reps = a.size() / inner;
        for (int r = 0; r < reps; ++r)
            for (int i = 0; i < inner; ++i) out[static_cast<std::size_t>(r * inner + i)] += s * b[i];
    }
    return OpRecorder::record(is_add ? Op::add : Op::sub, {&a, &b}, Tensor(a.shape(), std::move(out)),
                              {static_cast<double>(mode)});
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return addsub_impl(a, b, true); }
Tensor sub(const Tensor& a, const Tensor& b) { return addsub_impl(a, b, false); }

Tensor mul(const Tensor& a, const Tensor& b) {
    const Pair mode = classify_pair(a, b, "mul", true);
    if (mode == Pair::broadcast0) throw DimensionError("mul: broadcast not supported");
    if (mode == Pair::scalar_left) {
        std::vector<double> out(b.data().begin(), b.data().end());
        for (auto& v : out) v *= a[0];
        return OpRecorder::record(Op::mul, {&a, &b}, Tensor(b.shape(), std::move(out)),
                                  {static_cast<double>(mode)});
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    if (mode == Pair::same) {
        for (int i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] *= b[i];
    } else {
        for (auto& v : out) v *= b[0];
    }
    return OpRecorder::record(Op::mul, {&a, &b}, Tensor(a.shape(), std::move(out)),
                              {static_cast<double>(mode)});
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0])
        throw DimensionError("matmul: needs [m,k] x [k,n], got " + a.shape_str() + " x " + b.shape_str());
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const auto ad = a.data();
    const auto bd = b.data();
    for (int i = 0; i < m; ++i) {
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = ad[static_cast<std::size_t>(i) * k + kk];
            if (aik == 0.0) continue;
            const double* brow = bd.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return OpRecorder::record(Op::matmul, {&a, &b}, Tensor({m, n}, std::move(out)), {});
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    if (x.ndim() != 4 || w.ndim() != 4) throw DimensionError("conv2d: x and w must be 4-d");
    if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
    if (pad < 0) throw ContractError("conv2d: pad must be >= 0");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != C) throw DimensionError("conv2d: channel mismatch");
    if (bias.ndim() != 1 || bias.shape()[0] != O) throw DimensionError("conv2d: bias must be [O]");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw DimensionError("conv2d: kernel larger than padded input");

    std::vector<double> out(static_cast<std::size_t>(B) * O * Ho * Wo);
    const auto xd = x.data();
    const auto wd = w.data();
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o) {
            double* oplane = out.data() + (static_cast<std::size_t>(b) * O + o) * Ho * Wo;
            std::fill(oplane, oplane + static_cast<std::size_t>(Ho) * Wo, bias[o]);
            for (int c = 0; c < C; ++c) {
                const double* xplane = xd.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = wd[((static_cast<std::size_t>(o) * C + c) * kh + ky) * kw + kx];
                        if (wv == 0.0) continue;
                        for (int oy = 0; oy < Ho; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            const double* xrow = xplane + static_cast<std::size_t>(iy) * W;
                            double* orow = oplane + static_cast<std::size_t>(oy) * Wo;
                            for (int ox = 0; ox < Wo; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix >= 0 && ix < W) orow[ox] += wv * xrow[ix];
                            }
                        }
                    }
            }
        }
    return OpRecorder::record(Op::conv2d, {&x, &w, &bias}, Tensor({B, O, Ho, Wo}, std::move(out)),
                              {static_cast<double>(stride), static_cast<double>(pad)});
}

namespace {

Tensor unary_elementwise(Op op, const Tensor& x, double (*f)(double)) {
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (int i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = f(x[i]);
    return OpRecorder::record(op, {&x}, Tensor(x.shape(), std::move(out)), {});
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_elementwise(Op::relu, x, +[](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor tanh(const Tensor& x) {
    return unary_elementwise(Op::tanh, x, +[](double v) { return std::tanh(v); });
}

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(Op::sigmoid, x, +[](double v) { return stable_sigmoid(v); });
}

Tensor reshape(const Tensor& x, const std::vector<int>& shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: cannot view " + x.shape_str() + " as " + shape_to_string(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    return OpRecorder::record(Op::flatten, {&x}, Tensor(shape, std::move(out)), {});
}

Tensor flatten(const Tensor& x) {
    if (x.ndim() < 2) return reshape(x, {x.size()});
    return reshape(x, {x.shape()[0], x.size() / x.shape()[0]});
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.ndim() != b.ndim()) throw DimensionError("concat: rank mismatch");
    if (axis < 0 || axis >= a.ndim()) throw DimensionError("concat: axis out of range");
    for (int d = 0; d < a.ndim(); ++d)
        if (d != axis && a.shape()[d] != b.shape()[d])
            throw DimensionError("concat: shapes " + a.shape_str() + " and " + b.shape_str() +
                                 " differ off-axis");
    std::vector<int> out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] += b.shape()[axis];

    // outer = product of dims before axis, inner = product after
    int outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.shape()[d];
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= a.shape()[d];
    const int as = a.shape()[axis] * inner, bs = b.shape()[axis] * inner;

    std::vector<double> out(static_cast<std::size_t>(a.size() + b.size()));
    for (int r = 0; r < outer; ++r) {
        std::memcpy(out.data() + static_cast<std::size_t>(r) * (as + bs),
                    a.data().data() + static_cast<std::size_t>(r) * as, sizeof(double) * static_cast<std::size_t>(as));
        std::memcpy(out.data() + static_cast<std::size_t>(r) * (as + bs) + as,
                    b.data().data() + static_cast<std::size_t>(r) * bs, sizeof(double) * static_cast<std::size_t>(bs));
    }
    return OpRecorder::record(Op::concat, {&a, &b}, Tensor(out_shape, std::move(out)),
                              {static_cast<double>(axis)});
}

Tensor slice(const Tensor& x, int dim, int start, int len) {
    if (dim < 0 || dim >= x.ndim()) throw DimensionError("slice: dim out of range");
    if (start < 0 || len <= 0 || start + len > x.shape()[dim])
        throw DimensionError("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of bounds for dim of size " +
                             std::to_string(x.shape()[dim]));
    std::vector<int> out_shape = x.shape();
    out_shape[static_cast<std::size_t>(dim)] = len;
    int outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= x.shape()[d];
    for (int d = dim + 1; d < x.ndim(); ++d) inner *= x.shape()[d];
    const int in_stride = x.shape()[dim] * inner;
    std::vector<double> out(static_cast<std::size_t>(outer) * len * inner);
    for (int r = 0; r < outer; ++r)
        std::memcpy(out.data() + static_cast<std::size_t>(r) * len * inner,
                    x.data().data() + static_cast<std::size_t>(r) * in_stride +
                        static_cast<std::size_t>(start) * inner,
                    sizeof(double) * static_cast<std::size_t>(len) * inner);
    return OpRecorder::record(Op::slice, {&x}, Tensor(out_shape, std::move(out)),
                              {static_cast<double>(dim), static_cast<double>(start),
                               static_cast<double>(len)});
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += x[i];
    return OpRecorder::record(Op::sum, {&x}, Tensor::scalar(acc), {});
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += x[i];
    return OpRecorder::record(Op::mean, {&x}, Tensor::scalar(acc / x.size()), {});
}

namespace {

void check_loss_shapes(const char* opname, const Tensor& pred, const Tensor& target,
                       const Tensor* mask) {
    if (pred.ndim() != 2) throw DimensionError(std::string(opname) + ": pred must be [B,F]");
    if (!pred.same_shape(target))
        throw DimensionError(std::string(opname) + ": pred " + pred.shape_str() + " vs target " +
                             target.shape_str());
    if (mask && !mask->same_shape(pred))
        throw DimensionError(std::string(opname) + ": mask shape mismatch");
}

}  // namespace

static Tensor mse_impl(const Tensor& pred, const Tensor& target, const Tensor* mask) {
    check_loss_shapes("mse_loss", pred, target, mask);
    const int B = pred.shape()[0], F = pred.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        double acc = 0.0, cnt = 0.0;
        for (int f = 0; f < F; ++f) {
            const int i = b * F + f;
            const double m = mask ? (*mask)[i] : 1.0;
            const double d = pred[i] - target[i];
            acc += m * d * d;
            cnt += m;
        }
        out[static_cast<std::size_t>(b)] = acc / std::max(cnt, 1.0);
    }
    std::vector<const Tensor*> ins{&pred, &target};
    if (mask) ins.push_back(mask);
    return OpRecorder::record(Op::mse_loss, ins, Tensor({B}, std::move(out)), {});
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) { return mse_impl(pred, target, nullptr); }
Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    return mse_impl(pred, target, &mask);
}

static Tensor bce_impl(const Tensor& logits, const Tensor& target, const Tensor* mask) {
    check_loss_shapes("bce_with_logits_loss", logits, target, mask);
    const int B = logits.shape()[0], F = logits.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        double acc = 0.0, cnt = 0.0;
        for (int f = 0; f < F; ++f) {
            const int i = b * F + f;
            const double m = mask ? (*mask)[i] : 1.0;
            const double z = logits[i], y = target[i];
            acc += m * (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
            cnt += m;
        }
        out[static_cast<std::size_t>(b)] = acc / std::max(cnt, 1.0);
    }
    std::vector<const Tensor*> ins{&logits, &target};
    if (mask) ins.push_back(mask);
    return OpRecorder::record(Op::bce_with_logits_loss, ins, Tensor({B}, std::move(out)), {});
}

Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& target) {
    return bce_impl(logits, target, nullptr);
}
Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& target, const Tensor& mask) {
    return bce_impl(logits, target, &mask);
}

Tensor l1_norm(const Tensor& x) {
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += std::abs(x[i]);
    return OpRecorder::record(Op::l1_norm, {&x}, Tensor::scalar(acc), {});
}

Tensor l2_norm(const Tensor& x) {
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += x[i] * x[i];
    return OpRecorder::record(Op::l2_norm, {&x}, Tensor::scalar(std::sqrt(acc)), {});
}

Tensor sign(const Tensor& x) {
    return unary_elementwise(Op::sign, x,
                             +[](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (!(lo <= hi)) throw ContractError("clamp: requires lo <= hi");
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (int i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = std::min(std::max(x[i], lo), hi);
    return OpRecorder::record(Op::clamp, {&x}, Tensor(x.shape(), std::move(out)), {lo, hi});
}

// ---------------------------------------------------------------------------
// backward

namespace {

using Grad = std::vector<double>;

void accumulate(std::vector<Grad>& bar, std::vector<char>& touched, int id, const Grad& g) {
    if (id < 0) return;
    auto& slot = bar[static_cast<std::size_t>(id)];
    if (!touched[static_cast<std::size_t>(id)]) {
        slot = g;
        touched[static_cast<std::size_t>(id)] = 1;
    } else {
        for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
    }
}

void backward_node(const Tape::Node& n, const Grad& go, std::vector<Grad>& bar,
                   std::vector<char>& touched) {
    auto in_size = [&](int k) { return shape_numel(n.in_shapes[static_cast<std::size_t>(k)]); };
    switch (n.op) {
        case Op::leaf:
            break;
        case Op::add:
        case Op::sub: {
            const double s = (n.op == Op::add) ? 1.0 : -1.0;
            if (n.in_ids[0] >= 0) accumulate(bar, touched, n.in_ids[0], go);
            if (n.in_ids[1] >= 0) {
                const auto mode = static_cast<Pair>(static_cast<int>(n.attrs[0]));
                Grad gb(static_cast<std::size_t>(in_size(1)), 0.0);
                if (mode == Pair::same) {
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = s * go[i];
                } else {  // broadcast over dim 0: reduce
                    const std::size_t inner = gb.size();
                    const std::size_t reps = go.size() / inner;
                    for (std::size_t r = 0; r < reps; ++r)
                        for (std::size_t i = 0; i < inner; ++i) gb[i] += s * go[r * inner + i];
                }
                accumulate(bar, touched, n.in_ids[1], gb);
            }
            break;
        }
        case Op::mul: {
            const auto mode = static_cast<Pair>(static_cast<int>(n.attrs[0]));
            const auto& av = n.in_data[0];
            const auto& bv = n.in_data[1];
            if (mode == Pair::same) {
                if (n.in_ids[0] >= 0) {
                    Grad g(go.size());
                    for (std::size_t i = 0; i < go.size(); ++i) g[i] = go[i] * bv[i];
                    accumulate(bar, touched, n.in_ids[0], g);
                }
                if (n.in_ids[1] >= 0) {
                    Grad g(go.size());
                    for (std::size_t i = 0; i < go.size(); ++i) g[i] = go[i] * av[i];
                    accumulate(bar, touched, n.in_ids[1], g);
                }
            } else {
                const bool left_scalar = (mode == Pair::scalar_left);
                const auto& sv = left_scalar ? av : bv;   // the scalar input
                const auto& tv = left_scalar ? bv : av;   // the tensor input
                const int s_idx = left_scalar ? 0 : 1, t_idx = left_scalar ? 1 : 0;
                if (n.in_ids[t_idx] >= 0) {
                    Grad g(go.size());
                    for (std::size_t i = 0; i < go.size(); ++i) g[i] = go[i] * sv[0];
                    accumulate(bar, touched, n.in_ids[t_idx], g);
                }
                if (n.in_ids[s_idx] >= 0) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * tv[i];
                    accumulate(bar, touched, n.in_ids[s_idx], Grad{acc});
                }
            }
            break;
        }
        case Op::matmul: {
            const int m = n.in_shapes[0][0], k = n.in_shapes[0][1], nn = n.in_shapes[1][1];
            const auto& av = n.in_data[0];
            const auto& bv = n.in_data[1];
            if (n.in_ids[0] >= 0) {
                Grad ga(static_cast<std::size_t>(m) * k, 0.0);
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* grow = go.data() + static_cast<std::size_t>(i) * nn;
                        const double* brow = bv.data() + static_cast<std::size_t>(kk) * nn;
                        for (int j = 0; j < nn; ++j) acc += grow[j] * brow[j];
                        ga[static_cast<std::size_t>(i) * k + kk] = acc;
                    }
                accumulate(bar, touched, n.in_ids[0], ga);
            }
            if (n.in_ids[1] >= 0) {
                Grad gb(static_cast<std::size_t>(k) * nn, 0.0);
                for (int i = 0; i < m; ++i) {
                    const double* grow = go.data() + static_cast<std::size_t>(i) * nn;
                    for (int kk = 0; kk < k; ++kk) {
                        const double aik = av[static_cast<std::size_t>(i) * k + kk];
                        if (aik == 0.0) continue;
                        double* brow = gb.data() + static_cast<std::size_t>(kk) * nn;
                        for (int j = 0; j < nn; ++j) brow[j] += aik * grow[j];
                    }
                }
                accumulate(bar, touched, n.in_ids[1], gb);
            }
            break;
        }
        case Op::conv2d: {
            const int stride = static_cast<int>(n.attrs[0]);
            const int pad = static_cast<int>(n.attrs[1]);
            const int B = n.in_shapes[0][0], C = n.in_shapes[0][1], H = n.in_shapes[0][2],
                      W = n.in_shapes[0][3];
            const int O = n.in_shapes[1][0], kh = n.in_shapes[1][2], kw = n.in_shapes[1][3];
            const int Ho = n.out_shape[2], Wo = n.out_shape[3];
            const auto& xv = n.in_data[0];
            const auto& wv = n.in_data[1];
            const bool want_x = n.in_ids[0] >= 0, want_w = n.in_ids[1] >= 0, want_b = n.in_ids[2] >= 0;
            Grad gx(want_x ? xv.size() : 0, 0.0);
            Grad gw(want_w ? wv.size() : 0, 0.0);
            Grad gb(want_b ? static_cast<std::size_t>(O) : 0, 0.0);
            for (int b = 0; b < B; ++b)
                for (int o = 0; o < O; ++o) {
                    const double* gplane = go.data() + (static_cast<std::size_t>(b) * O + o) * Ho * Wo;
                    if (want_b)
                        for (int i = 0; i < Ho * Wo; ++i) gb[static_cast<std::size_t>(o)] += gplane[i];
                    for (int c = 0; c < C; ++c) {
                        const std::size_t xoff = (static_cast<std::size_t>(b) * C + c) * H * W;
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const std::size_t widx =
                                    ((static_cast<std::size_t>(o) * C + c) * kh + ky) * kw + kx;
                                const double wval = wv[widx];
                                double wacc = 0.0;
                                for (int oy = 0; oy < Ho; ++oy) {
                                    const int iy = oy * stride + ky - pad;
                                    if (iy < 0 || iy >= H) continue;
                                    const double* grow = gplane + static_cast<std::size_t>(oy) * Wo;
                                    const std::size_t xrow = xoff + static_cast<std::size_t>(iy) * W;
                                    for (int ox = 0; ox < Wo; ++ox) {
                                        const int ix = ox * stride + kx - pad;
                                        if (ix < 0 || ix >= W) continue;
                                        if (want_x) gx[xrow + static_cast<std::size_t>(ix)] += wval * grow[ox];
                                        if (want_w) wacc += xv[xrow + static_cast<std::size_t>(ix)] * grow[ox];
                                    }
                                }
                                if (want_w) gw[widx] += wacc;
                            }
                    }
                }
            if (want_x) accumulate(bar, touched, n.in_ids[0], gx);
            if (want_w) accumulate(bar, touched, n.in_ids[1], gw);
            if (want_b) accumulate(bar, touched, n.in_ids[2], gb);
            break;
        }
        case Op::relu: {
            if (n.in_ids[0] < 0) break;
            Grad g(go.size());
            for (std::size_t i = 0; i < go.size(); ++i) g[i] = n.in_data[0][i] > 0.0 ? go[i] : 0.0;
            accumulate(bar, touched, n.in_ids[0], g);
            break;
        }
        case Op::tanh: {
            if (n.in_ids[0] < 0) break;
            Grad g(go.size());
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double t = n.out_data[i];
                g[i] = go[i] * (1.0 - t * t);
            }
            accumulate(bar, touched, n.in_ids[0], g);
            break;
        }
        case Op::sigmoid: {
            if (n.in_ids[0] < 0) break;
            Grad g(go.size());
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double s = n.out_data[i];
                g[i] = go[i] * s * (1.0 - s);
            }
            accumulate(bar, touched, n.in_ids[0], g);
            break;
        }
        case Op::flatten: {
            if (n.in_ids[0] >= 0) accumulate(bar, touched, n.in_ids[0], go);
            break;
        }
        case Op::concat: {
            const int axis = static_cast<int>(n.attrs[0]);
            int outer = 1, inner = 1;
            const auto& ash = n.in_shapes[0];
            const auto& bsh = n.in_shapes[1];
            for (int d = 0; d < axis; ++d) outer *= ash[static_cast<std::size_t>(d)];
            for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < ash.size(); ++d)
                inner *= ash[d];
            const int as = ash[static_cast<std::size_t>(axis)] * inner;
            const int bs = bsh[static_cast<std::size_t>(axis)] * inner;
            if (n.in_ids[0] >= 0) {
                Grad ga(static_cast<std::size_t>(outer) * as);
                for (int r = 0; r < outer; ++r)
                    std::memcpy(ga.data() + static_cast<std::size_t>(r) * as,
                                go.data() + static_cast<std::size_t>(r) * (as + bs),
                                sizeof(double) * static_cast<std::size_t>(as));
                accumulate(bar, touched, n.in_ids[0], ga);
            }
            if (n.in_ids[1] >= 0) {
                Grad gbv(static_cast<std::size_t>(outer) * bs);
                for (int r = 0; r < outer; ++r)
                    std::memcpy(gbv.data() + static_cast<std::size_t>(r) * bs,
                                go.data() + static_cast<std::size_t>(r) * (as + bs) + as,
                                sizeof(double) * static_cast<std::size_t>(bs));
                accumulate(bar, touched, n.in_ids[1], gbv);
            }
            break;
        }
        case Op::slice: {
            if (n.in_ids[0] < 0) break;
            const int dim = static_cast<int>(n.attrs[0]);
            const int start = static_cast<int>(n.attrs[1]);
            const int len = static_cast<int>(n.attrs[2]);
            const auto& xsh = n.in_shapes[0];
            int outer = 1, inner = 1;
            for (int d = 0; d < dim; ++d) outer *= xsh[static_cast<std::size_t>(d)];
            for (std::size_t d = static_cast<std::size_t>(dim) + 1; d < xsh.size(); ++d) inner *= xsh[d];
            const int in_stride = xsh[static_cast<std::size_t>(dim)] * inner;
            Grad g(static_cast<std::size_t>(in_size(0)), 0.0);
            for (int r = 0; r < outer; ++r)
                std::memcpy(g.data() + static_cast<std::size_t>(r) * in_stride +
                                static_cast<std::size_t>(start) * inner,
                            go.data() + static_cast<std::size_t>(r) * len * inner,
                            sizeof(double) * static_cast<std::size_t>(len) * inner);
            accumulate(bar, touched, n.in_ids[0], g);
            break;
        }
        case Op::sum: {
            if (n.in_ids[0] < 0) break;
            accumulate(bar, touched, n.in_ids[0], Grad(static_cast<std::size_t>(in_size(0)), go[0]));
            break;
        }
        case Op::mean: {
            if (n.in_ids[0] < 0) break;
            const int sz = in_size(0);
            accumulate(bar, touched, n.in_ids[0], Grad(static_cast<std::size_t>(sz), go[0] / sz));
            break;
        }
        case Op::mse_loss:
        case Op::bce_with_logits_loss: {
            const bool has_mask = n.in_ids.size() == 3;
            const int B = n.in_shapes[0][0], F = n.in_shapes[0][1];
            const auto& pv = n.in_data[0];
            const auto& tv = n.in_data[1];
            const auto* mv = has_mask ? &n.in_data[2] : nullptr;
            if (n.in_ids[0] >= 0) {
                Grad g(static_cast<std::size_t>(B) * F, 0.0);
                for (int b = 0; b < B; ++b) {
                    double cnt = 0.0;
                    if (mv)
                        for (int f = 0; f < F; ++f) cnt += (*mv)[static_cast<std::size_t>(b * F + f)];
                    else
                        cnt = F;
                    const double denom = std::max(cnt, 1.0);
                    for (int f = 0; f < F; ++f) {
                        const std::size_t i = static_cast<std::size_t>(b * F + f);
                        const double m = mv ? (*mv)[i] : 1.0;
                        double d;
                        if (n.op == Op::mse_loss) {
                            d = 2.0 * (pv[i] - tv[i]);
                        } else {
                            d = stable_sigmoid(pv[i]) - tv[i];
                        }
                        g[i] = go[static_cast<std::size_t>(b)] * m * d / denom;
                    }
                }
                accumulate(bar, touched, n.in_ids[0], g);
            }
            break;
        }
        case Op::l1_norm: {
            if (n.in_ids[0] < 0) break;
            const auto& xv = n.in_data[0];
            Grad g(xv.size());
            for (std::size_t i = 0; i < xv.size(); ++i)
                g[i] = go[0] * (xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0));
            accumulate(bar, touched, n.in_ids[0], g);
            break;
        }
        case Op::l2_norm: {
            if (n.in_ids[0] < 0) break;
            const auto& xv = n.in_data[0];
            const double norm = n.out_data[0];
            Grad g(xv.size(), 0.0);
            if (norm > 1e-300)
                for (std::size_t i = 0; i < xv.size(); ++i) g[i] = go[0] * xv[i] / norm;
            accumulate(bar, touched, n.in_ids[0], g);
            break;
        }
        case Op::sign: {
            if (n.in_ids[0] >= 0)
                accumulate(bar, touched, n.in_ids[0], Grad(go.size(), 0.0));
            break;
        }
        case Op::clamp: {
            if (n.in_ids[0] < 0) break;
            // Boundary values pass through (subgradient 1), so attacks on a
            // binary raster still see a gradient at delta = 0.
            const double lo = n.attrs[0], hi = n.attrs[1];
            const auto& xv = n.in_data[0];
            Grad g(go.size());
            for (std::size_t i = 0; i < go.size(); ++i)
                g[i] = (xv[i] >= lo && xv[i] <= hi) ? go[i] : 0.0;
            accumulate(bar, touched, n.in_ids[0], g);
            break;
        }
    }
}

}  // namespace

Gradients backward(const Tensor& loss, const Tape& tape) {
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar");
    if (loss.node() < 0 || loss.tape_id() != tape.id())
        throw ContractError("backward: loss is not recorded on this tape");

    Gradients g;
    g.tape_id_ = tape.id();
    g.tape_ = &tape;
    g.bar_.resize(static_cast<std::size_t>(tape.num_nodes()));
    g.touched_.assign(static_cast<std::size_t>(tape.num_nodes()), 0);
    g.bar_[static_cast<std::size_t>(loss.node())] = {1.0};
    g.touched_[static_cast<std::size_t>(loss.node())] = 1;

    for (int i = loss.node(); i >= 0; --i) {
        if (!g.touched_[static_cast<std::size_t>(i)]) continue;
        backward_node(tape.node(i), g.bar_[static_cast<std::size_t>(i)], g.bar_, g.touched_);
    }
    return g;
}

bool Gradients::has(const Tensor& t) const {
    return t.node() >= 0 && t.tape_id() == tape_id_ && touched_[static_cast<std::size_t>(t.node())];
}

Tensor Gradients::grad(const Tensor& t) const {
    if (t.node() < 0 || t.tape_id() != tape_id_)
        throw ContractError("grad: tensor is not recorded on this tape");
    if (!touched_[static_cast<std::size_t>(t.node())]) return Tensor::zeros(t.shape());
    return Tensor(t.shape(), bar_[static_cast<std::size_t>(t.node())]);
}

// ---------------------------------------------------------------------------

Tensor primitive_forward(const std::string& op, const std::vector<Tensor>& in,
                         const std::vector<double>& attrs) {
    auto need = [&](std::size_t n) {
        if (in.size() != n)
            throw ContractError("primitive_forward(" + op + "): expected " + std::to_string(n) +
                                " inputs, got " + std::to_string(in.size()));
    };
    auto attr = [&](std::size_t i, double dflt) { return attrs.size() > i ? attrs[i] : dflt; };
    if (op == "add") { need(2); return add(in[0], in[1]); }
    if (op == "sub") { need(2); return sub(in[0], in[1]); }
    if (op == "mul") { need(2); return mul(in[0], in[1]); }
    if (op == "matmul") { need(2); return matmul(in[0], in[1]); }
    if (op == "conv2d") {
        need(3);
        return conv2d(in[0], in[1], in[2], static_cast<int>(attr(0, 1)), static_cast<int>(attr(1, 0)));
    }
    if (op == "relu") { need(1); return relu(in[0]); }
    if (op == "tanh") { need(1); return tanh(in[0]); }
    if (op == "sigmoid") { need(1); return sigmoid(in[0]); }
    if (op == "flatten") { need(1); return flatten(in[0]); }
    if (op == "concat") { need(2); return concat(in[0], in[1], static_cast<int>(attr(0, 0))); }
    if (op == "slice") {
        need(1);
        return slice(in[0], static_cast<int>(attr(0, 0)), static_cast<int>(attr(1, 0)),
                     static_cast<int>(attr(2, 1)));
    }
    if (op == "sum") { need(1); return sum(in[0]); }
    if (op == "mean") { need(1); return mean(in[0]); }
    if (op == "mse_loss") {
        if (in.size() == 2) return mse_loss(in[0], in[1]);
        need(3);
        return mse_loss(in[0], in[1], in[2]);
    }
    if (op == "bce_with_logits_loss") {
        if (in.size() == 2) return bce_with_logits_loss(in[0], in[1]);
        need(3);
        return bce_with_logits_loss(in[0], in[1], in[2]);
    }
    if (op == "l1_norm") { need(1); return l1_norm(in[0]); }
    if (op == "l2_norm") { need(1); return l2_norm(in[0]); }
    if (op == "sign") { need(1); return sign(in[0]); }
    if (op == "clamp") { need(1); return clamp(in[0], attr(0, 0.0), attr(1, 1.0)); }
    throw ContractError("primitive_forward: unknown primitive '" + op + "'");
}

bool tape_live(const Tensor& t) { return OpRecorder::live(t); }

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw ContractError("grad_check: h must be positive");
    Tape tape;
    Tensor xw = x;
    tape.watch(xw);
    Tensor y;
    {
        Tape::Scope scope(tape);
        y = f(xw);
    }
    if (y.size() != 1) throw ContractError("grad_check: f must be scalar-valued");
    const Tensor g = backward(y, tape).grad(xw);

    double max_rel = 0.0;
    Tensor xp = x.detached();
    for (int i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = f(xp).item();
        xp[i] = orig - h;
        const double fm = f(xp).item();
        xp[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double rel = std::abs(g[i] - fd) / std::max(1e-8, std::abs(fd));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace mwat
