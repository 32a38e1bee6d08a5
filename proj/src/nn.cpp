#include "vstain/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vstain::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Scratch = std::vector<double, Eigen::aligned_allocator<double>>;

// Tensor --------------------------------------------------------------------

std::size_t Tensor::element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension in " + shape_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ')';
    return os.str();
}

// Tape ----------------------------------------------------------------------

Var Tape::constant(const Tensor& value, std::string name) {
    Node n;
    n.external = &value;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor&& value, std::string name) {
    Node n;
    n.owned = std::move(value);
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value, std::string name) {
    Node n;
    n.owned = std::move(value);
    n.name = std::move(name);
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const Tensor& value, const std::string& name) {
    if (auto it = params_.find(&value); it != params_.end()) return Var{it->second};
    Node n;
    n.external = &value;
    n.name = name;
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size() - 1);
    params_.emplace(&value, id);
    return Var{id};
}

Var Tape::push(Tensor value, std::string name, std::initializer_list<Var> parents, Backward backward) {
    if (!value.all_finite())
        throw NumericalError("non-finite value produced by layer '" + name + "' " +
                             Tensor::shape_string(value.shape()));
    Node n;
    n.owned = std::move(value);
    n.name = std::move(name);
    if (record_) {
        for (Var p : parents)
            if (needs_grad(p)) n.needs_grad = true;
        if (n.needs_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.external ? *n.external : n.owned;
}

Tensor& Tape::grad(Var v) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.size() == 0) n.grad = Tensor(value(v).shape(), 0.0);
    return n.grad;
}

bool Tape::has_grad(Var v) const {
    return nodes_.at(static_cast<std::size_t>(v.id)).grad.size() > 0;
}

void Tape::backward(Var loss) {
    if (!record_) throw std::logic_error("Tape::backward: tape is not recording");
    if (value(loss).size() != 1) throw std::invalid_argument("Tape::backward: loss must be a scalar");
    grad(loss)[0] += 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.backward && n.grad.size() > 0) n.backward(*this, n.grad);
    }
}

const Tensor* Tape::gradient_of(const Tensor& parameter) const {
    auto it = params_.find(&parameter);
    if (it == params_.end()) return nullptr;
    const Node& n = nodes_[static_cast<std::size_t>(it->second)];
    return n.grad.size() > 0 ? &n.grad : nullptr;
}

// Layers --------------------------------------------------------------------

namespace {

void require(bool cond, const std::string& layer, const std::string& what) {
    if (!cond) throw std::invalid_argument("layer '" + layer + "': " + what);
}

void im2col(const double* x, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* col) {
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                const double* src = x + static_cast<std::size_t>(c) * height * width;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    double* dst = row + oy * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill_n(dst, out_w, 0.0);
                        continue;
                    }
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[ox] = (ix >= 0 && ix < width) ? src[iy * width + ix] : 0.0;
                    }
                }
            }
}

void col2im(const double* col, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* x) {
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                double* dst = x + static_cast<std::size_t>(c) * height * width;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= height) continue;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < width) dst[iy * width + ix] += row[oy * out_w + ox];
                    }
                }
            }
}

}  // namespace

Var conv2d(Tape& tape, Var x, Var w, Var b, int stride, int pad, const std::string& name) {
    const Tensor& xv = tape.value(x);
    const Tensor& wv = tape.value(w);
    require(xv.rank() == 4 && wv.rank() == 4, name, "expects NCHW input and 4-D weights");
    const int n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    const int cout = wv.dim(0), k = wv.dim(2);
    require(wv.dim(1) == cin, name,
            "input has " + std::to_string(cin) + " channels, weights expect " + std::to_string(wv.dim(1)));
    require(wv.dim(3) == k, name, "kernel must be square");
    const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    require(oh > 0 && ow > 0, name, "input smaller than kernel");
    if (b.valid()) require(tape.value(b).size() == static_cast<std::size_t>(cout), name, "bias size mismatch");

    const int kk = cin * k * k, plane = oh * ow;
    const bool direct = (k == 1 && stride == 1 && pad == 0);
    Tensor out({n, cout, oh, ow});
    CMapMat wm(wv.data(), cout, kk);
    Scratch col(direct ? 0 : static_cast<std::size_t>(kk) * plane);
    for (int i = 0; i < n; ++i) {
        const double* xi = xv.data() + static_cast<std::size_t>(i) * cin * h * wd;
        if (!direct) im2col(xi, cin, h, wd, k, stride, pad, oh, ow, col.data());
        CMapMat cm(direct ? xi : col.data(), kk, plane);
        MapMat om(out.data() + static_cast<std::size_t>(i) * cout * plane, cout, plane);
        om.noalias() = wm * cm;
        if (b.valid()) {
            const Tensor& bv = tape.value(b);
            for (int c = 0; c < cout; ++c) om.row(c).array() += bv[static_cast<std::size_t>(c)];
        }
    }

    return tape.push(std::move(out), name, {x, w, b},
                     [=](Tape& t, const Tensor& g) {
                         const Tensor& xv = t.value(x);
                         const Tensor& wv = t.value(w);
                         CMapMat wm(wv.data(), cout, kk);
                         const bool gx = wants(t, x), gw = wants(t, w), gb = b.valid() && wants(t, b);
                         Scratch col(direct ? 0 : static_cast<std::size_t>(kk) * plane);
                         Scratch dcol(gx && !direct ? static_cast<std::size_t>(kk) * plane : 0);
                         for (int i = 0; i < n; ++i) {
                             const double* xi = xv.data() + static_cast<std::size_t>(i) * cin * h * wd;
                             CMapMat gm(g.data() + static_cast<std::size_t>(i) * cout * plane, cout, plane);
                             if (gw) {
                                 if (!direct) im2col(xi, cin, h, wd, k, stride, pad, oh, ow, col.data());
                                 CMapMat cm(direct ? xi : col.data(), kk, plane);
                                 MapMat(t.grad(w).data(), cout, kk).noalias() += gm * cm.transpose();
                             }
                             if (gb) {
                                 Tensor& gbv = t.grad(b);
                                 for (int c = 0; c < cout; ++c) gbv[static_cast<std::size_t>(c)] += gm.row(c).sum();
                             }
                             if (gx) {
                                 double* gxi = t.grad(x).data() + static_cast<std::size_t>(i) * cin * h * wd;
                                 if (direct) {
                                     MapMat(gxi, cin, plane).noalias() += wm.transpose() * gm;
                                 } else {
                                     MapMat(dcol.data(), kk, plane).noalias() = wm.transpose() * gm;
                                     col2im(dcol.data(), cin, h, wd, k, stride, pad, oh, ow, gxi);
                                 }
                             }
                         }
                     });
}

Var linear(Tape& tape, Var x, Var w, Var b, const std::string& name) {
    const Tensor& xv = tape.value(x);
    const Tensor& wv = tape.value(w);
    require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1), name,
            "shape mismatch " + Tensor::shape_string(xv.shape()) + " x " + Tensor::shape_string(wv.shape()));
    const int n = xv.dim(0), d = xv.dim(1), o = wv.dim(0);
    Tensor out({n, o});
    MapMat(out.data(), n, o).noalias() = CMapMat(xv.data(), n, d) * CMapMat(wv.data(), o, d).transpose();
    if (b.valid()) {
        const Tensor& bv = tape.value(b);
        require(bv.size() == static_cast<std::size_t>(o), name, "bias size mismatch");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < o; ++j) out[static_cast<std::size_t>(i) * o + j] += bv[static_cast<std::size_t>(j)];
    }
    return tape.push(std::move(out), name, {x, w, b}, [=](Tape& t, const Tensor& g) {
        CMapMat gm(g.data(), n, o);
        if (wants(t, x)) MapMat(t.grad(x).data(), n, d).noalias() += gm * CMapMat(t.value(w).data(), o, d);
        if (wants(t, w)) MapMat(t.grad(w).data(), o, d).noalias() += gm.transpose() * CMapMat(t.value(x).data(), n, d);
        if (b.valid() && wants(t, b)) {
            Tensor& gb = t.grad(b);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < o; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * o + j];
        }
    });
}

Var group_norm(Tape& tape, Var x, Var gamma, Var beta, int groups, const std::string& name, double eps) {
    const Tensor& xv = tape.value(x);
    require(xv.rank() == 4, name, "expects NCHW input");
    const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    require(groups > 0 && c % groups == 0, name,
            std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
    const int cpg = c / groups;
    const std::size_t gsize = static_cast<std::size_t>(cpg) * hw;
    const Tensor& gv = tape.value(gamma);
    const Tensor& bv = tape.value(beta);
    require(gv.size() == static_cast<std::size_t>(c) && bv.size() == static_cast<std::size_t>(c), name,
            "affine parameter size mismatch");

    Tensor out(xv.shape());
    std::vector<double> mean(static_cast<std::size_t>(n) * groups), rstd(mean.size());
    for (int i = 0; i < n; ++i)
        for (int g = 0; g < groups; ++g) {
            const std::size_t off = (static_cast<std::size_t>(i) * c + static_cast<std::size_t>(g) * cpg) * hw;
            const double* p = xv.data() + off;
            double m = 0.0;
            for (std::size_t j = 0; j < gsize; ++j) m += p[j];
            m /= static_cast<double>(gsize);
            double v = 0.0;
            for (std::size_t j = 0; j < gsize; ++j) v += (p[j] - m) * (p[j] - m);
            v /= static_cast<double>(gsize);
            const double r = 1.0 / std::sqrt(v + eps);
            mean[static_cast<std::size_t>(i) * groups + g] = m;
            rstd[static_cast<std::size_t>(i) * groups + g] = r;
            for (int cc = 0; cc < cpg; ++cc) {
                const int ch = g * cpg + cc;
                const double a = gv[static_cast<std::size_t>(ch)] * r;
                const double b0 = bv[static_cast<std::size_t>(ch)] - a * m;
                const double* src = p + static_cast<std::size_t>(cc) * hw;
                double* dst = out.data() + off + static_cast<std::size_t>(cc) * hw;
                for (int j = 0; j < hw; ++j) dst[j] = a * src[j] + b0;
            }
        }

    return tape.push(std::move(out), name, {x, gamma, beta},
                     [=, mean = std::move(mean), rstd = std::move(rstd)](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        const Tensor& gv = t.value(gamma);
        const bool gx = wants(t, x), gg = wants(t, gamma), gb = wants(t, beta);
        std::vector<double> xhat(gsize), dxhat(gsize);
        for (int i = 0; i < n; ++i)
            for (int grp = 0; grp < groups; ++grp) {
                const std::size_t off = (static_cast<std::size_t>(i) * c + static_cast<std::size_t>(grp) * cpg) * hw;
                const double m = mean[static_cast<std::size_t>(i) * groups + grp];
                const double r = rstd[static_cast<std::size_t>(i) * groups + grp];
                double sum_d = 0.0, sum_dx = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    const int ch = grp * cpg + cc;
                    double dg = 0.0, db = 0.0;
                    for (int j = 0; j < hw; ++j) {
                        const std::size_t k = static_cast<std::size_t>(cc) * hw + j;
                        const double xh = (xv[off + k] - m) * r;
                        const double go = g[off + k];
                        xhat[k] = xh;
                        dxhat[k] = go * gv[static_cast<std::size_t>(ch)];
                        sum_d += dxhat[k];
                        sum_dx += dxhat[k] * xh;
                        dg += go * xh;
                        db += go;
                    }
                    if (gg) t.grad(gamma)[static_cast<std::size_t>(ch)] += dg;
                    if (gb) t.grad(beta)[static_cast<std::size_t>(ch)] += db;
                }
                if (gx) {
                    const double md = sum_d / static_cast<double>(gsize);
                    const double mdx = sum_dx / static_cast<double>(gsize);
                    double* dx = t.grad(x).data() + off;
                    for (std::size_t k = 0; k < gsize; ++k) dx[k] += r * (dxhat[k] - md - xhat[k] * mdx);
                }
            }
    });
}

Var silu(Tape& tape, Var x, const std::string& name) {
    const Tensor& xv = tape.value(x);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] / (1.0 + std::exp(-xv[i]));
    return tape.push(std::move(out), name, {x}, [=](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        Tensor& gx = t.grad(x);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-xv[i]));
            gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
    });
}

Var sigmoid(Tape& tape, Var x, const std::string& name) {
    const Tensor& xv = tape.value(x);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    // The closure reads the node's own output; its id is the next slot.
    const Var self{static_cast<int>(tape.node_count())};
    return tape.push(std::move(out), name, {x}, [=](Tape& t, const Tensor& g) {
        const Tensor& s = t.value(self);
        Tensor& gx = t.grad(x);
        for (std::size_t i = 0; i < s.size(); ++i) gx[i] += g[i] * s[i] * (1.0 - s[i]);
    });
}

Var add(Tape& tape, Var a, Var b, const std::string& name) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require(av.same_shape(bv), name,
            "shape mismatch " + Tensor::shape_string(av.shape()) + " + " + Tensor::shape_string(bv.shape()));
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return tape.push(std::move(out), name, {a, b}, [=](Tape& t, const Tensor& g) {
        if (wants(t, a)) {
            Tensor& ga = t.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(t, b)) {
            Tensor& gb = t.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

Var add_channel_bias(Tape& tape, Var x, Var v, const std::string& name) {
    const Tensor& xv = tape.value(x);
    const Tensor& vv = tape.value(v);
    require(xv.rank() == 4 && vv.rank() == 2 && vv.dim(0) == xv.dim(0) && vv.dim(1) == xv.dim(1), name,
            "cannot broadcast " + Tensor::shape_string(vv.shape()) + " onto " + Tensor::shape_string(xv.shape()));
    const int nc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out(xv.shape());
    for (int i = 0; i < nc; ++i)
        for (int j = 0; j < hw; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * hw + j;
            out[k] = xv[k] + vv[static_cast<std::size_t>(i)];
        }
    return tape.push(std::move(out), name, {x, v}, [=](Tape& t, const Tensor& g) {
        if (wants(t, x)) {
            Tensor& gx = t.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (wants(t, v)) {
            Tensor& gv = t.grad(v);
            for (int i = 0; i < nc; ++i) {
                double s = 0.0;
                for (int j = 0; j < hw; ++j) s += g[static_cast<std::size_t>(i) * hw + j];
                gv[static_cast<std::size_t>(i)] += s;
            }
        }
    });
}

Var concat_channels(Tape& tape, Var a, Var b, const std::string& name) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require(av.rank() == 4 && bv.rank() == 4 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) &&
                av.dim(3) == bv.dim(3),
            name, "incompatible shapes " + Tensor::shape_string(av.shape()) + ", " + Tensor::shape_string(bv.shape()));
    const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
    const std::size_t hw = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
    Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
    for (int i = 0; i < n; ++i) {
        std::copy_n(av.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
        std::copy_n(bv.data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
    }
    return tape.push(std::move(out), name, {a, b}, [=](Tape& t, const Tensor& g) {
        for (int i = 0; i < n; ++i) {
            if (wants(t, a)) {
                double* ga = t.grad(a).data() + i * ca * hw;
                const double* src = g.data() + i * (ca + cb) * hw;
                for (std::size_t k = 0; k < ca * hw; ++k) ga[k] += src[k];
            }
            if (wants(t, b)) {
                double* gb = t.grad(b).data() + i * cb * hw;
                const double* src = g.data() + (i * (ca + cb) + ca) * hw;
                for (std::size_t k = 0; k < cb * hw; ++k) gb[k] += src[k];
            }
        }
    });
}

Var upsample_nearest2(Tape& tape, Var x, const std::string& name) {
    const Tensor& xv = tape.value(x);
    require(xv.rank() == 4, name, "expects NCHW input");
    const int nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
    for (int i = 0; i < nc; ++i)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                out[(static_cast<std::size_t>(i) * 2 * h + y) * 2 * w + xx] =
                    xv[(static_cast<std::size_t>(i) * h + y / 2) * w + xx / 2];
    return tape.push(std::move(out), name, {x}, [=](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad(x);
        for (int i = 0; i < nc; ++i)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx)
                    gx[(static_cast<std::size_t>(i) * h + y / 2) * w + xx / 2] +=
                        g[(static_cast<std::size_t>(i) * 2 * h + y) * 2 * w + xx];
    });
}

Var scale(Tape& tape, Var x, double s, const std::string& name) {
    const Tensor& xv = tape.value(x);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = s * xv[i];
    return tape.push(std::move(out), name, {x}, [=](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
    });
}

Var mse(Tape& tape, Var a, Var b, const std::string& name) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require(av.same_shape(bv), name,
            "shape mismatch " + Tensor::shape_string(av.shape()) + " vs " + Tensor::shape_string(bv.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
    const double inv = 1.0 / static_cast<double>(av.size());
    return tape.push(Tensor({1}, acc * inv), name, {a, b}, [=](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        const double s = 2.0 * inv * g[0];
        if (wants(t, a)) {
            Tensor& ga = t.grad(a);
            for (std::size_t i = 0; i < av.size(); ++i) ga[i] += s * (av[i] - bv[i]);
        }
        if (wants(t, b)) {
            Tensor& gb = t.grad(b);
            for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= s * (av[i] - bv[i]);
        }
    });
}

}  // namespace vstain::nn
