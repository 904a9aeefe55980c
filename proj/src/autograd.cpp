#include "centrifuge/autograd.hpp"

#include "centrifuge/error.hpp"
#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace centrifuge {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
    Var v = record(p.value, p.trainable, nullptr);
    nodes_[v.id].param = &p;
    return v;
}

Var Tape::param(const Parameter& p) { return record(p.value, false, nullptr); }

Var Tape::record(Tensor value, bool requires_grad, BackwardFn fn) {
    if (consumed_) throw StateError("tape already consumed by backward()");
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(fn), nullptr});
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::backward(Var loss) {
    if (consumed_) throw StateError("backward called twice on the same tape");
    if (nodes_.empty() || loss.tape != this || loss.id >= nodes_.size()) {
        throw StateError("backward without a recorded forward pass");
    }
    if (nodes_[loss.id].value.size() != 1) {
        throw DimensionError("backward needs a scalar loss, got " + nodes_[loss.id].value.shape_str());
    }
    consumed_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    grad_of(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param != nullptr && n.param->trainable) {
            auto& dst = n.param->grad.values();
            const auto& src = n.grad.values();
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    }
}

namespace ops {

namespace {

Tape& tape_of(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw StateError("operands recorded on different tapes");
    return *a.tape;
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + t.shape_str());
}

void accumulate(Tensor& dst, const Tensor& src) {
    auto& d = dst.values();
    const auto& s = src.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

} // namespace

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: " + av.shape_str() + " x " + bv.shape_str());
    }
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out = Tensor::matrix(m, n);
    kernels::gemm(av.data().data(), false, bv.data().data(), false, out.data().data(), m, k, n, false);
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    const std::size_t ia = a.id, ib = b.id;
    return t.record(std::move(out), rg, [ia, ib, m, k, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs(ia)) {
            kernels::gemm(g.data().data(), false, tp.value_of(ib).data().data(), true,
                          tp.grad_of(ia).data().data(), m, n, k, true);
        }
        if (tp.needs(ib)) {
            kernels::gemm(tp.value_of(ia).data().data(), true, g.data().data(), false,
                          tp.grad_of(ib).data().data(), k, m, n, true);
        }
    });
}

Var linear(Var x, Var weight, const Var* bias) {
    Var y = matmul(x, weight);
    return bias != nullptr ? add_row(y, *bias) : y;
}

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) throw DimensionError("add: " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out = av;
    accumulate(out, bv);
    const std::size_t ia = a.id, ib = b.id;
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b), [ia, ib](Tape& tp, std::size_t self) {
        if (tp.needs(ia)) accumulate(tp.grad_of(ia), tp.grad(self));
        if (tp.needs(ib)) accumulate(tp.grad_of(ib), tp.grad(self));
    });
}

Var add_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    const Tensor& av = t.value(a);
    const Tensor& rv = t.value(row);
    if (rv.size() != av.cols()) throw DimensionError("add_row: " + av.shape_str() + " + " + rv.shape_str());
    Tensor out = av;
    const std::size_t r = av.rows(), c = av.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) += rv[j];
    const std::size_t ia = a.id, ib = row.id;
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(row),
                    [ia, ib, r, c](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad(self);
                        if (tp.needs(ia)) accumulate(tp.grad_of(ia), g);
                        if (tp.needs(ib)) {
                            Tensor& gb = tp.grad_of(ib);
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j) gb[j] += g(i, j);
                        }
                    });
}

Var add_grouped(Var a, Var per_group, std::size_t group_size) {
    Tape& t = tape_of(a, per_group);
    const Tensor& av = t.value(a);
    const Tensor& pv = t.value(per_group);
    require_matrix(av, "add_grouped");
    if (pv.cols() != av.cols() || pv.rows() * group_size != av.rows()) {
        throw DimensionError("add_grouped: " + av.shape_str() + " vs " + pv.shape_str());
    }
    Tensor out = av;
    const std::size_t c = av.cols();
    for (std::size_t i = 0; i < av.rows(); ++i) {
        const std::size_t gidx = i / group_size;
        for (std::size_t j = 0; j < c; ++j) out(i, j) += pv(gidx, j);
    }
    const std::size_t ia = a.id, ib = per_group.id, rows = av.rows();
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(per_group),
                    [ia, ib, rows, c, group_size](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad(self);
                        if (tp.needs(ia)) accumulate(tp.grad_of(ia), g);
                        if (tp.needs(ib)) {
                            Tensor& gb = tp.grad_of(ib);
                            for (std::size_t i = 0; i < rows; ++i)
                                for (std::size_t j = 0; j < c; ++j) gb(i / group_size, j) += g(i, j);
                        }
                    });
}

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (auto& v : out.values()) v *= s;
    const std::size_t ia = a.id;
    return t.record(std::move(out), t.requires_grad(a), [ia, s](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654; // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
} // namespace

Var gelu(Var a) {
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    const std::size_t ia = a.id;
    return t.record(std::move(out), t.requires_grad(a), [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value_of(ia);
        Tensor& ga = tp.grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv[i];
            const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            ga[i] += g[i] * d;
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape& t = tape_of(x, gain);
    const Tensor& xv = t.value(x);
    require_matrix(xv, "layer_norm");
    const std::size_t r = xv.rows(), c = xv.cols();
    if (t.value(gain).size() != c || t.value(bias).size() != c) {
        throw DimensionError("layer_norm: gain/bias width does not match " + xv.shape_str());
    }
    auto xhat = std::make_shared<Tensor>(xv.shape());
    auto rstd = std::make_shared<std::vector<double>>(r);
    Tensor out(xv.shape());
    const Tensor& gv = t.value(gain);
    const Tensor& bv = t.value(bias);
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += xv(i, j);
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = xv(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[i] = rs;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (xv(i, j) - mean) * rs;
            (*xhat)(i, j) = h;
            out(i, j) = h * gv[j] + bv[j];
        }
    }
    const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
    const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
    return t.record(std::move(out), rg, [ix, ig, ib, r, c, xhat, rstd](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& gv = tp.value_of(ig);
        if (tp.needs(ig)) {
            Tensor& gg = tp.grad_of(ig);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gg[j] += g(i, j) * (*xhat)(i, j);
        }
        if (tp.needs(ib)) {
            Tensor& gb = tp.grad_of(ib);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += g(i, j);
        }
        if (tp.needs(ix)) {
            Tensor& gx = tp.grad_of(ix);
            const double inv_c = 1.0 / static_cast<double>(c);
            for (std::size_t i = 0; i < r; ++i) {
                double mean_d = 0.0, mean_dh = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = g(i, j) * gv[j];
                    mean_d += d;
                    mean_dh += d * (*xhat)(i, j);
                }
                mean_d *= inv_c;
                mean_dh *= inv_c;
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = g(i, j) * gv[j];
                    gx(i, j) += (*rstd)[i] * (d - mean_d - (*xhat)(i, j) * mean_dh);
                }
            }
        }
    });
}

Var softmax_rows(Var logits) {
    Tape& t = *logits.tape;
    const Tensor& x = t.value(logits);
    require_matrix(x, "softmax_rows");
    if (!x.all_finite()) throw InputError("softmax: non-finite logits");
    const std::size_t r = x.rows(), c = x.cols();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < r; ++i) {
        double mx = x(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out(i, j) = std::exp(x(i, j) - mx);
            s += out(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) out(i, j) /= s;
    }
    const std::size_t ia = logits.id;
    return t.record(std::move(out), t.requires_grad(logits), [ia, r, c](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& p = tp.value_of(self);
        Tensor& ga = tp.grad_of(ia);
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * p(i, j);
            for (std::size_t j = 0; j < c; ++j) ga(i, j) += p(i, j) * (g(i, j) - dot);
        }
    });
}

Var attention(Var q, Var k, Var v, std::size_t n, std::size_t heads) {
    Tape& t = tape_of(q, k);
    tape_of(q, v);
    const Tensor& qv = t.value(q);
    const Tensor& kv = t.value(k);
    const Tensor& vv = t.value(v);
    require_matrix(qv, "attention");
    if (!qv.same_shape(kv) || !qv.same_shape(vv)) throw DimensionError("attention: q/k/v shapes differ");
    const std::size_t d = qv.cols();
    if (heads == 0 || d % heads != 0) throw ConfigError("attention: width not divisible by head count");
    if (n == 0 || qv.rows() % n != 0) throw DimensionError("attention: rows not a multiple of sequence length");
    const std::size_t batch = qv.rows() / n;
    const std::size_t dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    // probs laid out [batch][head][n][n]
    auto probs = std::make_shared<std::vector<double>>(batch * heads * n * n);
    Tensor out(qv.shape());
    std::vector<double> row(n);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* P = probs->data() + ((b * heads + h) * n * n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* qi = &qv(b * n + i, h * dh);
                double mx = -INFINITY;
                for (std::size_t j = 0; j < n; ++j) {
                    const double* kj = &kv(b * n + j, h * dh);
                    double s = 0.0;
                    for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
                    row[j] = s * sc;
                    mx = std::max(mx, row[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    z += row[j];
                }
                double* oi = &out(b * n + i, h * dh);
                for (std::size_t j = 0; j < n; ++j) {
                    const double p = row[j] / z;
                    P[i * n + j] = p;
                    const double* vj = &vv(b * n + j, h * dh);
                    for (std::size_t e = 0; e < dh; ++e) oi[e] += p * vj[e];
                }
            }
        }
    }
    const std::size_t iq = q.id, ik = k.id, iv = v.id;
    const bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
    return t.record(std::move(out), rg, [iq, ik, iv, n, heads, batch, dh, sc, probs](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& qv = tp.value_of(iq);
        const Tensor& kv = tp.value_of(ik);
        const Tensor& vv = tp.value_of(iv);
        const bool need_q = tp.needs(iq), need_k = tp.needs(ik), need_v = tp.needs(iv);
        Tensor* gq = need_q ? &tp.grad_of(iq) : nullptr;
        Tensor* gk = need_k ? &tp.grad_of(ik) : nullptr;
        Tensor* gv = need_v ? &tp.grad_of(iv) : nullptr;
        std::vector<double> dp(n), ds(n);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                const double* P = probs->data() + ((b * heads + h) * n * n);
                for (std::size_t i = 0; i < n; ++i) {
                    const double* gi = &g(b * n + i, h * dh);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double* vj = &vv(b * n + j, h * dh);
                        double s = 0.0;
                        for (std::size_t e = 0; e < dh; ++e) s += gi[e] * vj[e];
                        dp[j] = s;
                        dot += s * P[i * n + j];
                        if (gv != nullptr) {
                            double* gvj = &(*gv)(b * n + j, h * dh);
                            const double p = P[i * n + j];
                            for (std::size_t e = 0; e < dh; ++e) gvj[e] += p * gi[e];
                        }
                    }
                    for (std::size_t j = 0; j < n; ++j) ds[j] = P[i * n + j] * (dp[j] - dot) * sc;
                    if (gq != nullptr) {
                        double* gqi = &(*gq)(b * n + i, h * dh);
                        for (std::size_t j = 0; j < n; ++j) {
                            const double* kj = &kv(b * n + j, h * dh);
                            for (std::size_t e = 0; e < dh; ++e) gqi[e] += ds[j] * kj[e];
                        }
                    }
                    if (gk != nullptr) {
                        const double* qi = &qv(b * n + i, h * dh);
                        for (std::size_t j = 0; j < n; ++j) {
                            double* gkj = &(*gk)(b * n + j, h * dh);
                            for (std::size_t e = 0; e < dh; ++e) gkj[e] += ds[j] * qi[e];
                        }
                    }
                }
            }
        }
    });
}

Var mean_pool(Var x, std::size_t n) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    require_matrix(xv, "mean_pool");
    if (n == 0 || xv.rows() % n != 0) throw DimensionError("mean_pool: rows not a multiple of n");
    const std::size_t batch = xv.rows() / n, c = xv.cols();
    const double inv = 1.0 / static_cast<double>(n);
    Tensor out = Tensor::matrix(batch, c);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) out(b, j) += xv(b * n + i, j);
    for (auto& v : out.values()) v *= inv;
    const std::size_t ia = x.id;
    return t.record(std::move(out), t.requires_grad(x), [ia, n, batch, c, inv](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_of(ia);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) ga(b * n + i, j) += g(b, j) * inv;
    });
}

Var concat_cols(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.rows() != bv.rows()) throw DimensionError("concat: " + av.shape_str() + " vs " + bv.shape_str());
    const std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
    Tensor out = Tensor::matrix(r, ca + cb);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out(i, j) = av(i, j);
        for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = bv(i, j);
    }
    const std::size_t ia = a.id, ib = b.id;
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                    [ia, ib, r, ca, cb](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad(self);
                        if (tp.needs(ia)) {
                            Tensor& ga = tp.grad_of(ia);
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < ca; ++j) ga(i, j) += g(i, j);
                        }
                        if (tp.needs(ib)) {
                            Tensor& gb = tp.grad_of(ib);
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < cb; ++j) gb(i, j) += g(i, ca + j);
                        }
                    });
}

Var concat_rows(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_matrix(av, "concat_rows");
    require_matrix(bv, "concat_rows");
    if (av.cols() != bv.cols()) throw DimensionError("concat_rows: " + av.shape_str() + " vs " + bv.shape_str());
    std::vector<double> data(av.values());
    data.insert(data.end(), bv.values().begin(), bv.values().end());
    Tensor out({av.rows() + bv.rows(), av.cols()}, std::move(data));
    const std::size_t ia = a.id, ib = b.id, na = av.size();
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b), [ia, ib, na](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs(ia)) {
            Tensor& ga = tp.grad_of(ia);
            for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (tp.needs(ib)) {
            Tensor& gb = tp.grad_of(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
        }
    });
}

Var add_tiled(Var a, Var tile) {
    Tape& t = tape_of(a, tile);
    const Tensor& av = t.value(a);
    const Tensor& tv = t.value(tile);
    require_matrix(av, "add_tiled");
    const std::size_t n = tv.rows(), c = av.cols();
    if (tv.cols() != c || n == 0 || av.rows() % n != 0) {
        throw DimensionError("add_tiled: " + av.shape_str() + " vs " + tv.shape_str());
    }
    Tensor out = av;
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) += tv(i % n, j);
    const std::size_t ia = a.id, ib = tile.id, rows = av.rows();
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(tile),
                    [ia, ib, rows, n, c](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad(self);
                        if (tp.needs(ia)) accumulate(tp.grad_of(ia), g);
                        if (tp.needs(ib)) {
                            Tensor& gb = tp.grad_of(ib);
                            for (std::size_t i = 0; i < rows; ++i)
                                for (std::size_t j = 0; j < c; ++j) gb(i % n, j) += g(i, j);
                        }
                    });
}

Var repeat_rows(Var a, std::size_t n) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const std::size_t r = av.rows(), c = av.cols();
    Tensor out = Tensor::matrix(r * n, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t j = 0; j < c; ++j) out(i * n + p, j) = av(i, j);
    const std::size_t ia = a.id;
    return t.record(std::move(out), t.requires_grad(a), [ia, r, c, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_of(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t p = 0; p < n; ++p)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g(i * n + p, j);
    });
}

Var embed_sum(std::span<const std::int32_t> index, std::size_t rows, std::size_t width, Var weight) {
    Tape& t = *weight.tape;
    const Tensor& w = t.value(weight);
    require_matrix(w, "embed_sum");
    if (index.size() != rows * width) throw DimensionError("embed_sum: index length mismatch");
    const std::size_t d = w.cols();
    Tensor out = Tensor::matrix(rows, d);
    for (std::size_t r = 0; r < rows; ++r) {
        double* o = &out(r, 0);
        for (std::size_t s = 0; s < width; ++s) {
            const std::int32_t idx = index[r * width + s];
            if (idx < 0) continue;
            if (static_cast<std::size_t>(idx) >= w.rows()) throw DimensionError("embed_sum: index out of range");
            const double* wr = &w(static_cast<std::size_t>(idx), 0);
            for (std::size_t j = 0; j < d; ++j) o[j] += wr[j];
        }
    }
    const std::size_t iw = weight.id;
    std::vector<std::int32_t> idx_copy(index.begin(), index.end());
    return t.record(std::move(out), t.requires_grad(weight),
                    [iw, rows, width, d, idx = std::move(idx_copy)](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad(self);
                        Tensor& gw = tp.grad_of(iw);
                        for (std::size_t r = 0; r < rows; ++r) {
                            const double* gr = &g(r, 0);
                            for (std::size_t s = 0; s < width; ++s) {
                                const std::int32_t ix = idx[r * width + s];
                                if (ix < 0) continue;
                                double* dst = &gw(static_cast<std::size_t>(ix), 0);
                                for (std::size_t j = 0; j < d; ++j) dst[j] += gr[j];
                            }
                        }
                    });
}

Var ce_label_smoothed(Var probs, std::span<const std::size_t> targets, double eps) {
    if (!(eps >= 0.0 && eps < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
    Tape& t = *probs.tape;
    const Tensor& p = t.value(probs);
    require_matrix(p, "ce_label_smoothed");
    const std::size_t r = p.rows(), c = p.cols();
    if (targets.size() != r) throw DimensionError("ce_label_smoothed: target count mismatch");
    const double off = eps / static_cast<double>(c);
    double loss = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        if (targets[i] >= c) throw DimensionError("ce_label_smoothed: target out of range");
        for (std::size_t j = 0; j < c; ++j) {
            const double q = (j == targets[i] ? 1.0 - eps : 0.0) + off;
            if (q != 0.0) loss -= q * std::log(p(i, j));
        }
    }
    loss /= static_cast<double>(r);
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    const std::size_t ia = probs.id;
    return t.record(Tensor::vector({loss}), t.requires_grad(probs),
                    [ia, r, c, eps, off, tg = std::move(tg)](Tape& tp, std::size_t self) {
                        const double g = tp.grad(self)[0] / static_cast<double>(r);
                        const Tensor& pv = tp.value_of(ia);
                        Tensor& ga = tp.grad_of(ia);
                        for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) {
                                const double q = (j == tg[i] ? 1.0 - eps : 0.0) + off;
                                if (q != 0.0) ga(i, j) -= g * q / pv(i, j);
                            }
                    });
}

Var sum(Var a) {
    Tape& t = *a.tape;
    double s = 0.0;
    for (double v : t.value(a).values()) s += v;
    const std::size_t ia = a.id;
    return t.record(Tensor::vector({s}), t.requires_grad(a), [ia](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)[0];
        for (auto& v : tp.grad_of(ia).values()) v += g;
    });
}

Var add_scalar_terms(Var a, Var b, double b_weight) {
    Tape& t = tape_of(a, b);
    if (t.value(a).size() != 1 || t.value(b).size() != 1) throw DimensionError("add_scalar_terms: non-scalar");
    const double v = t.value(a)[0] + b_weight * t.value(b)[0];
    const std::size_t ia = a.id, ib = b.id;
    return t.record(Tensor::vector({v}), t.requires_grad(a) || t.requires_grad(b),
                    [ia, ib, b_weight](Tape& tp, std::size_t self) {
                        const double g = tp.grad(self)[0];
                        if (tp.needs(ia)) tp.grad_of(ia)[0] += g;
                        if (tp.needs(ib)) tp.grad_of(ib)[0] += b_weight * g;
                    });
}

} // namespace ops

} // namespace centrifuge
