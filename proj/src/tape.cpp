#include "fsl/tape.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

constexpr double kProbClamp = 1e-12;

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Sweep gradient buffer access; allocates zeros on first touch.
Matrix& gbuf(std::vector<Matrix>& g, int i, const Matrix& like) {
    Matrix& m = g[static_cast<size_t>(i)];
    if (m.empty()) m = Matrix(like.rows(), like.cols());
    return m;
}

// x * y^T without materializing the transpose.
Matrix matmul_nt(const Matrix& x, const Matrix& y) {
    Matrix out(x.rows(), y.rows());
    for (size_t i = 0; i < x.rows(); ++i)
        for (size_t j = 0; j < y.rows(); ++j) {
            double s = 0.0;
            for (size_t c = 0; c < x.cols(); ++c) s += x(i, c) * y(j, c);
            out(i, j) = s;
        }
    return out;
}

// x^T * y without materializing the transpose.
Matrix matmul_tn(const Matrix& x, const Matrix& y) {
    Matrix out(x.cols(), y.cols());
    for (size_t c = 0; c < x.rows(); ++c)
        for (size_t i = 0; i < x.cols(); ++i) {
            double xi = x(c, i);
            if (xi == 0.0) continue;
            for (size_t j = 0; j < y.cols(); ++j) out(i, j) += xi * y(c, j);
        }
    return out;
}

void add_into(Matrix& dst, const Matrix& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

} // namespace

Var Tape::push(Matrix value, std::vector<int> parents, BackwardFn fn) {
    for (int p : parents)
        if (p < 0 || p >= static_cast<int>(nodes_.size()))
            raise(ErrorCode::internal, "tape: parent index out of range");
    if (finite_checks_enabled()) value.ensure_finite("tape op");
    Node node;
    node.grad = Matrix(value.rows(), value.cols());
    node.value = std::move(value);
    node.parents = std::move(parents);
    node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check(Var v) const {
    if (v.index < 0 || v.index >= static_cast<int>(nodes_.size()))
        raise(ErrorCode::invalid_argument, "tape: bad node handle");
}

Var Tape::leaf(Matrix value) { return push(std::move(value), {}, nullptr); }

const Matrix& Tape::value(Var v) const {
    check(v);
    return nodes_[static_cast<size_t>(v.index)].value;
}

const Matrix& Tape::grad(Var v) const {
    check(v);
    return nodes_[static_cast<size_t>(v.index)].grad;
}

void Tape::backward(Var loss) {
    check(loss);
    const Matrix& lv = val(loss.index);
    if (lv.rows() != 1 || lv.cols() != 1)
        raise(ErrorCode::contract, "backward: loss must be 1x1, got " + shape_str(lv));
    std::vector<Matrix> g(nodes_.size());
    g[static_cast<size_t>(loss.index)] = Matrix::filled(1, 1, 1.0);
    for (int i = loss.index; i >= 0; --i) {
        Node& node = nodes_[static_cast<size_t>(i)];
        if (g[static_cast<size_t>(i)].empty() || !node.backward) continue;
        node.backward(*this, g, i);
    }
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (!g[i].empty()) add_into(nodes_[i].grad, g[i]);
}

void Tape::zero_grads() {
    for (auto& node : nodes_) node.grad = Matrix(node.value.rows(), node.value.cols());
}

Var Tape::add(Var a, Var b) {
    check(a); check(b);
    Matrix out = fsl::add(val(a.index), val(b.index));
    int ia = a.index, ib = b.index;
    return push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::vector<Matrix>& g, int self) {
        add_into(gbuf(g, ia, t.val(ia)), g[static_cast<size_t>(self)]);
        add_into(gbuf(g, ib, t.val(ib)), g[static_cast<size_t>(self)]);
    });
}

Var Tape::sub(Var a, Var b) {
    check(a); check(b);
    Matrix out = fsl::sub(val(a.index), val(b.index));
    int ia = a.index, ib = b.index;
    return push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        add_into(gbuf(g, ia, t.val(ia)), go);
        Matrix& gb = gbuf(g, ib, t.val(ib));
        for (size_t i = 0; i < gb.size(); ++i) gb.data()[i] -= go.data()[i];
    });
}

Var Tape::hadamard(Var a, Var b) {
    check(a); check(b);
    Matrix out = fsl::hadamard(val(a.index), val(b.index));
    int ia = a.index, ib = b.index;
    return push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        add_into(gbuf(g, ia, t.val(ia)), fsl::hadamard(go, t.val(ib)));
        add_into(gbuf(g, ib, t.val(ib)), fsl::hadamard(go, t.val(ia)));
    });
}

Var Tape::scale(Var a, double s) {
    check(a);
    Matrix out = fsl::scale(val(a.index), s);
    int ia = a.index;
    return push(std::move(out), {ia}, [ia, s](Tape& t, std::vector<Matrix>& g, int self) {
        add_into(gbuf(g, ia, t.val(ia)), fsl::scale(g[static_cast<size_t>(self)], s));
    });
}

Var Tape::add_rowvec(Var m, Var row) {
    check(m); check(row);
    const Matrix& mv = val(m.index);
    const Matrix& rv = val(row.index);
    if (rv.rows() != 1 || rv.cols() != mv.cols())
        raise(ErrorCode::dimension,
              "add_rowvec: row must be 1x" + std::to_string(mv.cols()) + ", got " + shape_str(rv));
    Matrix out = mv;
    for (size_t i = 0; i < out.rows(); ++i)
        for (size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
    int im = m.index, ir = row.index;
    return push(std::move(out), {im, ir}, [im, ir](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        add_into(gbuf(g, im, t.val(im)), go);
        Matrix& gr = gbuf(g, ir, t.val(ir));
        for (size_t i = 0; i < go.rows(); ++i)
            for (size_t j = 0; j < go.cols(); ++j) gr(0, j) += go(i, j);
    });
}

Var Tape::mul_mask(Var a, Matrix mask) {
    check(a);
    Matrix out = fsl::hadamard(val(a.index), mask);
    int ia = a.index;
    return push(std::move(out), {ia},
                [ia, mask = std::move(mask)](Tape& t, std::vector<Matrix>& g, int self) {
                    add_into(gbuf(g, ia, t.val(ia)),
                             fsl::hadamard(g[static_cast<size_t>(self)], mask));
                });
}

Var Tape::matmul(Var a, Var b) {
    check(a); check(b);
    Matrix out = fsl::matmul(val(a.index), val(b.index));
    int ia = a.index, ib = b.index;
    return push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        add_into(gbuf(g, ia, t.val(ia)), matmul_nt(go, t.val(ib)));
        add_into(gbuf(g, ib, t.val(ib)), matmul_tn(t.val(ia), go));
    });
}

Var Tape::transpose(Var a) {
    check(a);
    Matrix out = fsl::transpose(val(a.index));
    int ia = a.index;
    return push(std::move(out), {ia}, [ia](Tape& t, std::vector<Matrix>& g, int self) {
        add_into(gbuf(g, ia, t.val(ia)), fsl::transpose(g[static_cast<size_t>(self)]));
    });
}

Var Tape::relu(Var a) {
    check(a);
    const Matrix& av = val(a.index);
    Matrix out = av;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(0.0, out.data()[i]);
    int ia = a.index;
    return push(std::move(out), {ia}, [ia](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        const Matrix& x = t.val(ia);
        Matrix& ga = gbuf(g, ia, x);
        for (size_t i = 0; i < ga.size(); ++i)
            if (x.data()[i] > 0.0) ga.data()[i] += go.data()[i];
    });
}

Var Tape::tanh(Var a) {
    check(a);
    Matrix out = val(a.index);
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(out.data()[i]);
    int ia = a.index;
    return push(std::move(out), {ia}, [ia](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        const Matrix& y = t.val(self);
        Matrix& ga = gbuf(g, ia, t.val(ia));
        for (size_t i = 0; i < ga.size(); ++i) {
            double yi = y.data()[i];
            ga.data()[i] += go.data()[i] * (1.0 - yi * yi);
        }
    });
}

Var Tape::sigmoid(Var a) {
    check(a);
    Matrix out = val(a.index);
    for (size_t i = 0; i < out.size(); ++i) {
        double x = out.data()[i];
        out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    int ia = a.index;
    return push(std::move(out), {ia}, [ia](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        const Matrix& y = t.val(self);
        Matrix& ga = gbuf(g, ia, t.val(ia));
        for (size_t i = 0; i < ga.size(); ++i) {
            double yi = y.data()[i];
            ga.data()[i] += go.data()[i] * yi * (1.0 - yi);
        }
    });
}

Var Tape::softmax_rows(Var a) {
    check(a);
    Matrix out = stable_softmax_rows(val(a.index));
    int ia = a.index;
    return push(std::move(out), {ia}, [ia](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        const Matrix& y = t.val(self);
        Matrix& ga = gbuf(g, ia, t.val(ia));
        for (size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (size_t j = 0; j < y.cols(); ++j) dot += go(i, j) * y(i, j);
            for (size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (go(i, j) - dot);
        }
    });
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    check(x); check(gain); check(bias);
    Matrix out = fsl::layer_norm_rows(val(x.index), val(gain.index), val(bias.index), eps);
    int ix = x.index, ig = gain.index, ib = bias.index;
    return push(std::move(out), {ix, ig, ib},
                [ix, ig, ib, eps](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        const Matrix& xv = t.val(ix);
        const Matrix& gv = t.val(ig);
        Matrix& gx = gbuf(g, ix, xv);
        Matrix& gg = gbuf(g, ig, gv);
        Matrix& gb = gbuf(g, ib, t.val(ib));
        double n = static_cast<double>(xv.cols());
        for (size_t i = 0; i < xv.rows(); ++i) {
            double mean = 0.0;
            for (size_t j = 0; j < xv.cols(); ++j) mean += xv(i, j);
            mean /= n;
            double var = 0.0;
            for (size_t j = 0; j < xv.cols(); ++j) {
                double d = xv(i, j) - mean;
                var += d * d;
            }
            var /= n;
            double inv = 1.0 / std::sqrt(var + eps);
            // h = dL/dxhat; m1, m2 are its row means against 1 and xhat.
            double m1 = 0.0, m2 = 0.0;
            for (size_t j = 0; j < xv.cols(); ++j) {
                double xhat = (xv(i, j) - mean) * inv;
                double h = go(i, j) * gv(0, j);
                gg(0, j) += go(i, j) * xhat;
                gb(0, j) += go(i, j);
                m1 += h;
                m2 += h * xhat;
            }
            m1 /= n;
            m2 /= n;
            for (size_t j = 0; j < xv.cols(); ++j) {
                double xhat = (xv(i, j) - mean) * inv;
                double h = go(i, j) * gv(0, j);
                gx(i, j) += inv * (h - m1 - xhat * m2);
            }
        }
    });
}

Var Tape::concat_cols(Var a, Var b) {
    check(a); check(b);
    const Matrix& av = val(a.index);
    const Matrix& bv = val(b.index);
    if (av.rows() != bv.rows())
        raise(ErrorCode::dimension,
              "concat_cols: row counts " + shape_str(av) + " vs " + shape_str(bv));
    Matrix out(av.rows(), av.cols() + bv.cols());
    for (size_t i = 0; i < av.rows(); ++i) {
        for (size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j);
        for (size_t j = 0; j < bv.cols(); ++j) out(i, av.cols() + j) = bv(i, j);
    }
    int ia = a.index, ib = b.index;
    size_t ac = av.cols();
    return push(std::move(out), {ia, ib}, [ia, ib, ac](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        Matrix& ga = gbuf(g, ia, t.val(ia));
        Matrix& gb = gbuf(g, ib, t.val(ib));
        for (size_t i = 0; i < go.rows(); ++i) {
            for (size_t j = 0; j < ac; ++j) ga(i, j) += go(i, j);
            for (size_t j = 0; j < gb.cols(); ++j) gb(i, j) += go(i, ac + j);
        }
    });
}

Var Tape::stack_rows(const std::vector<Var>& parts) {
    if (parts.empty()) raise(ErrorCode::invalid_argument, "stack_rows: no parts");
    size_t cols = 0, rows = 0;
    for (Var v : parts) {
        check(v);
        const Matrix& m = val(v.index);
        if (cols == 0) cols = m.cols();
        if (m.cols() != cols) raise(ErrorCode::dimension, "stack_rows: mixed column counts");
        rows += m.rows();
    }
    Matrix out(rows, cols);
    std::vector<int> parents;
    size_t r = 0;
    for (Var v : parts) {
        const Matrix& m = val(v.index);
        for (size_t i = 0; i < m.rows(); ++i)
            for (size_t j = 0; j < cols; ++j) out(r + i, j) = m(i, j);
        r += m.rows();
        parents.push_back(v.index);
    }
    return push(std::move(out), parents, [parents](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        size_t r = 0;
        for (int p : parents) {
            const Matrix& pv = t.val(p);
            Matrix& gp = gbuf(g, p, pv);
            for (size_t i = 0; i < pv.rows(); ++i)
                for (size_t j = 0; j < go.cols(); ++j) gp(i, j) += go(r + i, j);
            r += pv.rows();
        }
    });
}

Var Tape::slice_rows(Var a, size_t r0, size_t r1) {
    check(a);
    const Matrix& av = val(a.index);
    if (r0 >= r1 || r1 > av.rows())
        raise(ErrorCode::invalid_argument, "slice_rows: bad range [" + std::to_string(r0) + ", " +
                                               std::to_string(r1) + ") of " + shape_str(av));
    Matrix out(r1 - r0, av.cols());
    for (size_t i = r0; i < r1; ++i)
        for (size_t j = 0; j < av.cols(); ++j) out(i - r0, j) = av(i, j);
    int ia = a.index;
    return push(std::move(out), {ia}, [ia, r0](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        Matrix& ga = gbuf(g, ia, t.val(ia));
        for (size_t i = 0; i < go.rows(); ++i)
            for (size_t j = 0; j < go.cols(); ++j) ga(r0 + i, j) += go(i, j);
    });
}

Var Tape::sum_all(Var a) {
    check(a);
    const Matrix& av = val(a.index);
    double s = 0.0;
    for (size_t i = 0; i < av.size(); ++i) s += av.data()[i];
    int ia = a.index;
    return push(Matrix::filled(1, 1, s), {ia}, [ia](Tape& t, std::vector<Matrix>& g, int self) {
        double go = g[static_cast<size_t>(self)](0, 0);
        Matrix& ga = gbuf(g, ia, t.val(ia));
        for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] += go;
    });
}

Var Tape::sum_rows(Var a) {
    check(a);
    const Matrix& av = val(a.index);
    Matrix out(1, av.cols());
    for (size_t i = 0; i < av.rows(); ++i)
        for (size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j);
    int ia = a.index;
    return push(std::move(out), {ia}, [ia](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        Matrix& ga = gbuf(g, ia, t.val(ia));
        for (size_t i = 0; i < ga.rows(); ++i)
            for (size_t j = 0; j < ga.cols(); ++j) ga(i, j) += go(0, j);
    });
}

Var Tape::repeat_rows(Var row, size_t n) {
    check(row);
    const Matrix& rv = val(row.index);
    if (rv.rows() != 1) raise(ErrorCode::dimension, "repeat_rows: input must be a single row");
    Matrix out(n, rv.cols());
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < rv.cols(); ++j) out(i, j) = rv(0, j);
    int ir = row.index;
    return push(std::move(out), {ir}, [ir](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        Matrix& gr = gbuf(g, ir, t.val(ir));
        for (size_t i = 0; i < go.rows(); ++i)
            for (size_t j = 0; j < go.cols(); ++j) gr(0, j) += go(i, j);
    });
}

Var Tape::group_mean_rows(Var a, const std::vector<int>& groups, int n_groups) {
    check(a);
    const Matrix& av = val(a.index);
    if (groups.size() != av.rows())
        raise(ErrorCode::dimension, "group_mean_rows: " + std::to_string(groups.size()) +
                                        " group ids for " + std::to_string(av.rows()) + " rows");
    if (n_groups <= 0) raise(ErrorCode::invalid_argument, "group_mean_rows: n_groups must be positive");
    std::vector<double> count(static_cast<size_t>(n_groups), 0.0);
    for (int gid : groups) {
        if (gid < 0 || gid >= n_groups)
            raise(ErrorCode::contract, "group_mean_rows: group id " + std::to_string(gid) +
                                           " outside [0, " + std::to_string(n_groups) + ")");
        count[static_cast<size_t>(gid)] += 1.0;
    }
    for (int k = 0; k < n_groups; ++k)
        if (count[static_cast<size_t>(k)] == 0.0)
            raise(ErrorCode::contract, "group_mean_rows: group " + std::to_string(k) + " is empty");
    Matrix out(static_cast<size_t>(n_groups), av.cols());
    for (size_t i = 0; i < av.rows(); ++i) {
        size_t k = static_cast<size_t>(groups[i]);
        for (size_t j = 0; j < av.cols(); ++j) out(k, j) += av(i, j);
    }
    for (size_t k = 0; k < out.rows(); ++k)
        for (size_t j = 0; j < out.cols(); ++j) out(k, j) /= count[k];
    int ia = a.index;
    return push(std::move(out), {ia},
                [ia, groups, count](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        Matrix& ga = gbuf(g, ia, t.val(ia));
        for (size_t i = 0; i < ga.rows(); ++i) {
            size_t k = static_cast<size_t>(groups[i]);
            for (size_t j = 0; j < ga.cols(); ++j) ga(i, j) += go(k, j) / count[k];
        }
    });
}

Var Tape::complement_max_rows(Var a) {
    check(a);
    const Matrix& av = val(a.index);
    size_t n = av.rows(), d = av.cols();
    Matrix out(n, d);
    // Source row feeding each output entry; -1 when the complement is empty.
    std::vector<int> src(n * d, -1);
    for (size_t c = 0; c < d; ++c) {
        // Column top-2 with lowest-index tie rule.
        size_t i1 = 0;
        for (size_t i = 1; i < n; ++i)
            if (av(i, c) > av(i1, c)) i1 = i;
        int i2 = -1;
        for (size_t i = 0; i < n; ++i) {
            if (i == i1) continue;
            if (i2 < 0 || av(i, c) > av(static_cast<size_t>(i2), c)) i2 = static_cast<int>(i);
        }
        for (size_t i = 0; i < n; ++i) {
            if (i != i1) {
                out(i, c) = av(i1, c);
                src[i * d + c] = static_cast<int>(i1);
            } else if (i2 >= 0) {
                out(i, c) = av(static_cast<size_t>(i2), c);
                src[i * d + c] = i2;
            }
        }
    }
    int ia = a.index;
    return push(std::move(out), {ia}, [ia, src, d](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        Matrix& ga = gbuf(g, ia, t.val(ia));
        for (size_t i = 0; i < go.rows(); ++i)
            for (size_t c = 0; c < d; ++c) {
                int s = src[i * d + c];
                if (s >= 0) ga(static_cast<size_t>(s), c) += go(i, c);
            }
    });
}

Var Tape::pairwise_sqdist(Var q, Var c) {
    check(q); check(c);
    const Matrix& qv = val(q.index);
    const Matrix& cv = val(c.index);
    if (qv.cols() != cv.cols())
        raise(ErrorCode::dimension,
              "pairwise_sqdist: dims " + shape_str(qv) + " vs " + shape_str(cv));
    Matrix out(qv.rows(), cv.rows());
    for (size_t i = 0; i < qv.rows(); ++i)
        for (size_t j = 0; j < cv.rows(); ++j) {
            double s = 0.0;
            for (size_t k = 0; k < qv.cols(); ++k) {
                double diff = qv(i, k) - cv(j, k);
                s += diff * diff;
            }
            out(i, j) = s;
        }
    int iq = q.index, ic = c.index;
    return push(std::move(out), {iq, ic}, [iq, ic](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        const Matrix& qv = t.val(iq);
        const Matrix& cv = t.val(ic);
        Matrix& gq = gbuf(g, iq, qv);
        Matrix& gc = gbuf(g, ic, cv);
        for (size_t i = 0; i < qv.rows(); ++i)
            for (size_t j = 0; j < cv.rows(); ++j) {
                double w = 2.0 * go(i, j);
                if (w == 0.0) continue;
                for (size_t k = 0; k < qv.cols(); ++k) {
                    double diff = qv(i, k) - cv(j, k);
                    gq(i, k) += w * diff;
                    gc(j, k) -= w * diff;
                }
            }
    });
}

Var Tape::cosine_sim(Var q, Var c) {
    check(q); check(c);
    const Matrix& qv = val(q.index);
    const Matrix& cv = val(c.index);
    if (qv.cols() != cv.cols())
        raise(ErrorCode::dimension, "cosine_sim: dims " + shape_str(qv) + " vs " + shape_str(cv));
    constexpr double kTiny = 1e-30;
    auto row_norm = [](const Matrix& m, size_t i) {
        double s = 0.0;
        for (size_t k = 0; k < m.cols(); ++k) s += m(i, k) * m(i, k);
        return std::sqrt(s);
    };
    Matrix out(qv.rows(), cv.rows());
    for (size_t i = 0; i < qv.rows(); ++i) {
        double nq = row_norm(qv, i);
        for (size_t j = 0; j < cv.rows(); ++j) {
            double nc = row_norm(cv, j);
            if (nq * nc < kTiny) continue;  // zero vectors score 0
            double dot = 0.0;
            for (size_t k = 0; k < qv.cols(); ++k) dot += qv(i, k) * cv(j, k);
            out(i, j) = dot / (nq * nc);
        }
    }
    int iq = q.index, ic = c.index;
    return push(std::move(out), {iq, ic}, [iq, ic](Tape& t, std::vector<Matrix>& g, int self) {
        const Matrix& go = g[static_cast<size_t>(self)];
        const Matrix& sv = t.val(self);
        const Matrix& qv = t.val(iq);
        const Matrix& cv = t.val(ic);
        Matrix& gq = gbuf(g, iq, qv);
        Matrix& gc = gbuf(g, ic, cv);
        auto row_norm = [](const Matrix& m, size_t i) {
            double s = 0.0;
            for (size_t k = 0; k < m.cols(); ++k) s += m(i, k) * m(i, k);
            return std::sqrt(s);
        };
        for (size_t i = 0; i < qv.rows(); ++i) {
            double nq = row_norm(qv, i);
            for (size_t j = 0; j < cv.rows(); ++j) {
                double w = go(i, j);
                if (w == 0.0) continue;
                double nc = row_norm(cv, j);
                if (nq * nc < 1e-30) continue;
                double s = sv(i, j);
                for (size_t k = 0; k < qv.cols(); ++k) {
                    gq(i, k) += w * (cv(j, k) / (nq * nc) - s * qv(i, k) / (nq * nq));
                    gc(j, k) += w * (qv(i, k) / (nq * nc) - s * cv(j, k) / (nc * nc));
                }
            }
        }
    });
}

Var Tape::nll_mean(Var probs, const std::vector<int>& labels) {
    check(probs);
    const Matrix& pv = val(probs.index);
    if (labels.size() != pv.rows())
        raise(ErrorCode::dimension, "nll_mean: " + std::to_string(labels.size()) +
                                        " labels for " + std::to_string(pv.rows()) + " rows");
    for (int y : labels)
        if (y < 0 || y >= static_cast<int>(pv.cols()))
            raise(ErrorCode::contract, "nll_mean: label " + std::to_string(y) + " outside [0, " +
                                           std::to_string(pv.cols()) + ")");
    for (size_t i = 0; i < pv.rows(); ++i) {
        double s = 0.0;
        for (size_t j = 0; j < pv.cols(); ++j) s += pv(i, j);
        if (std::abs(s - 1.0) > 1e-6)
            raise(ErrorCode::contract,
                  "nll_mean: row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
    double total = 0.0;
    for (size_t i = 0; i < pv.rows(); ++i) {
        double p = pv(i, static_cast<size_t>(labels[i]));
        if (p < kProbClamp) {
            p = kProbClamp;
            ++clamp_warnings_;
        }
        total -= std::log(p);
    }
    total /= static_cast<double>(pv.rows());
    int ip = probs.index;
    return push(Matrix::filled(1, 1, total), {ip},
                [ip, labels](Tape& t, std::vector<Matrix>& g, int self) {
        double go = g[static_cast<size_t>(self)](0, 0);
        const Matrix& pv = t.val(ip);
        Matrix& gp = gbuf(g, ip, pv);
        double r = static_cast<double>(pv.rows());
        for (size_t i = 0; i < pv.rows(); ++i) {
            double p = pv(i, static_cast<size_t>(labels[i]));
            if (p >= kProbClamp)  // clamped entries have zero slope
                gp(i, static_cast<size_t>(labels[i])) -= go / (r * p);
        }
    });
}

} // namespace fsl
