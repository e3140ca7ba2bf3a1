#include "log2cmd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace log2cmd {

namespace {

std::int64_t numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dim");
        n *= d;
    }
    return n;
}

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), data(static_cast<std::size_t>(numel(shape)), fill) {}

Tensor Tensor::from(std::vector<int> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    if (numel(t.shape) != static_cast<std::int64_t>(d.size()))
        throw std::invalid_argument("Tensor::from: data length != shape product");
    t.data = std::move(d);
    return t;
}

bool Tensor::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// kernels

// Register-blocked: a 4-row x 16-column accumulator tile walks the full k
// extent before touching memory, so the inner loop is pure FMA on the tile.
// Remainder rows fall back to the plain saxpy order.
void mm_nn_acc(double* c, const double* a, const double* b, int m, int k, int n) {
    constexpr int MR = 4, NR = 16;
    int i = 0;
    for (; i + MR <= m; i += MR) {
        const double* a0 = a + static_cast<std::size_t>(i + 0) * k;
        const double* a1 = a + static_cast<std::size_t>(i + 1) * k;
        const double* a2 = a + static_cast<std::size_t>(i + 2) * k;
        const double* a3 = a + static_cast<std::size_t>(i + 3) * k;
        int j = 0;
        for (; j + NR <= n; j += NR) {
            double acc0[NR] = {0}, acc1[NR] = {0}, acc2[NR] = {0}, acc3[NR] = {0};
            for (int p = 0; p < k; ++p) {
                const double* bp = b + static_cast<std::size_t>(p) * n + j;
                const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
                for (int u = 0; u < NR; ++u) {
                    const double bu = bp[u];
                    acc0[u] += v0 * bu;
                    acc1[u] += v1 * bu;
                    acc2[u] += v2 * bu;
                    acc3[u] += v3 * bu;
                }
            }
            double* c0 = c + static_cast<std::size_t>(i + 0) * n + j;
            double* c1 = c + static_cast<std::size_t>(i + 1) * n + j;
            double* c2 = c + static_cast<std::size_t>(i + 2) * n + j;
            double* c3 = c + static_cast<std::size_t>(i + 3) * n + j;
            for (int u = 0; u < NR; ++u) {
                c0[u] += acc0[u];
                c1[u] += acc1[u];
                c2[u] += acc2[u];
                c3[u] += acc3[u];
            }
        }
        for (; j < n; ++j) {
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (int p = 0; p < k; ++p) {
                const double bv = b[static_cast<std::size_t>(p) * n + j];
                s0 += a0[p] * bv;
                s1 += a1[p] * bv;
                s2 += a2[p] * bv;
                s3 += a3[p] * bv;
            }
            c[static_cast<std::size_t>(i + 0) * n + j] += s0;
            c[static_cast<std::size_t>(i + 1) * n + j] += s1;
            c[static_cast<std::size_t>(i + 2) * n + j] += s2;
            c[static_cast<std::size_t>(i + 3) * n + j] += s3;
        }
    }
    for (; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void mm_tn_acc(double* c, const double* a, const double* b, int m, int k, int n) {
    constexpr int MR = 4, NR = 16;
    int i = 0;
    for (; i + MR <= m; i += MR) {
        int j = 0;
        for (; j + NR <= n; j += NR) {
            double acc0[NR] = {0}, acc1[NR] = {0}, acc2[NR] = {0}, acc3[NR] = {0};
            for (int p = 0; p < k; ++p) {
                const double* ap = a + static_cast<std::size_t>(p) * m + i;
                const double* bp = b + static_cast<std::size_t>(p) * n + j;
                const double v0 = ap[0], v1 = ap[1], v2 = ap[2], v3 = ap[3];
                for (int u = 0; u < NR; ++u) {
                    const double bu = bp[u];
                    acc0[u] += v0 * bu;
                    acc1[u] += v1 * bu;
                    acc2[u] += v2 * bu;
                    acc3[u] += v3 * bu;
                }
            }
            double* c0 = c + static_cast<std::size_t>(i + 0) * n + j;
            double* c1 = c + static_cast<std::size_t>(i + 1) * n + j;
            double* c2 = c + static_cast<std::size_t>(i + 2) * n + j;
            double* c3 = c + static_cast<std::size_t>(i + 3) * n + j;
            for (int u = 0; u < NR; ++u) {
                c0[u] += acc0[u];
                c1[u] += acc1[u];
                c2[u] += acc2[u];
                c3[u] += acc3[u];
            }
        }
        for (; j < n; ++j) {
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (int p = 0; p < k; ++p) {
                const double bv = b[static_cast<std::size_t>(p) * n + j];
                const double* ap = a + static_cast<std::size_t>(p) * m + i;
                s0 += ap[0] * bv;
                s1 += ap[1] * bv;
                s2 += ap[2] * bv;
                s3 += ap[3] * bv;
            }
            c[static_cast<std::size_t>(i + 0) * n + j] += s0;
            c[static_cast<std::size_t>(i + 1) * n + j] += s1;
            c[static_cast<std::size_t>(i + 2) * n + j] += s2;
            c[static_cast<std::size_t>(i + 3) * n + j] += s3;
        }
    }
    for (; i < m; ++i) {
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::size_t>(p) * m + i];
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void mm_nt_acc(double* c, const double* a, const double* b, int m, int k, int n) {
    constexpr int NR = 4;  // four rows of b share each sweep of a's row
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        double* ci = c + static_cast<std::size_t>(i) * n;
        int j = 0;
        for (; j + NR <= n; j += NR) {
            const double* b0 = b + static_cast<std::size_t>(j + 0) * k;
            const double* b1 = b + static_cast<std::size_t>(j + 1) * k;
            const double* b2 = b + static_cast<std::size_t>(j + 2) * k;
            const double* b3 = b + static_cast<std::size_t>(j + 3) * k;
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (int p = 0; p < k; ++p) {
                const double av = ai[p];
                s0 += av * b0[p];
                s1 += av * b1[p];
                s2 += av * b2[p];
                s3 += av * b3[p];
            }
            ci[j + 0] += s0;
            ci[j + 1] += s1;
            ci[j + 2] += s2;
            ci[j + 3] += s3;
        }
        for (; j < n; ++j) {
            const double* bj = b + static_cast<std::size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

void transpose_into(Tensor& dst, const Tensor& src) {
    require(src.rank() == 2, "transpose: rank-2 only");
    const int r = src.rows(), c = src.cols();
    dst.shape = {c, r};
    dst.data.resize(static_cast<std::size_t>(r) * c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) dst.data[static_cast<std::size_t>(j) * r + i] = src.data[static_cast<std::size_t>(i) * c + j];
}

void softmax_inplace(double* v, int n) {
    double mx = v[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        v[i] = std::exp(v[i] - mx);
        z += v[i];
    }
    const double inv = 1.0 / z;
    for (int i = 0; i < n; ++i) v[i] *= inv;
}

// ---------------------------------------------------------------------------

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::zeros(value.shape);
    adam_m = Tensor::zeros(value.shape);
    adam_v = Tensor::zeros(value.shape);
}

void Parameter::zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }

const Tensor& Parameter::transposed() const {
    if (tversion_ != version) {
        transpose_into(tcache_, value);
        tversion_ = version;
    }
    return tcache_;
}

void init_uniform(Parameter& p, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& x : p.value.data) x = u(rng);
    ++p.version;
}

void Adam::step(std::span<Parameter* const> params) {
    double sq = 0.0;
    for (const Parameter* p : params)
        for (double g : p->grad.data) sq += g * g;
    const double norm = std::sqrt(sq);
    double scale = 1.0;
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
        double* v = p->value.data.data();
        double* g = p->grad.data.data();
        double* m1 = p->adam_m.data.data();
        double* m2 = p->adam_v.data.data();
        const std::size_t n = p->value.data.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g[i] * scale;
            m1[i] = cfg_.beta1 * m1[i] + (1.0 - cfg_.beta1) * gi;
            m2[i] = cfg_.beta2 * m2[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mh = m1[i] / bc1;
            const double vh = m2[i] / bc2;
            v[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
        p->zero_grad();
        ++p->version;
    }
}

// ---------------------------------------------------------------------------
// tape

Tape::Var Tape::push(Tensor val, std::function<void(Tape&)> back, Parameter* p) {
    Node n;
    n.val = std::move(val);
    n.back = std::move(back);
    n.param = p;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

Tape::Var Tape::leaf(Parameter& p) {
    Tensor v = p.value;  // copy so perturbations during the tape's life don't alias
    return push(std::move(v), {}, &p);
}

Tape::Var Tape::constant(Tensor t) { return push(std::move(t)); }

Tensor& Tape::grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v)];
    if (!n.grad_ready) {
        n.grad = Tensor::zeros(n.val.shape);
        n.grad_ready = true;
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    require(value(loss).size() == 1, "backward: loss must be scalar");
    grad(loss).data[0] = 1.0;
    for (int i = loss; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        // closures run even if this node's grad is still unset: a fused op's
        // closure hangs off its last output, which may itself be unused
        if (n.back) n.back(*this);
        if (n.param && n.grad_ready) {
            double* pg = n.param->grad.data.data();
            const double* g = n.grad.data.data();
            for (std::size_t j = 0; j < n.grad.data.size(); ++j) pg[j] += g[j];
        }
    }
}

Tape::Var Tape::matmul(Var x, Var w) {
    const Tensor& a = value(x);
    const Tensor& b = value(w);
    require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(), "matmul: shape mismatch");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    mm_nn_acc(out.data.data(), a.data.data(), b.data.data(), m, k, n);
    Var y = push(std::move(out));
    nodes_.back().back = [x, w, y, m, k, n](Tape& t) {
        const Tensor& dy = t.grad(y);
        const Tensor& a = t.value(x);
        const Tensor& b = t.value(w);
        Node& wnode = t.nodes_[static_cast<std::size_t>(w)];
        // dx += dy * b^T
        if (wnode.param && b.rank() == 2) {
            mm_nn_acc(t.grad(x).data.data(), dy.data.data(), wnode.param->transposed().data.data(), m, n, k);
        } else {
            mm_nt_acc(t.grad(x).data.data(), dy.data.data(), b.data.data(), m, n, k);
        }
        // dw += a^T * dy
        mm_tn_acc(t.grad(w).data.data(), a.data.data(), dy.data.data(), k, m, n);
    };
    return y;
}

Tape::Var Tape::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "add: shape mismatch");
    Tensor out = ta;
    const double* pb = tb.data.data();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += pb[i];
    Var y = push(std::move(out));
    nodes_.back().back = [a, b, y](Tape& t) {
        const Tensor& dy = t.grad(y);
        Tensor& da = t.grad(a);
        Tensor& db = t.grad(b);
        for (std::size_t i = 0; i < dy.data.size(); ++i) {
            da.data[i] += dy.data[i];
            db.data[i] += dy.data[i];
        }
    };
    return y;
}

Tape::Var Tape::add_row_bias(Var x, Var b) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(b);
    require(tx.rank() == 2 && tb.size() == tx.cols(), "add_row_bias: shape mismatch");
    Tensor out = tx;
    const int m = tx.rows(), n = tx.cols();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data[static_cast<std::size_t>(i) * n + j] += tb.data[static_cast<std::size_t>(j)];
    Var y = push(std::move(out));
    nodes_.back().back = [x, b, y, m, n](Tape& t) {
        const Tensor& dy = t.grad(y);
        Tensor& dx = t.grad(x);
        Tensor& db = t.grad(b);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const double g = dy.data[static_cast<std::size_t>(i) * n + j];
                dx.data[static_cast<std::size_t>(i) * n + j] += g;
                db.data[static_cast<std::size_t>(j)] += g;
            }
    };
    return y;
}

Tape::Var Tape::mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "mul: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    Var y = push(std::move(out));
    nodes_.back().back = [a, b, y](Tape& t) {
        const Tensor& dy = t.grad(y);
        const Tensor& va = t.value(a);
        const Tensor& vb = t.value(b);
        Tensor& da = t.grad(a);
        Tensor& db = t.grad(b);
        for (std::size_t i = 0; i < dy.data.size(); ++i) {
            da.data[i] += dy.data[i] * vb.data[i];
            db.data[i] += dy.data[i] * va.data[i];
        }
    };
    return y;
}

Tape::Var Tape::scale(Var x, double k) {
    Tensor out = value(x);
    for (double& v : out.data) v *= k;
    Var y = push(std::move(out));
    nodes_.back().back = [x, y, k](Tape& t) {
        const Tensor& dy = t.grad(y);
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += k * dy.data[i];
    };
    return y;
}

Tape::Var Tape::concat_cols(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.rank() == 2 && tb.rank() == 2 && ta.rows() == tb.rows(), "concat_cols: shape mismatch");
    const int m = ta.rows(), na = ta.cols(), nb = tb.cols();
    Tensor out({m, na + nb});
    for (int i = 0; i < m; ++i) {
        std::memcpy(out.data.data() + static_cast<std::size_t>(i) * (na + nb), ta.data.data() + static_cast<std::size_t>(i) * na,
                    sizeof(double) * static_cast<std::size_t>(na));
        std::memcpy(out.data.data() + static_cast<std::size_t>(i) * (na + nb) + na,
                    tb.data.data() + static_cast<std::size_t>(i) * nb, sizeof(double) * static_cast<std::size_t>(nb));
    }
    Var y = push(std::move(out));
    nodes_.back().back = [a, b, y, m, na, nb](Tape& t) {
        const Tensor& dy = t.grad(y);
        Tensor& da = t.grad(a);
        Tensor& db = t.grad(b);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < na; ++j) da.data[static_cast<std::size_t>(i) * na + j] += dy.data[static_cast<std::size_t>(i) * (na + nb) + j];
            for (int j = 0; j < nb; ++j) db.data[static_cast<std::size_t>(i) * nb + j] += dy.data[static_cast<std::size_t>(i) * (na + nb) + na + j];
        }
    };
    return y;
}

Tape::Var Tape::tanh_op(Var x) {
    Tensor out = value(x);
    for (double& v : out.data) v = std::tanh(v);
    Var y = push(std::move(out));
    nodes_.back().back = [x, y](Tape& t) {
        const Tensor& dy = t.grad(y);
        const Tensor& vy = t.value(y);
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i] * (1.0 - vy.data[i] * vy.data[i]);
    };
    return y;
}

Tape::Var Tape::sigmoid(Var x) {
    Tensor out = value(x);
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    Var y = push(std::move(out));
    nodes_.back().back = [x, y](Tape& t) {
        const Tensor& dy = t.grad(y);
        const Tensor& vy = t.value(y);
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i] * vy.data[i] * (1.0 - vy.data[i]);
    };
    return y;
}

Tape::Var Tape::sum(Var x) {
    double s = std::accumulate(value(x).data.begin(), value(x).data.end(), 0.0);
    Var y = push(Tensor::from({1}, {s}));
    nodes_.back().back = [x, y](Tape& t) {
        const double g = t.grad(y).data[0];
        Tensor& dx = t.grad(x);
        for (double& v : dx.data) v += g;
    };
    return y;
}

Tape::Var Tape::add_scalars(const std::vector<Var>& xs) {
    require(!xs.empty(), "add_scalars: empty");
    double s = 0.0;
    for (Var v : xs) s += scalar(v);
    Var y = push(Tensor::from({1}, {s}));
    std::vector<Var> copy = xs;
    nodes_.back().back = [copy, y](Tape& t) {
        const double g = t.grad(y).data[0];
        for (Var v : copy) t.grad(v).data[0] += g;
    };
    return y;
}

Tape::Var Tape::rows_lookup(Var table, std::vector<int> ids) {
    const Tensor& tab = value(table);
    require(tab.rank() == 2, "rows_lookup: table must be 2-d");
    const int d = tab.cols();
    const int n = static_cast<int>(ids.size());
    Tensor out({n, d});
    for (int i = 0; i < n; ++i) {
        const int id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= tab.rows()) throw std::out_of_range("rows_lookup: id out of range");
        std::memcpy(out.data.data() + static_cast<std::size_t>(i) * d, tab.data.data() + static_cast<std::size_t>(id) * d,
                    sizeof(double) * static_cast<std::size_t>(d));
    }
    Var y = push(std::move(out));
    nodes_.back().back = [table, y, d, ids = std::move(ids)](Tape& t) {
        const Tensor& dy = t.grad(y);
        Tensor& dt = t.grad(table);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double* row = dt.data.data() + static_cast<std::size_t>(ids[i]) * d;
            const double* g = dy.data.data() + i * d;
            for (int j = 0; j < d; ++j) row[j] += g[j];
        }
    };
    return y;
}

Tape::Var Tape::dropout(Var x, double rate, Rng& rng, bool training) {
    if (!training || rate <= 0.0) return x;
    require(rate < 1.0, "dropout: rate must be < 1");
    const Tensor& tx = value(x);
    Tensor mask(tx.shape);
    std::bernoulli_distribution keep(1.0 - rate);
    const double s = 1.0 / (1.0 - rate);
    for (double& m : mask.data) m = keep(rng) ? s : 0.0;
    Tensor out = tx;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
    Var y = push(std::move(out));
    nodes_.back().back = [x, y, mask = std::move(mask)](Tape& t) {
        const Tensor& dy = t.grad(y);
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i] * mask.data[i];
    };
    return y;
}

Tape::LstmVars Tape::lstm_step(Var x, Var h_prev, Var c_prev, Var wx, Var wh, Var b,
                               const std::vector<double>* row_mask) {
    const Tensor& tx = value(x);
    const Tensor& th = value(h_prev);
    const Tensor& tc = value(c_prev);
    const Tensor& twx = value(wx);
    const Tensor& twh = value(wh);
    const Tensor& tb = value(b);
    const int B = tx.rows();
    const int H = th.cols();
    require(twx.rows() == tx.cols() && twx.cols() == 4 * H, "lstm_step: wx shape");
    require(twh.rows() == H && twh.cols() == 4 * H, "lstm_step: wh shape");
    require(tb.size() == 4 * H && tc.rows() == B && tc.cols() == H, "lstm_step: shapes");
    require(!row_mask || static_cast<int>(row_mask->size()) == B, "lstm_step: mask length");

    // G = x*Wx + h*Wh + b, gate blocks [i f g o]
    Tensor act({B, 4 * H});
    for (int i = 0; i < B; ++i)
        std::memcpy(act.data.data() + static_cast<std::size_t>(i) * 4 * H, tb.data.data(), sizeof(double) * 4 * static_cast<std::size_t>(H));
    mm_nn_acc(act.data.data(), tx.data.data(), twx.data.data(), B, tx.cols(), 4 * H);
    mm_nn_acc(act.data.data(), th.data.data(), twh.data.data(), B, H, 4 * H);

    Tensor h_out({B, H}), c_out({B, H}), tanh_c({B, H});
    for (int r = 0; r < B; ++r) {
        double* g = act.data.data() + static_cast<std::size_t>(r) * 4 * H;
        const bool live = !row_mask || (*row_mask)[static_cast<std::size_t>(r)] != 0.0;
        if (!live) {
            std::memcpy(h_out.data.data() + static_cast<std::size_t>(r) * H, th.data.data() + static_cast<std::size_t>(r) * H,
                        sizeof(double) * static_cast<std::size_t>(H));
            std::memcpy(c_out.data.data() + static_cast<std::size_t>(r) * H, tc.data.data() + static_cast<std::size_t>(r) * H,
                        sizeof(double) * static_cast<std::size_t>(H));
            continue;
        }
        for (int j = 0; j < H; ++j) {
            const double gi = 1.0 / (1.0 + std::exp(-g[j]));
            const double gf = 1.0 / (1.0 + std::exp(-g[H + j]));
            const double gg = std::tanh(g[2 * H + j]);
            const double go = 1.0 / (1.0 + std::exp(-g[3 * H + j]));
            g[j] = gi;
            g[H + j] = gf;
            g[2 * H + j] = gg;
            g[3 * H + j] = go;
            const double c = gf * tc.data[static_cast<std::size_t>(r) * H + j] + gi * gg;
            const double tch = std::tanh(c);
            c_out.data[static_cast<std::size_t>(r) * H + j] = c;
            tanh_c.data[static_cast<std::size_t>(r) * H + j] = tch;
            h_out.data[static_cast<std::size_t>(r) * H + j] = go * tch;
        }
    }

    Var hv = push(std::move(h_out));
    Var cv = push(std::move(c_out));
    std::vector<double> mask_copy = row_mask ? *row_mask : std::vector<double>();
    nodes_.back().back = [x, h_prev, c_prev, wx, wh, b, hv, cv, B, H, act = std::move(act),
                          tanh_c = std::move(tanh_c), mask = std::move(mask_copy)](Tape& t) {
        const Tensor& dh = t.grad(hv);
        const Tensor& dc_out = t.grad(cv);
        const Tensor& tx = t.value(x);
        const Tensor& th = t.value(h_prev);
        const Tensor& tc = t.value(c_prev);
        Tensor dG({B, 4 * H});
        Tensor& dh_prev = t.grad(h_prev);
        Tensor& dc_prev = t.grad(c_prev);
        for (int r = 0; r < B; ++r) {
            const bool live = mask.empty() || mask[static_cast<std::size_t>(r)] != 0.0;
            const std::size_t ro = static_cast<std::size_t>(r) * H;
            if (!live) {
                for (int j = 0; j < H; ++j) {
                    dh_prev.data[ro + j] += dh.data[ro + j];
                    dc_prev.data[ro + j] += dc_out.data[ro + j];
                }
                continue;
            }
            const double* g = act.data.data() + static_cast<std::size_t>(r) * 4 * H;
            double* dg = dG.data.data() + static_cast<std::size_t>(r) * 4 * H;
            for (int j = 0; j < H; ++j) {
                const double gi = g[j], gf = g[H + j], gg = g[2 * H + j], go = g[3 * H + j];
                const double tch = tanh_c.data[ro + j];
                const double dhj = dh.data[ro + j];
                const double dc = dc_out.data[ro + j] + dhj * go * (1.0 - tch * tch);
                const double d_o = dhj * tch;
                const double d_f = dc * tc.data[ro + j];
                const double d_i = dc * gg;
                const double d_g = dc * gi;
                dc_prev.data[ro + j] += dc * gf;
                dg[j] = d_i * gi * (1.0 - gi);
                dg[H + j] = d_f * gf * (1.0 - gf);
                dg[2 * H + j] = d_g * (1.0 - gg * gg);
                dg[3 * H + j] = d_o * go * (1.0 - go);
            }
        }
        // dX += dG * Wx^T ; dH += dG * Wh^T ; dWx += X^T dG ; dWh += H^T dG ; db += colsum dG
        Node& wxn = t.nodes_[static_cast<std::size_t>(wx)];
        Node& whn = t.nodes_[static_cast<std::size_t>(wh)];
        const int in_dim = tx.cols();
        if (wxn.param)
            mm_nn_acc(t.grad(x).data.data(), dG.data.data(), wxn.param->transposed().data.data(), B, 4 * H, in_dim);
        else
            mm_nt_acc(t.grad(x).data.data(), dG.data.data(), t.value(wx).data.data(), B, 4 * H, in_dim);
        if (whn.param)
            mm_nn_acc(dh_prev.data.data(), dG.data.data(), whn.param->transposed().data.data(), B, 4 * H, H);
        else
            mm_nt_acc(dh_prev.data.data(), dG.data.data(), t.value(wh).data.data(), B, 4 * H, H);
        mm_tn_acc(t.grad(wx).data.data(), tx.data.data(), dG.data.data(), in_dim, B, 4 * H);
        mm_tn_acc(t.grad(wh).data.data(), th.data.data(), dG.data.data(), H, B, 4 * H);
        Tensor& db = t.grad(b);
        for (int r = 0; r < B; ++r)
            for (int j = 0; j < 4 * H; ++j) db.data[static_cast<std::size_t>(j)] += dG.data[static_cast<std::size_t>(r) * 4 * H + j];
    };
    return {hv, cv};
}

Tape::Var Tape::stack_steps(const std::vector<Var>& steps) {
    require(!steps.empty(), "stack_steps: empty");
    const Tensor& first = value(steps[0]);
    const int B = first.rows(), H = first.cols();
    const int S = static_cast<int>(steps.size());
    Tensor out({B, S, H});
    for (int s = 0; s < S; ++s) {
        const Tensor& ts = value(steps[static_cast<std::size_t>(s)]);
        require(ts.rows() == B && ts.cols() == H, "stack_steps: step shape mismatch");
        for (int bt = 0; bt < B; ++bt)
            std::memcpy(out.data.data() + (static_cast<std::size_t>(bt) * S + s) * H,
                        ts.data.data() + static_cast<std::size_t>(bt) * H, sizeof(double) * static_cast<std::size_t>(H));
    }
    Var y = push(std::move(out));
    std::vector<Var> copy = steps;
    nodes_.back().back = [copy, y, B, H, S](Tape& t) {
        const Tensor& dy = t.grad(y);
        for (int s = 0; s < S; ++s) {
            Tensor& ds = t.grad(copy[static_cast<std::size_t>(s)]);
            for (int bt = 0; bt < B; ++bt) {
                const double* src = dy.data.data() + (static_cast<std::size_t>(bt) * S + s) * H;
                double* dst = ds.data.data() + static_cast<std::size_t>(bt) * H;
                for (int j = 0; j < H; ++j) dst[j] += src[j];
            }
        }
    };
    return y;
}

Tape::AttnVars Tape::attention(Var dec_h, Var enc, Var wa, const std::vector<double>& mask) {
    const Tensor& th = value(dec_h);
    const Tensor& te = value(enc);
    const Tensor& tw = value(wa);
    require(te.rank() == 3, "attention: enc must be [B,S,H]");
    const int B = te.dim(0), S = te.dim(1), H = te.dim(2);
    require(th.rows() == B && th.cols() == H, "attention: dec_h shape");
    require(tw.rows() == H && tw.cols() == H, "attention: wa shape");
    require(static_cast<int>(mask.size()) == B * S, "attention: mask size");

    // u = dec_h * Wa ; score[b,s] = u[b] . enc[b,s] ; weights = softmax(score)
    Tensor u({B, H});
    mm_nn_acc(u.data.data(), th.data.data(), tw.data.data(), B, H, H);
    Tensor w({B, S});
    Tensor ctx({B, H});
    for (int bt = 0; bt < B; ++bt) {
        double* wrow = w.data.data() + static_cast<std::size_t>(bt) * S;
        const double* ub = u.data.data() + static_cast<std::size_t>(bt) * H;
        int n_valid = 0;
        for (int s = 0; s < S; ++s) {
            if (mask[static_cast<std::size_t>(bt) * S + s] == 0.0) {
                wrow[s] = -1e300;
                continue;
            }
            ++n_valid;
            const double* es = te.data.data() + (static_cast<std::size_t>(bt) * S + s) * H;
            double dot = 0.0;
            for (int j = 0; j < H; ++j) dot += ub[j] * es[j];
            wrow[s] = dot;
        }
        require(n_valid >= 1, "attention: empty source");
        softmax_inplace(wrow, S);
        double* cb = ctx.data.data() + static_cast<std::size_t>(bt) * H;
        for (int s = 0; s < S; ++s) {
            const double ws = wrow[s];
            if (ws == 0.0) continue;
            const double* es = te.data.data() + (static_cast<std::size_t>(bt) * S + s) * H;
            for (int j = 0; j < H; ++j) cb[j] += ws * es[j];
        }
    }

    Var ctxv = push(std::move(ctx));
    Var wv = push(std::move(w));
    nodes_.back().back = [dec_h, enc, wa, ctxv, wv, B, S, H, u = std::move(u)](Tape& t) {
        const Tensor& dctx = t.grad(ctxv);
        const Tensor& dwout = t.grad(wv);
        const Tensor& te = t.value(enc);
        const Tensor& th = t.value(dec_h);
        const Tensor& w = t.value(wv);
        Tensor& denc = t.grad(enc);
        Tensor du({B, H});
        for (int bt = 0; bt < B; ++bt) {
            const double* wrow = w.data.data() + static_cast<std::size_t>(bt) * S;
            const double* dcb = dctx.data.data() + static_cast<std::size_t>(bt) * H;
            const double* ub = u.data.data() + static_cast<std::size_t>(bt) * H;
            // dw[s] = dctx . enc[b,s] (+ direct grad on the weights output)
            std::vector<double> dw(static_cast<std::size_t>(S));
            for (int s = 0; s < S; ++s) {
                const double* es = te.data.data() + (static_cast<std::size_t>(bt) * S + s) * H;
                double dot = 0.0;
                for (int j = 0; j < H; ++j) dot += dcb[j] * es[j];
                dw[static_cast<std::size_t>(s)] = dot + dwout.data[static_cast<std::size_t>(bt) * S + s];
                // denc from the context sum
                double* des = denc.data.data() + (static_cast<std::size_t>(bt) * S + s) * H;
                const double ws = wrow[s];
                if (ws != 0.0)
                    for (int j = 0; j < H; ++j) des[j] += ws * dcb[j];
            }
            // softmax jacobian: dscore[s] = w[s] * (dw[s] - sum_s' w[s'] dw[s'])
            double inner = 0.0;
            for (int s = 0; s < S; ++s) inner += wrow[s] * dw[static_cast<std::size_t>(s)];
            double* dub = du.data.data() + static_cast<std::size_t>(bt) * H;
            for (int s = 0; s < S; ++s) {
                const double ds = wrow[s] * (dw[static_cast<std::size_t>(s)] - inner);
                if (ds == 0.0) continue;
                const double* es = te.data.data() + (static_cast<std::size_t>(bt) * S + s) * H;
                double* des = denc.data.data() + (static_cast<std::size_t>(bt) * S + s) * H;
                for (int j = 0; j < H; ++j) {
                    dub[j] += ds * es[j];
                    des[j] += ds * ub[j];
                }
            }
        }
        // ddec_h += du * Wa^T ; dWa += dec_h^T du
        Node& wan = t.nodes_[static_cast<std::size_t>(wa)];
        if (wan.param)
            mm_nn_acc(t.grad(dec_h).data.data(), du.data.data(), wan.param->transposed().data.data(), B, H, H);
        else
            mm_nt_acc(t.grad(dec_h).data.data(), du.data.data(), t.value(wa).data.data(), B, H, H);
        mm_tn_acc(t.grad(wa).data.data(), th.data.data(), du.data.data(), H, B, H);
    };
    return {ctxv, wv};
}

Tape::Var Tape::softmax_xent(Var logits, const std::vector<int>& targets,
                             const std::vector<double>& mask, double* sum_out, int* n_tokens) {
    const Tensor& tl = value(logits);
    require(tl.rank() == 2, "softmax_xent: logits must be 2-d");
    const int N = tl.rows(), V = tl.cols();
    require(static_cast<int>(targets.size()) == N && static_cast<int>(mask.size()) == N, "softmax_xent: lengths");

    Tensor probs = tl;
    double loss_sum = 0.0;
    int count = 0;
    for (int r = 0; r < N; ++r) {
        double* row = probs.data.data() + static_cast<std::size_t>(r) * V;
        softmax_inplace(row, V);
        if (mask[static_cast<std::size_t>(r)] == 0.0) continue;
        const int tgt = targets[static_cast<std::size_t>(r)];
        if (tgt < 0 || tgt >= V) throw std::out_of_range("softmax_xent: target out of range");
        loss_sum += -std::log(std::max(row[tgt], 1e-12));
        ++count;
    }
    require(count > 0, "softmax_xent: no unmasked rows");
    if (sum_out) *sum_out = loss_sum;
    if (n_tokens) *n_tokens = count;

    Var y = push(Tensor::from({1}, {loss_sum / count}));
    nodes_.back().back = [logits, y, N, V, count, targets, mask, probs = std::move(probs)](Tape& t) {
        const double g = t.grad(y).data[0] / count;
        Tensor& dl = t.grad(logits);
        for (int r = 0; r < N; ++r) {
            if (mask[static_cast<std::size_t>(r)] == 0.0) continue;
            const double* p = probs.data.data() + static_cast<std::size_t>(r) * V;
            double* d = dl.data.data() + static_cast<std::size_t>(r) * V;
            const int tgt = targets[static_cast<std::size_t>(r)];
            for (int j = 0; j < V; ++j) d[j] += g * p[j];
            d[tgt] -= g;
        }
    };
    return y;
}

// ---------------------------------------------------------------------------
// standalone primitives

Tensor embed_lookup(const Tensor& table, int id) {
    if (table.rank() != 2) throw std::invalid_argument("embed_lookup: table must be 2-d");
    if (id < 0 || id >= table.rows()) throw std::out_of_range("embed_lookup: id out of range");
    const int d = table.cols();
    Tensor out({d});
    std::memcpy(out.data.data(), table.data.data() + static_cast<std::size_t>(id) * d, sizeof(double) * static_cast<std::size_t>(d));
    return out;
}

void lstm_cell(const double* x, const double* h_prev, const double* c_prev,
               const Tensor& wx, const Tensor& wh, const Tensor& b, int in_dim,
               int hidden, double* h_out, double* c_out) {
    std::vector<double> g(b.data.begin(), b.data.end());
    mm_nn_acc(g.data(), x, wx.data.data(), 1, in_dim, 4 * hidden);
    mm_nn_acc(g.data(), h_prev, wh.data.data(), 1, hidden, 4 * hidden);
    for (int j = 0; j < hidden; ++j) {
        const double gi = 1.0 / (1.0 + std::exp(-g[static_cast<std::size_t>(j)]));
        const double gf = 1.0 / (1.0 + std::exp(-g[static_cast<std::size_t>(hidden + j)]));
        const double gg = std::tanh(g[static_cast<std::size_t>(2 * hidden + j)]);
        const double go = 1.0 / (1.0 + std::exp(-g[static_cast<std::size_t>(3 * hidden + j)]));
        const double c = gf * c_prev[j] + gi * gg;
        c_out[j] = c;
        h_out[j] = go * std::tanh(c);
    }
}

Tensor softmax(const Tensor& v) {
    if (v.size() < 1) throw std::invalid_argument("softmax: empty input");
    Tensor out = v;
    softmax_inplace(out.data.data(), static_cast<int>(out.size()));
    return out;
}

double cross_entropy(const Tensor& probs, int target) {
    if (target < 0 || target >= probs.size()) throw std::out_of_range("cross_entropy: bad target");
    return -std::log(std::max(probs.data[static_cast<std::size_t>(target)], 1e-12));
}

void attention_context(const double* dec_h, const Tensor& enc_states, const Tensor& wa,
                       double* ctx_out, double* weights_out) {
    if (enc_states.rank() != 2 || enc_states.rows() < 1)
        throw std::invalid_argument("attention_context: need at least one encoder state");
    const int S = enc_states.rows(), H = enc_states.cols();
    std::vector<double> u(static_cast<std::size_t>(H), 0.0);
    mm_nn_acc(u.data(), dec_h, wa.data.data(), 1, H, H);
    for (int s = 0; s < S; ++s) {
        const double* es = enc_states.data.data() + static_cast<std::size_t>(s) * H;
        double dot = 0.0;
        for (int j = 0; j < H; ++j) dot += u[static_cast<std::size_t>(j)] * es[j];
        weights_out[s] = dot;
    }
    softmax_inplace(weights_out, S);
    std::fill(ctx_out, ctx_out + H, 0.0);
    for (int s = 0; s < S; ++s) {
        const double* es = enc_states.data.data() + static_cast<std::size_t>(s) * H;
        for (int j = 0; j < H; ++j) ctx_out[j] += weights_out[s] * es[j];
    }
}

double grad_check(std::span<Parameter* const> params,
                  const std::function<Tape::Var(Tape&)>& build, double eps) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape t;
        Tape::Var loss = build(t);
        t.backward(loss);
    }
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);

    auto eval = [&]() {
        Tape t;
        Tape::Var loss = build(t);
        const double v = t.scalar(loss);
        if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss");
        return v;
    };

    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const double old = p->value.data[i];
            p->value.data[i] = old + eps;
            ++p->version;
            const double fp = eval();
            p->value.data[i] = old - eps;
            ++p->version;
            const double fm = eval();
            p->value.data[i] = old;
            ++p->version;
            const double g_fd = (fp - fm) / (2.0 * eps);
            const double g_ad = analytic[pi].data[i];
            const double err = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
            max_err = std::max(max_err, err);
        }
    }
    for (Parameter* p : params) p->zero_grad();
    return max_err;
}

}  // namespace log2cmd
