#include "dualtower/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

namespace dualtower {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// rows/cols view of a tensor reduced over its last dimension
struct RowView {
    std::size_t rows;
    std::size_t cols;
};

RowView last_dim_view(const Tensor& t) {
    if (t.rank() == 0 || t.size() == 0) {
        throw ContractViolation("empty tensor");
    }
    const std::size_t cols = t.shape().back();
    return {t.size() / cols, cols};
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ContractViolation(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
    }
}

void check_2d(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ContractViolation(std::string(op) + ": expected rank-2 tensor, got rank " +
                                std::to_string(t.rank()));
    }
}

}  // namespace

void Graph::check_open(const char* op) const {
    if (consumed_) {
        throw ContractViolation(std::string(op) + ": graph already consumed by backward()");
    }
}

NodeId Graph::require_node(const Tensor& t, const char* op) const {
    if (!t.node_id.has_value() || *t.node_id >= nodes_.size()) {
        throw ContractViolation(std::string(op) + ": tensor is not part of this graph");
    }
    return *t.node_id;
}

NodeId Graph::push(Tensor value, std::vector<NodeId> parents,
                   std::function<void(Graph&, NodeId)> backprop) {
    const NodeId id = static_cast<NodeId>(nodes_.size());
    bool needs = false;
    for (const NodeId p : parents) {
        needs = needs || nodes_[p].needs_grad;
    }
    Node n;
    n.value = std::move(value);
    n.value.node_id = id;
    n.parents = std::move(parents);
    n.backprop = std::move(backprop);
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return id;
}

Tensor Graph::make(Tensor value, std::vector<NodeId> parents,
                   std::function<void(Graph&, NodeId)> backprop) {
    const NodeId id = push(std::move(value), std::move(parents), std::move(backprop));
    return nodes_[id].value;
}

Tensor Graph::leaf(const Tensor& value, bool requires_grad) {
    check_open("leaf");
    const NodeId id = push(value, {}, nullptr);
    nodes_[id].is_leaf = true;
    nodes_[id].needs_grad = requires_grad;
    nodes_[id].value.requires_grad = requires_grad;
    if (requires_grad) {
        leaves_.push_back(id);
    }
    return nodes_[id].value;
}

Tensor Graph::constant(const Tensor& value) {
    check_open("constant");
    const NodeId id = push(value, {}, nullptr);
    nodes_[id].is_leaf = true;
    return nodes_[id].value;
}

Tensor Graph::constant(Tensor&& value) {
    check_open("constant");
    const NodeId id = push(std::move(value), {}, nullptr);
    nodes_[id].is_leaf = true;
    return nodes_[id].value;
}

void Graph::accumulate(NodeId id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) {
        return;  // nothing below wants this gradient
    }
    if (n.grad.size() == 0) {
        n.grad = g;
        return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

// ---------------------------------------------------------------------------
// elementwise

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    check_open("add");
    check_same_shape(a, b, "add");
    const NodeId ia = require_node(a, "add");
    const NodeId ib = require_node(b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return make(std::move(out), {ia, ib}, [](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        g.accumulate(g.nodes_[self].parents[0], go);
        g.accumulate(g.nodes_[self].parents[1], go);
    });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    check_open("mul");
    check_same_shape(a, b, "mul");
    const NodeId ia = require_node(a, "mul");
    const NodeId ib = require_node(b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    return make(std::move(out), {ia, ib}, [](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const NodeId ia = g.nodes_[self].parents[0];
        const NodeId ib = g.nodes_[self].parents[1];
        const Tensor& va = g.value(ia);
        const Tensor& vb = g.value(ib);
        Tensor da(va.shape()), db(vb.shape());
        for (std::size_t i = 0; i < go.size(); ++i) {
            da[i] = go[i] * vb[i];
            db[i] = go[i] * va[i];
        }
        g.accumulate(ia, da);
        g.accumulate(ib, db);
    });
}

Tensor Graph::scale(const Tensor& a, double c) {
    check_open("scale");
    const NodeId ia = require_node(a, "scale");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * c;
    }
    return make(std::move(out), {ia}, [c](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        Tensor da(go.shape());
        for (std::size_t i = 0; i < go.size(); ++i) {
            da[i] = go[i] * c;
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

Tensor Graph::scale_by(const Tensor& a, const Tensor& scalar) {
    check_open("scale_by");
    if (!scalar.is_scalar()) {
        throw ContractViolation("scale_by: multiplier must be a single-element tensor");
    }
    const NodeId ia = require_node(a, "scale_by");
    const NodeId is = require_node(scalar, "scale_by");
    const double s = scalar[0];
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * s;
    }
    return make(std::move(out), {ia, is}, [](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const NodeId ia = g.nodes_[self].parents[0];
        const NodeId is = g.nodes_[self].parents[1];
        const Tensor& va = g.value(ia);
        const double s = g.value(is)[0];
        Tensor da(va.shape());
        double ds = 0.0;
        for (std::size_t i = 0; i < go.size(); ++i) {
            da[i] = go[i] * s;
            ds += go[i] * va[i];
        }
        g.accumulate(ia, da);
        g.accumulate(is, Tensor::scalar(ds));
    });
}

Tensor Graph::exp(const Tensor& a) {
    check_open("exp");
    const NodeId ia = require_node(a, "exp");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(a[i]);
    }
    return make(std::move(out), {ia}, [](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& y = g.value(self);
        Tensor da(y.shape());
        for (std::size_t i = 0; i < go.size(); ++i) {
            da[i] = go[i] * y[i];
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

Tensor Graph::clamp(const Tensor& a, double lo, double hi) {
    check_open("clamp");
    if (!(lo <= hi)) {
        throw ContractViolation("clamp: lo must not exceed hi");
    }
    const NodeId ia = require_node(a, "clamp");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::min(std::max(a[i], lo), hi);
    }
    // subgradient convention: pass-through on [lo, hi], zero outside
    return make(std::move(out), {ia}, [lo, hi](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& x = g.value(g.nodes_[self].parents[0]);
        Tensor da(x.shape());
        for (std::size_t i = 0; i < go.size(); ++i) {
            da[i] = (x[i] >= lo && x[i] <= hi) ? go[i] : 0.0;
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

Tensor Graph::gelu(const Tensor& a) {
    check_open("gelu");
    const NodeId ia = require_node(a, "gelu");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return make(std::move(out), {ia}, [](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& x = g.value(g.nodes_[self].parents[0]);
        Tensor da(x.shape());
        for (std::size_t i = 0; i < go.size(); ++i) {
            const double v = x[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            da[i] = go[i] * (cdf + v * pdf);
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

Tensor Graph::map_unary(const Tensor& a, double (*f)(double), double (*df)(double)) {
    check_open("map_unary");
    const NodeId ia = require_node(a, "map_unary");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(a[i]);
    }
    return make(std::move(out), {ia}, [df](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& x = g.value(g.nodes_[self].parents[0]);
        Tensor da(x.shape());
        for (std::size_t i = 0; i < go.size(); ++i) {
            da[i] = go[i] * df(x[i]);
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

// ---------------------------------------------------------------------------
// linear algebra

namespace {

// C[m,n] += A[m,k] * B[k,n], ikj order
void gemm_acc(std::span<double> c, std::span<const double> a, std::span<const double> b,
              std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* crow = c.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

Tensor transpose_tensor(const Tensor& a) {
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.at(j, i) = a.at(i, j);
        }
    }
    return out;
}

}  // namespace

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    check_open("matmul");
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw ContractViolation("matmul: inner dimensions differ: " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
    }
    const NodeId ia = require_node(a, "matmul");
    const NodeId ib = require_node(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    gemm_acc(out.data(), a.data(), b.data(), m, k, n);
    return make(std::move(out), {ia, ib}, [m, k, n](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const NodeId ia = g.nodes_[self].parents[0];
        const NodeId ib = g.nodes_[self].parents[1];
        const Tensor& va = g.value(ia);
        const Tensor& vb = g.value(ib);
        if (g.nodes_[ia].needs_grad) {
            // dA = dC * B^T
            Tensor da({m, k});
            const Tensor bt = transpose_tensor(vb);
            gemm_acc(da.data(), go.data(), bt.data(), m, n, k);
            g.accumulate(ia, da);
        }
        if (g.nodes_[ib].needs_grad) {
            // dB = A^T * dC
            Tensor db({k, n});
            const Tensor at = transpose_tensor(va);
            gemm_acc(db.data(), at.data(), go.data(), k, m, n);
            g.accumulate(ib, db);
        }
    });
}

Tensor Graph::transpose(const Tensor& a) {
    check_open("transpose");
    check_2d(a, "transpose");
    const NodeId ia = require_node(a, "transpose");
    return make(transpose_tensor(a), {ia}, [](Graph& g, NodeId self) {
        g.accumulate(g.nodes_[self].parents[0], transpose_tensor(g.grad_of(self)));
    });
}

// ---------------------------------------------------------------------------
// structure

Tensor Graph::reshape(const Tensor& a, std::vector<std::size_t> shape) {
    check_open("reshape");
    if (shape_size(shape) != a.size()) {
        throw ContractViolation("reshape: element count mismatch");
    }
    const NodeId ia = require_node(a, "reshape");
    Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
    return make(std::move(out), {ia}, [](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& x = g.value(g.nodes_[self].parents[0]);
        Tensor da(x.shape(), std::vector<double>(go.data().begin(), go.data().end()));
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

Tensor Graph::concat_rows(const std::vector<Tensor>& parts) {
    check_open("concat_rows");
    if (parts.empty()) {
        throw ContractViolation("concat_rows: no inputs");
    }
    std::vector<NodeId> ids;
    std::size_t rows = 0;
    const std::size_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
    for (const Tensor& p : parts) {
        check_2d(p, "concat_rows");
        if (p.dim(1) != cols) {
            throw ContractViolation("concat_rows: column count mismatch");
        }
        ids.push_back(require_node(p, "concat_rows"));
        rows += p.dim(0);
    }
    Tensor out({rows, cols});
    std::size_t r = 0;
    for (const Tensor& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + r * cols);
        r += p.dim(0);
    }
    return make(std::move(out), std::move(ids), [cols](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        std::size_t r = 0;
        for (const NodeId pid : g.nodes_[self].parents) {
            const std::size_t prows = g.value(pid).dim(0);
            Tensor dp({prows, cols});
            std::copy(go.data().begin() + r * cols,
                      go.data().begin() + (r + prows) * cols, dp.data().begin());
            g.accumulate(pid, dp);
            r += prows;
        }
    });
}

Tensor Graph::concat_cols(const std::vector<Tensor>& parts) {
    check_open("concat_cols");
    if (parts.empty()) {
        throw ContractViolation("concat_cols: no inputs");
    }
    std::vector<NodeId> ids;
    std::size_t cols = 0;
    const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
    for (const Tensor& p : parts) {
        check_2d(p, "concat_cols");
        if (p.dim(0) != rows) {
            throw ContractViolation("concat_cols: row count mismatch");
        }
        ids.push_back(require_node(p, "concat_cols"));
        cols += p.dim(1);
    }
    Tensor out({rows, cols});
    std::size_t c = 0;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.dim(1);
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy(p.data().begin() + i * pc, p.data().begin() + (i + 1) * pc,
                      out.data().begin() + i * cols + c);
        }
        c += pc;
    }
    return make(std::move(out), std::move(ids), [rows, cols](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        std::size_t c = 0;
        for (const NodeId pid : g.nodes_[self].parents) {
            const std::size_t pc = g.value(pid).dim(1);
            Tensor dp({rows, pc});
            for (std::size_t i = 0; i < rows; ++i) {
                std::copy(go.data().begin() + i * cols + c,
                          go.data().begin() + i * cols + c + pc,
                          dp.data().begin() + i * pc);
            }
            g.accumulate(pid, dp);
            c += pc;
        }
    });
}

Tensor Graph::slice_rows(const Tensor& a, std::size_t start, std::size_t len) {
    check_open("slice_rows");
    check_2d(a, "slice_rows");
    if (len == 0 || start + len > a.dim(0)) {
        throw ContractViolation("slice_rows: range out of bounds");
    }
    const NodeId ia = require_node(a, "slice_rows");
    const std::size_t cols = a.dim(1);
    Tensor out({len, cols});
    std::copy(a.data().begin() + start * cols, a.data().begin() + (start + len) * cols,
              out.data().begin());
    return make(std::move(out), {ia}, [start, cols](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& x = g.value(g.nodes_[self].parents[0]);
        Tensor da(x.shape());
        std::copy(go.data().begin(), go.data().end(), da.data().begin() + start * cols);
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

Tensor Graph::slice_cols(const Tensor& a, std::size_t start, std::size_t len) {
    check_open("slice_cols");
    check_2d(a, "slice_cols");
    if (len == 0 || start + len > a.dim(1)) {
        throw ContractViolation("slice_cols: range out of bounds");
    }
    const NodeId ia = require_node(a, "slice_cols");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Tensor out({rows, len});
    for (std::size_t i = 0; i < rows; ++i) {
        std::copy(a.data().begin() + i * cols + start,
                  a.data().begin() + i * cols + start + len,
                  out.data().begin() + i * len);
    }
    return make(std::move(out), {ia}, [start, len, rows, cols](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        Tensor da({rows, cols});
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy(go.data().begin() + i * len, go.data().begin() + (i + 1) * len,
                      da.data().begin() + i * cols + start);
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

Tensor Graph::embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
    check_open("embedding_lookup");
    check_2d(table, "embedding_lookup");
    const NodeId it = require_node(table, "embedding_lookup");
    const std::size_t vocab = table.dim(0), width = table.dim(1);
    for (const std::size_t id : ids) {
        if (id >= vocab) {
            throw ContractViolation("embedding_lookup: id " + std::to_string(id) +
                                    " out of range for table of " + std::to_string(vocab));
        }
    }
    Tensor out({ids.size(), width});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        std::copy(table.data().begin() + ids[t] * width,
                  table.data().begin() + (ids[t] + 1) * width,
                  out.data().begin() + t * width);
    }
    return make(std::move(out), {it}, [ids, width](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& tab = g.value(g.nodes_[self].parents[0]);
        Tensor dt(tab.shape());
        for (std::size_t t = 0; t < ids.size(); ++t) {
            for (std::size_t j = 0; j < width; ++j) {
                dt[ids[t] * width + j] += go[t * width + j];
            }
        }
        g.accumulate(g.nodes_[self].parents[0], dt);
    });
}

// ---------------------------------------------------------------------------
// row broadcasts

Tensor Graph::rowwise_scale(const Tensor& a, const Tensor& v) {
    check_open("rowwise_scale");
    check_2d(a, "rowwise_scale");
    if (v.rank() != 1 || v.dim(0) != a.dim(1)) {
        throw ContractViolation("rowwise_scale: vector length must match columns");
    }
    const NodeId ia = require_node(a, "rowwise_scale");
    const NodeId iv = require_node(v, "rowwise_scale");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out.at(i, j) = a.at(i, j) * v[j];
        }
    }
    return make(std::move(out), {ia, iv}, [rows, cols](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const NodeId ia = g.nodes_[self].parents[0];
        const NodeId iv = g.nodes_[self].parents[1];
        const Tensor& x = g.value(ia);
        const Tensor& vv = g.value(iv);
        Tensor da({rows, cols});
        Tensor dv({cols});
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                da.at(i, j) = go.at(i, j) * vv[j];
                dv[j] += go.at(i, j) * x.at(i, j);
            }
        }
        g.accumulate(ia, da);
        g.accumulate(iv, dv);
    });
}

Tensor Graph::rowwise_shift(const Tensor& a, const Tensor& v) {
    check_open("rowwise_shift");
    check_2d(a, "rowwise_shift");
    if (v.rank() != 1 || v.dim(0) != a.dim(1)) {
        throw ContractViolation("rowwise_shift: vector length must match columns");
    }
    const NodeId ia = require_node(a, "rowwise_shift");
    const NodeId iv = require_node(v, "rowwise_shift");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out.at(i, j) = a.at(i, j) + v[j];
        }
    }
    return make(std::move(out), {ia, iv}, [rows, cols](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        Tensor dv({cols});
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                dv[j] += go.at(i, j);
            }
        }
        g.accumulate(g.nodes_[self].parents[0], go);
        g.accumulate(g.nodes_[self].parents[1], dv);
    });
}

// ---------------------------------------------------------------------------
// reductions and normalization

Tensor Graph::sum_all(const Tensor& a) {
    check_open("sum_all");
    const NodeId ia = require_node(a, "sum_all");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i];
    }
    return make(Tensor::scalar(s), {ia}, [](Graph& g, NodeId self) {
        const double go = g.grad_of(self)[0];
        const Tensor& x = g.value(g.nodes_[self].parents[0]);
        g.accumulate(g.nodes_[self].parents[0], Tensor::full(x.shape(), go));
    });
}

Tensor Graph::mean_all(const Tensor& a) {
    check_open("mean_all");
    const NodeId ia = require_node(a, "mean_all");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i];
    }
    const double inv = 1.0 / static_cast<double>(a.size());
    return make(Tensor::scalar(s * inv), {ia}, [inv](Graph& g, NodeId self) {
        const double go = g.grad_of(self)[0];
        const Tensor& x = g.value(g.nodes_[self].parents[0]);
        g.accumulate(g.nodes_[self].parents[0], Tensor::full(x.shape(), go * inv));
    });
}

Tensor Graph::mean_rows(const Tensor& a) {
    check_open("mean_rows");
    check_2d(a, "mean_rows");
    const NodeId ia = require_node(a, "mean_rows");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Tensor out({cols});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[j] += a.at(i, j);
        }
    }
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t j = 0; j < cols; ++j) {
        out[j] *= inv;
    }
    return make(std::move(out), {ia}, [rows, cols, inv](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        Tensor da({rows, cols});
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                da.at(i, j) = go[j] * inv;
            }
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

namespace {

// log-sum-exp of one row via log1p over the non-max entries; keeps
// near-certain rows accurate down to ~1e-300 instead of flushing to zero
double row_lse(const double* x, std::size_t n, std::size_t* argmax_out) {
    std::size_t am = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (x[i] > x[am]) {
            am = i;
        }
    }
    double rest = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i != am) {
            rest += std::exp(x[i] - x[am]);
        }
    }
    if (argmax_out != nullptr) {
        *argmax_out = am;
    }
    return x[am] + std::log1p(rest);
}

}  // namespace

Tensor Graph::softmax(const Tensor& a) {
    check_open("softmax");
    const NodeId ia = require_node(a, "softmax");
    const RowView v = last_dim_view(a);
    Tensor out(a.shape());
    for (std::size_t r = 0; r < v.rows; ++r) {
        const double* x = a.data().data() + r * v.cols;
        double* y = out.data().data() + r * v.cols;
        double mx = x[0];
        for (std::size_t j = 1; j < v.cols; ++j) {
            mx = std::max(mx, x[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < v.cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < v.cols; ++j) {
            y[j] *= inv;
        }
    }
    return make(std::move(out), {ia}, [v](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& y = g.value(self);
        Tensor da(y.shape());
        for (std::size_t r = 0; r < v.rows; ++r) {
            const double* yr = y.data().data() + r * v.cols;
            const double* gr = go.data().data() + r * v.cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < v.cols; ++j) {
                dot += gr[j] * yr[j];
            }
            double* dr = da.data().data() + r * v.cols;
            for (std::size_t j = 0; j < v.cols; ++j) {
                dr[j] = yr[j] * (gr[j] - dot);
            }
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

Tensor Graph::log_softmax(const Tensor& a) {
    check_open("log_softmax");
    const NodeId ia = require_node(a, "log_softmax");
    const RowView v = last_dim_view(a);
    Tensor out(a.shape());
    for (std::size_t r = 0; r < v.rows; ++r) {
        const double* x = a.data().data() + r * v.cols;
        double* y = out.data().data() + r * v.cols;
        const double lse = row_lse(x, v.cols, nullptr);
        for (std::size_t j = 0; j < v.cols; ++j) {
            y[j] = x[j] - lse;
        }
    }
    return make(std::move(out), {ia}, [v](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& y = g.value(self);
        Tensor da(y.shape());
        for (std::size_t r = 0; r < v.rows; ++r) {
            const double* yr = y.data().data() + r * v.cols;
            const double* gr = go.data().data() + r * v.cols;
            double gsum = 0.0;
            for (std::size_t j = 0; j < v.cols; ++j) {
                gsum += gr[j];
            }
            double* dr = da.data().data() + r * v.cols;
            for (std::size_t j = 0; j < v.cols; ++j) {
                dr[j] = gr[j] - std::exp(yr[j]) * gsum;
            }
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps) {
    check_open("layer_norm");
    const RowView v = last_dim_view(x);
    if (gamma.rank() != 1 || gamma.dim(0) != v.cols || !gamma.same_shape(beta)) {
        throw ContractViolation("layer_norm: gamma/beta must be vectors over the last dim");
    }
    const NodeId ix = require_node(x, "layer_norm");
    const NodeId ig = require_node(gamma, "layer_norm");
    const NodeId ib = require_node(beta, "layer_norm");

    Tensor out(x.shape());
    // cache normalized values and inverse stddev per row for backward
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(v.rows);
    for (std::size_t r = 0; r < v.rows; ++r) {
        const double* xr = x.data().data() + r * v.cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < v.cols; ++j) {
            mean += xr[j];
        }
        mean /= static_cast<double>(v.cols);
        double var = 0.0;
        for (std::size_t j = 0; j < v.cols; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(v.cols);
        const double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        for (std::size_t j = 0; j < v.cols; ++j) {
            const double h = (xr[j] - mean) * istd;
            (*xhat)[r * v.cols + j] = h;
            out[r * v.cols + j] = h * gamma[j] + beta[j];
        }
    }
    return make(std::move(out), {ix, ig, ib}, [v, xhat, inv_std](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const NodeId ix = g.nodes_[self].parents[0];
        const NodeId ig = g.nodes_[self].parents[1];
        const NodeId ib = g.nodes_[self].parents[2];
        const Tensor& gamma = g.value(ig);
        Tensor dg({v.cols}), db({v.cols});
        Tensor dx(g.value(ix).shape());
        const double invc = 1.0 / static_cast<double>(v.cols);
        for (std::size_t r = 0; r < v.rows; ++r) {
            const double* gr = go.data().data() + r * v.cols;
            const double* hr = xhat->data() + r * v.cols;
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t j = 0; j < v.cols; ++j) {
                dg[j] += gr[j] * hr[j];
                db[j] += gr[j];
                const double dh = gr[j] * gamma[j];
                sum_dh += dh;
                sum_dh_h += dh * hr[j];
            }
            double* dxr = dx.data().data() + r * v.cols;
            const double istd = (*inv_std)[r];
            for (std::size_t j = 0; j < v.cols; ++j) {
                const double dh = gr[j] * gamma[j];
                dxr[j] = istd * (dh - invc * sum_dh - hr[j] * invc * sum_dh_h);
            }
        }
        g.accumulate(ix, dx);
        g.accumulate(ig, dg);
        g.accumulate(ib, db);
    });
}

Tensor Graph::l2_normalize(const Tensor& a) {
    check_open("l2_normalize");
    const RowView v = last_dim_view(a);
    const NodeId ia = require_node(a, "l2_normalize");
    constexpr double kGuard = 1e-12;
    Tensor out(a.shape());
    for (std::size_t r = 0; r < v.rows; ++r) {
        const double* x = a.data().data() + r * v.cols;
        double* y = out.data().data() + r * v.cols;
        double s = 0.0;
        for (std::size_t j = 0; j < v.cols; ++j) {
            s += x[j] * x[j];
        }
        const double inv = 1.0 / std::sqrt(s + kGuard);
        for (std::size_t j = 0; j < v.cols; ++j) {
            y[j] = x[j] * inv;
        }
    }
    return make(std::move(out), {ia}, [v](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& x = g.value(g.nodes_[self].parents[0]);
        Tensor da(x.shape());
        for (std::size_t r = 0; r < v.rows; ++r) {
            const double* xr = x.data().data() + r * v.cols;
            const double* gr = go.data().data() + r * v.cols;
            double s = 0.0, dot = 0.0;
            for (std::size_t j = 0; j < v.cols; ++j) {
                s += xr[j] * xr[j];
                dot += gr[j] * xr[j];
            }
            const double n2 = s + 1e-12;
            const double inv = 1.0 / std::sqrt(n2);
            const double inv3 = inv / n2;
            double* dr = da.data().data() + r * v.cols;
            for (std::size_t j = 0; j < v.cols; ++j) {
                dr[j] = gr[j] * inv - xr[j] * dot * inv3;
            }
        }
        g.accumulate(g.nodes_[self].parents[0], da);
    });
}

namespace {

struct BatchNormCache {
    std::vector<double> xhat;
    std::vector<double> inv_std;
    bool used_batch_stats = false;
};

Tensor batch_norm_impl(const Tensor& x, BatchNormState& state, bool training, double eps,
                       BatchNormCache* cache) {
    if (x.rank() != 2) {
        throw ContractViolation("batch_norm: expected [rows, channels] input");
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (state.running_mean.rank() != 1 || state.running_mean.dim(0) != cols ||
        !state.running_mean.same_shape(state.running_var)) {
        throw ContractViolation("batch_norm: channel count mismatch with state");
    }
    Tensor out({rows, cols});
    if (cache != nullptr) {
        cache->xhat.resize(x.size());
        cache->inv_std.resize(cols);
        cache->used_batch_stats = training;
    }
    if (training) {
        for (std::size_t j = 0; j < cols; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                mean += x.at(i, j);
            }
            mean /= static_cast<double>(rows);
            double var = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                const double d = x.at(i, j) - mean;
                var += d * d;
            }
            var /= static_cast<double>(rows);
            const double istd = 1.0 / std::sqrt(var + eps);
            for (std::size_t i = 0; i < rows; ++i) {
                const double h = (x.at(i, j) - mean) * istd;
                out.at(i, j) = h;
                if (cache != nullptr) {
                    cache->xhat[i * cols + j] = h;
                }
            }
            if (cache != nullptr) {
                cache->inv_std[j] = istd;
            }
            if (state.update_stats) {
                // torch convention: biased variance normalizes, unbiased feeds
                // the running estimate
                const double unbiased =
                    rows > 1 ? var * static_cast<double>(rows) / static_cast<double>(rows - 1)
                             : var;
                state.running_mean[j] =
                    (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean;
                state.running_var[j] =
                    (1.0 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
            }
        }
    } else {
        for (std::size_t j = 0; j < cols; ++j) {
            const double istd = 1.0 / std::sqrt(state.running_var[j] + eps);
            const double mean = state.running_mean[j];
            for (std::size_t i = 0; i < rows; ++i) {
                out.at(i, j) = (x.at(i, j) - mean) * istd;
            }
            if (cache != nullptr) {
                cache->inv_std[j] = istd;
            }
        }
    }
    return out;
}

}  // namespace

Tensor batch_norm_forward(const Tensor& x, BatchNormState& state, bool training, double eps) {
    return batch_norm_impl(x, state, training, eps, nullptr);
}

Tensor Graph::batch_norm(const Tensor& x, BatchNormState& state, bool training, double eps) {
    check_open("batch_norm");
    const NodeId ix = require_node(x, "batch_norm");
    auto cache = std::make_shared<BatchNormCache>();
    Tensor out = batch_norm_impl(x, state, training, eps, cache.get());
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    return make(std::move(out), {ix}, [rows, cols, cache](Graph& g, NodeId self) {
        const Tensor& go = g.grad_of(self);
        Tensor dx({rows, cols});
        if (cache->used_batch_stats) {
            const double invr = 1.0 / static_cast<double>(rows);
            for (std::size_t j = 0; j < cols; ++j) {
                double sum_g = 0.0, sum_gh = 0.0;
                for (std::size_t i = 0; i < rows; ++i) {
                    sum_g += go.at(i, j);
                    sum_gh += go.at(i, j) * cache->xhat[i * cols + j];
                }
                const double istd = cache->inv_std[j];
                for (std::size_t i = 0; i < rows; ++i) {
                    dx.at(i, j) = istd * (go.at(i, j) - invr * sum_g -
                                          cache->xhat[i * cols + j] * invr * sum_gh);
                }
            }
        } else {
            for (std::size_t j = 0; j < cols; ++j) {
                const double istd = cache->inv_std[j];
                for (std::size_t i = 0; i < rows; ++i) {
                    dx.at(i, j) = go.at(i, j) * istd;
                }
            }
        }
        g.accumulate(g.nodes_[self].parents[0], dx);
    });
}

// ---------------------------------------------------------------------------

GradientMap Graph::backward(const Tensor& loss) {
    check_open("backward");
    const NodeId root = require_node(loss, "backward");
    if (!loss.is_scalar()) {
        throw ContractViolation("backward: loss must be a scalar, got shape " +
                                shape_to_string(loss.shape()));
    }
    consumed_ = true;
    nodes_[root].grad = Tensor::scalar(1.0);
    for (std::size_t i = root + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backprop && n.needs_grad && n.grad.size() != 0) {
            n.backprop(*this, static_cast<NodeId>(i));
        }
    }
    GradientMap grads;
    grads.reserve(leaves_.size());
    for (const NodeId id : leaves_) {
        if (nodes_[id].grad.size() != 0) {
            grads.emplace(id, std::move(nodes_[id].grad));
        } else {
            // disconnected leaf: zero gradient by contract
            grads.emplace(id, Tensor::zeros(nodes_[id].value.shape()));
        }
    }
    return grads;
}

}  // namespace dualtower
