#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hyperdet/core/error.hpp"
#include "hyperdet/core/tensor.hpp"

namespace hyperdet {

// Persistent trainable (or frozen) tensor. Leaves of every graph reference a
// Parameter; gradients accumulate into `grad` across backward calls until the
// optimizer zeroes them.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;  // lazily allocated on first accumulation
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool train = true)
        : name(std::move(n)), value(std::move(v)), trainable(train) {}

    Tensor& ensure_grad() {
        if (!grad.defined() || !grad.same_shape(value)) grad = Tensor::zeros(value.shape());
        return grad;
    }
};

namespace ad {

// Inference paths disable graph construction entirely.
struct GradMode {
    static bool& enabled() {
        thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev; }
};

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool consumed = false;  // set once backward has run through this node
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // pulls this->grad into parents/params
    Parameter* param = nullptr;

    Tensor& ensure_grad() {
        if (!grad.defined() || !grad.same_shape(value)) grad = Tensor::zeros(value.shape());
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Var constant(Tensor v) {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        n->requires_grad = false;
        return Var(n);
    }

    static Var leaf(Parameter& p) {
        auto n = std::make_shared<Node>();
        n->value = p.value;  // shared buffer, no copy
        n->requires_grad = p.trainable && GradMode::enabled();
        if (n->requires_grad) {
            n->param = &p;
            n->backprop = [](Node& self) { self.param->ensure_grad().add_(self.grad); };
        }
        return Var(n);
    }

    bool defined() const { return n_ != nullptr; }
    const Tensor& value() const { return n_->value; }
    const std::vector<std::size_t>& shape() const { return n_->value.shape(); }
    std::size_t rows() const { return n_->value.rows(); }
    std::size_t cols() const { return n_->value.cols(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    const std::shared_ptr<Node>& node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    for (const auto& v : inputs) rg = rg || v.requires_grad();
    n->requires_grad = rg && GradMode::enabled();
    if (n->requires_grad) {
        n->parents.reserve(inputs.size());
        for (auto& v : inputs) n->parents.push_back(v.node());
        n->backprop = std::move(backprop);
    }
    return Var(n);
}

inline Tensor& pgrad(Node& self, std::size_t i) { return self.parents[i]->ensure_grad(); }

}  // namespace detail

// Runs reverse-mode accumulation from a scalar (or any) root; the root is
// seeded with ones. Iterative topological order, children before parents.
// A graph can be consumed once: gradients of shared nodes are not reset, so a
// second pass would double-count into the parameters.
inline void backward(const Var& root) {
    Node* r = root.node().get();
    if (!r || !r->requires_grad) return;
    require(!r->consumed, errc::shape, "backward: graph already consumed");
    r->ensure_grad().fill(1.0);

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(r, 0);
    seen.insert(r);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // `order` is postorder (parents before dependents); walk it backwards.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        require(!n->consumed, errc::shape,
                "backward: node shared with an already-consumed graph");
        n->consumed = true;
        if (n->backprop && n->grad.defined()) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// ops

inline Var add(const Var& a, const Var& b) {
    require(a.value().same_shape(b.value()), errc::shape, "add: shape mismatch");
    Tensor out = a.value().clone();
    out.add_(b.value());
    return detail::make_op(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) detail::pgrad(self, 0).add_(self.grad);
        if (self.parents[1]->requires_grad) detail::pgrad(self, 1).add_(self.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    require(a.value().same_shape(b.value()), errc::shape, "sub: shape mismatch");
    Tensor out = a.value().clone();
    out.axpy_(-1.0, b.value());
    return detail::make_op(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) detail::pgrad(self, 0).add_(self.grad);
        if (self.parents[1]->requires_grad) detail::pgrad(self, 1).axpy_(-1.0, self.grad);
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value().clone();
    out.scale_(s);
    return detail::make_op(std::move(out), {a}, [s](Node& self) {
        if (self.parents[0]->requires_grad) detail::pgrad(self, 0).axpy_(s, self.grad);
    });
}

// y = x * W^T + b with x:[m x k], W:[n x k], b:[n] (b optional)
inline Var linear(const Var& x, const Var& w, const Var& b = Var()) {
    const std::size_t m = x.rows(), k = x.cols(), n = w.rows();
    require(w.cols() == k, errc::shape, "linear: weight/input mismatch");
    Tensor out({m, n});
    mm_nt_acc(x.value().data(), w.value().data(), out.data(), m, n, k);
    if (b.defined()) {
        require(b.value().size() == n, errc::shape, "linear: bias size mismatch");
        const double* bv = b.value().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
    }
    std::vector<Var> inputs = {x, w};
    if (b.defined()) inputs.push_back(b);
    return detail::make_op(std::move(out), std::move(inputs), [m, n, k](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        const double* g = self.grad.data();
        if (xn.requires_grad)  // dx += dy * W
            mm_nn_acc(g, wn.value.data(), xn.ensure_grad().data(), m, k, n);
        if (wn.requires_grad)  // dW += dy^T * x
            mm_tn_acc(g, xn.value.data(), wn.ensure_grad().data(), n, k, m);
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Tensor& db = detail::pgrad(self, 2);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
        }
    });
}

// a:[m x k] * b:[k x n]
inline Var matmul(const Var& a, const Var& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    require(b.rows() == k, errc::shape, "matmul: inner dims mismatch");
    Tensor out({m, n});
    mm_nn_acc(a.value().data(), b.value().data(), out.data(), m, n, k);
    return detail::make_op(std::move(out), {a, b}, [m, n, k](Node& self) {
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        const double* g = self.grad.data();
        if (an.requires_grad)  // da += dy * b^T
            mm_nt_acc(g, bn.value.data(), an.ensure_grad().data(), m, k, n);
        if (bn.requires_grad)  // db += a^T * dy
            mm_tn_acc(an.value.data(), g, bn.ensure_grad().data(), k, n, m);
    });
}

// a:[m x k] * b:[n x k]^T
inline Var matmul_nt(const Var& a, const Var& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    require(b.cols() == k, errc::shape, "matmul_nt: inner dims mismatch");
    Tensor out({m, n});
    mm_nt_acc(a.value().data(), b.value().data(), out.data(), m, n, k);
    return detail::make_op(std::move(out), {a, b}, [m, n, k](Node& self) {
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        const double* g = self.grad.data();
        if (an.requires_grad)  // da += dy * b
            mm_nn_acc(g, bn.value.data(), an.ensure_grad().data(), m, k, n);
        if (bn.requires_grad)  // db += dy^T * a
            mm_tn_acc(g, an.value.data(), bn.ensure_grad().data(), n, k, m);
    });
}

// one row of a table as [1 x e]
inline Var row(const Var& table, std::size_t r) {
    require(r < table.rows(), errc::shape, "row: index out of range");
    const std::size_t e = table.cols();
    Tensor out({1, e});
    for (std::size_t j = 0; j < e; ++j) out[j] = table.value()(r, j);
    return detail::make_op(std::move(out), {table}, [r, e](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        for (std::size_t j = 0; j < e; ++j) g(r, j) += self.grad[j];
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        require(p.rows() == m, errc::shape, "concat_cols: row mismatch");
        n += p.cols();
    }
    Tensor out({m, n});
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
        off += p.cols();
    }
    return detail::make_op(std::move(out), parts, [m, n](Node& self) {
        std::size_t off = 0;
        for (auto& parent : self.parents) {
            const std::size_t w = parent->value.cols();
            if (parent->requires_grad) {
                Tensor& g = parent->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) g(i, j) += self.grad[i * n + off + j];
            }
            off += w;
        }
    });
}

inline Var slice_cols(const Var& x, std::size_t c0, std::size_t w) {
    const std::size_t m = x.rows(), n = x.cols();
    require(c0 + w <= n, errc::shape, "slice_cols: out of range");
    Tensor out({m, w});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out(i, j) = x.value()(i, c0 + j);
    return detail::make_op(std::move(out), {x}, [m, n, c0, w](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) g(i, c0 + j) += self.grad[i * w + j];
    });
}

inline Var slice_rows(const Var& x, std::size_t r0, std::size_t h) {
    const std::size_t n = x.cols();
    require(r0 + h <= x.rows(), errc::shape, "slice_rows: out of range");
    Tensor out({h, n});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = x.value()(r0 + i, j);
    return detail::make_op(std::move(out), {x}, [r0, h, n](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < n; ++j) g(r0 + i, j) += self.grad[i * n + j];
    });
}

inline Var concat_rows(const Var& a, const Var& b) {
    const std::size_t n = a.cols();
    require(b.cols() == n, errc::shape, "concat_rows: col mismatch");
    const std::size_t ma = a.rows(), mb = b.rows();
    Tensor out({ma + mb, n});
    for (std::size_t i = 0; i < ma * n; ++i) out[i] = a.value()[i];
    for (std::size_t i = 0; i < mb * n; ++i) out[ma * n + i] = b.value()[i];
    return detail::make_op(std::move(out), {a, b}, [ma, mb, n](Node& self) {
        if (self.parents[0]->requires_grad) {
            Tensor& g = detail::pgrad(self, 0);
            for (std::size_t i = 0; i < ma * n; ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = detail::pgrad(self, 1);
            for (std::size_t i = 0; i < mb * n; ++i) g[i] += self.grad[ma * n + i];
        }
    });
}

inline Var reshape(const Var& x, std::vector<std::size_t> shape) {
    Tensor out = x.value().clone().reshaped(std::move(shape));
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

inline Var mean_rows(const Var& x) {
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out({1, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += x.value()(i, j);
    out.scale_(1.0 / double(m));
    return detail::make_op(std::move(out), {x}, [m, n](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        const double inv = 1.0 / double(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g(i, j) += inv * self.grad[j];
    });
}

inline Var softmax_rows(const Var& x) {
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x.value()(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) = std::exp(x.value()(i, j) - mx);
            sum += out(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) out(i, j) /= sum;
    }
    Tensor saved = out;
    return detail::make_op(std::move(out), {x}, [m, n, saved](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * saved(i, j);
            for (std::size_t j = 0; j < n; ++j)
                g(i, j) += saved(i, j) * (self.grad[i * n + j] - dot);
        }
    });
}

// row-wise layer norm with affine params gamma,beta:[n]
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6) {
    const std::size_t m = x.rows(), n = x.cols();
    require(gamma.value().size() == n && beta.value().size() == n, errc::shape,
            "layer_norm: param size mismatch");
    Tensor out({m, n});
    Tensor xhat({m, n});
    Tensor inv_sigma({m});
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += x.value()(i, j);
        mean /= double(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = x.value()(i, j) - mean;
            var += d * d;
        }
        var /= double(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = inv;
        for (std::size_t j = 0; j < n; ++j) {
            xhat(i, j) = (x.value()(i, j) - mean) * inv;
            out(i, j) = xhat(i, j) * gamma.value()[j] + beta.value()[j];
        }
    }
    return detail::make_op(std::move(out), {x, gamma, beta},
                           [m, n, xhat, inv_sigma](Node& self) {
        Node& xn = *self.parents[0];
        Node& gn = *self.parents[1];
        Node& bn = *self.parents[2];
        const double* g = self.grad.data();
        if (gn.requires_grad) {
            Tensor& dg = gn.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dg[j] += g[i * n + j] * xhat(i, j);
        }
        if (bn.requires_grad) {
            Tensor& db = bn.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
        }
        if (xn.requires_grad) {
            Tensor& dx = xn.ensure_grad();
            const double* gv = gn.value.data();
            for (std::size_t i = 0; i < m; ++i) {
                double mean_gh = 0.0, mean_ghx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double gh = g[i * n + j] * gv[j];
                    mean_gh += gh;
                    mean_ghx += gh * xhat(i, j);
                }
                mean_gh /= double(n);
                mean_ghx /= double(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double gh = g[i * n + j] * gv[j];
                    dx(i, j) += inv_sigma[i] * (gh - mean_gh - xhat(i, j) * mean_ghx);
                }
            }
        }
    });
}

inline Var gelu(const Var& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    Tensor out = x.value().clone();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = out[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    Tensor saved = x.value();
    return detail::make_op(std::move(out), {x}, [saved](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = saved[i];
            const double phi = inv_sqrt2pi * std::exp(-0.5 * v * v);
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            g[i] += self.grad[i] * (cdf + v * phi);
        }
    });
}

inline Var tanh_act(const Var& x) {
    Tensor out = x.value().clone();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    Tensor saved = out;
    return detail::make_op(std::move(out), {x}, [saved](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * (1.0 - saved[i] * saved[i]);
    });
}

inline Var sigmoid(const Var& x) {
    Tensor out = x.value().clone();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    Tensor saved = out;
    return detail::make_op(std::move(out), {x}, [saved](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * saved[i] * (1.0 - saved[i]);
    });
}

// Mean binary cross-entropy over logits, numerically stable form:
//   max(z,0) - z*y + log(1 + exp(-|z|))
inline Var bce_with_logits(const Var& logits, const Tensor& labels) {
    const std::size_t m = logits.value().size();
    require(labels.size() == m, errc::shape, "bce_with_logits: label count mismatch");
    for (std::size_t i = 0; i < m; ++i)
        require(labels[i] == 0.0 || labels[i] == 1.0, errc::label,
                "labels must be 0 or 1");
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double z = logits.value()[i];
        const double y = labels[i];
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
    }
    Tensor out = Tensor::scalar(total / double(m));
    Tensor saved = logits.value();
    return detail::make_op(std::move(out), {logits}, [m, saved, labels](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = detail::pgrad(self, 0);
        const double gscale = self.grad[0] / double(m);
        for (std::size_t i = 0; i < m; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-saved[i]));
            g[i] += gscale * (p - labels[i]);
        }
    });
}

}  // namespace ad
}  // namespace hyperdet
