#pragma once

// Reverse-mode autodiff over Tensor-valued nodes. Forward calls build a DAG of
// shared_ptr nodes; backward() walks it once in reverse creation order. The
// walk order is a function of graph structure only, so gradient accumulation
// is deterministic across runs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "itts/tensor.hpp"

namespace itts {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    bool needs_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // pushes this->grad into parents

    Tensor& grad_buf() {
        if (grad.size() != value.size()) grad = Tensor(value.shape());
        return grad;
    }
};

inline Var leaf(Tensor value, bool needs_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->needs_grad = needs_grad;
    return n;
}

inline Var constant(Tensor value) { return leaf(std::move(value), false); }

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents) n->needs_grad = n->needs_grad || p->needs_grad;
    n->parents = std::move(parents);
    if (n->needs_grad) n->backprop = std::move(backprop);
    return n;
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

// ----------------------------- arithmetic ops -----------------------------

inline Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add lhs", "add rhs");
    Tensor y = a->value;
    add_inplace(y, b->value);
    return detail::make_op(std::move(y), {a, b}, [](Node& n) {
        if (n.parents[0]->needs_grad) add_inplace(n.parents[0]->grad_buf(), n.grad);
        if (n.parents[1]->needs_grad) add_inplace(n.parents[1]->grad_buf(), n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "sub lhs", "sub rhs");
    Tensor y = a->value;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b->value[i];
    return detail::make_op(std::move(y), {a, b}, [](Node& n) {
        if (n.parents[0]->needs_grad) add_inplace(n.parents[0]->grad_buf(), n.grad);
        if (n.parents[1]->needs_grad) {
            Tensor& g = n.parents[1]->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mul lhs", "mul rhs");
    Tensor y = a->value;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b->value[i];
    return detail::make_op(std::move(y), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.needs_grad) {
            Tensor& g = pa.grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
        }
        if (pb.needs_grad) {
            Tensor& g = pb.grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
        }
    });
}

inline Var scale(const Var& a, double c) {
    Tensor y = a->value;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c;
    return detail::make_op(std::move(y), {a}, [c](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Tensor& g = n.parents[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * n.grad[i];
    });
}

inline Var matmul(const Var& a, const Var& w) {
    Tensor y = matmul_value(a->value, w->value);
    return detail::make_op(std::move(y), {a, w}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pw = *n.parents[1];
        if (pa.needs_grad) add_inplace(pa.grad_buf(), matmul_nt_value(n.grad, pw.value));
        if (pw.needs_grad) add_inplace(pw.grad_buf(), matmul_tn_value(pa.value, n.grad));
    });
}

/// y = a * b^T where b is stored row-major [N x K].
inline Var matmul_nt(const Var& a, const Var& b) {
    Tensor y = matmul_nt_value(a->value, b->value);
    return detail::make_op(std::move(y), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.needs_grad) add_inplace(pa.grad_buf(), matmul_value(n.grad, pb.value));
        if (pb.needs_grad) add_inplace(pb.grad_buf(), matmul_tn_value(n.grad, pa.value));
    });
}

/// Broadcast-add a [1xN] bias row to every row of a [BxN] matrix.
inline Var add_rowvec(const Var& a, const Var& bias) {
    require_matrix(a->value, "add_rowvec input");
    require_matrix(bias->value, "add_rowvec bias");
    if (bias->value.rows() != 1 || bias->value.cols() != a->value.cols())
        throw ShapeError("bias " + bias->value.shape_str() + " does not broadcast over " + a->value.shape_str());
    Tensor y = a->value;
    const std::size_t B = y.rows(), N = y.cols();
    for (std::size_t i = 0; i < B; ++i) {
        double* yi = y.row(i);
        const double* b = bias->value.row(0);
        for (std::size_t j = 0; j < N; ++j) yi[j] += b[j];
    }
    return detail::make_op(std::move(y), {a, bias}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.needs_grad) add_inplace(pa.grad_buf(), n.grad);
        if (pb.needs_grad) {
            Tensor& g = pb.grad_buf();
            const std::size_t B = n.grad.rows(), N = n.grad.cols();
            for (std::size_t i = 0; i < B; ++i) {
                const double* gi = n.grad.row(i);
                for (std::size_t j = 0; j < N; ++j) g[j] += gi[j];
            }
        }
    });
}

/// Multiply every row i of a [BxN] matrix by scalar m[i] (m is [Bx1]).
inline Var mul_colvec(const Var& a, const Var& m) {
    require_matrix(a->value, "mul_colvec input");
    if (m->value.rows() != a->value.rows() || m->value.cols() != 1)
        throw ShapeError("row scaler " + m->value.shape_str() + " does not broadcast over " + a->value.shape_str());
    Tensor y = a->value;
    const std::size_t B = y.rows(), N = y.cols();
    for (std::size_t i = 0; i < B; ++i) {
        const double mi = m->value[i];
        double* yi = y.row(i);
        for (std::size_t j = 0; j < N; ++j) yi[j] *= mi;
    }
    return detail::make_op(std::move(y), {a, m}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pm = *n.parents[1];
        const std::size_t B = n.grad.rows(), N = n.grad.cols();
        if (pa.needs_grad) {
            Tensor& g = pa.grad_buf();
            for (std::size_t i = 0; i < B; ++i) {
                const double mi = pm.value[i];
                const double* gi = n.grad.row(i);
                double* go = g.row(i);
                for (std::size_t j = 0; j < N; ++j) go[j] += gi[j] * mi;
            }
        }
        if (pm.needs_grad) {
            Tensor& g = pm.grad_buf();
            for (std::size_t i = 0; i < B; ++i) {
                const double* gi = n.grad.row(i);
                const double* ai = pa.value.row(i);
                double acc = 0.0;
                for (std::size_t j = 0; j < N; ++j) acc += gi[j] * ai[j];
                g[i] += acc;
            }
        }
    });
}

// ----------------------------- activations -----------------------------

inline Var sigmoid(const Var& a) {
    Tensor y = a->value;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = detail::stable_sigmoid(y[i]);
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Tensor& g = n.parents[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = n.value[i];
            g[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

inline Var tanh_op(const Var& a) {
    Tensor y = a->value;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Tensor& g = n.parents[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double t = n.value[i];
            g[i] += n.grad[i] * (1.0 - t * t);
        }
    });
}

inline Var relu(const Var& a) {
    Tensor y = a->value;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Tensor& g = n.parents[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (n.parents[0]->value[i] > 0.0) g[i] += n.grad[i];
    });
}

// ----------------------------- structure ops -----------------------------

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
    const std::size_t B = parts[0]->value.rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_matrix(p->value, "concat_cols part");
        if (p->value.rows() != B) throw ShapeError("concat_cols row mismatch");
        total += p->value.cols();
    }
    Tensor y(B, total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t C = p->value.cols();
        for (std::size_t i = 0; i < B; ++i) {
            const double* src = p->value.row(i);
            double* dst = y.row(i) + off;
            for (std::size_t j = 0; j < C; ++j) dst[j] = src[j];
        }
        off += C;
    }
    return detail::make_op(std::move(y), parts, [](Node& n) {
        const std::size_t B = n.grad.rows();
        std::size_t off = 0;
        for (auto& p : n.parents) {
            const std::size_t C = p->value.cols();
            if (p->needs_grad) {
                Tensor& g = p->grad_buf();
                for (std::size_t i = 0; i < B; ++i) {
                    const double* src = n.grad.row(i) + off;
                    double* dst = g.row(i);
                    for (std::size_t j = 0; j < C; ++j) dst[j] += src[j];
                }
            }
            off += C;
        }
    });
}

inline Var slice_cols(const Var& a, std::size_t start, std::size_t len) {
    require_matrix(a->value, "slice_cols input");
    if (start + len > a->value.cols())
        throw ShapeError("slice_cols [" + std::to_string(start) + ", +" + std::to_string(len) + ") out of " +
                         a->value.shape_str());
    const std::size_t B = a->value.rows();
    Tensor y(B, len);
    for (std::size_t i = 0; i < B; ++i) {
        const double* src = a->value.row(i) + start;
        double* dst = y.row(i);
        for (std::size_t j = 0; j < len; ++j) dst[j] = src[j];
    }
    return detail::make_op(std::move(y), {a}, [start, len](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Tensor& g = n.parents[0]->grad_buf();
        const std::size_t B = n.grad.rows();
        for (std::size_t i = 0; i < B; ++i) {
            const double* src = n.grad.row(i);
            double* dst = g.row(i) + start;
            for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
        }
    });
}

/// Row gather from an embedding table; backward scatter-adds.
inline Var gather_rows(const Var& table, const std::vector<int>& ids) {
    require_matrix(table->value, "gather table");
    const std::size_t V = table->value.rows(), E = table->value.cols();
    Tensor y(ids.size(), E);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V)
            throw VocabError("row id " + std::to_string(ids[i]) + " outside table of " + std::to_string(V));
        const double* src = table->value.row(static_cast<std::size_t>(ids[i]));
        double* dst = y.row(i);
        for (std::size_t j = 0; j < E; ++j) dst[j] = src[j];
    }
    return detail::make_op(std::move(y), {table}, [ids](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Tensor& g = n.parents[0]->grad_buf();
        const std::size_t E = n.grad.cols();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const double* src = n.grad.row(i);
            double* dst = g.row(static_cast<std::size_t>(ids[i]));
            for (std::size_t j = 0; j < E; ++j) dst[j] += src[j];
        }
    });
}

inline Var softmax_rows(const Var& a) {
    require_matrix(a->value, "softmax input");
    Tensor y = a->value;
    const std::size_t B = y.rows(), N = y.cols();
    for (std::size_t i = 0; i < B; ++i) {
        double* yi = y.row(i);
        double mx = yi[0];
        for (std::size_t j = 1; j < N; ++j) mx = std::max(mx, yi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
            yi[j] = std::exp(yi[j] - mx);
            sum += yi[j];
        }
        for (std::size_t j = 0; j < N; ++j) yi[j] /= sum;
    }
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Tensor& g = n.parents[0]->grad_buf();
        const std::size_t B = n.grad.rows(), N = n.grad.cols();
        for (std::size_t i = 0; i < B; ++i) {
            const double* yi = n.value.row(i);
            const double* gi = n.grad.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < N; ++j) dot += gi[j] * yi[j];
            double* go = g.row(i);
            for (std::size_t j = 0; j < N; ++j) go[j] += (gi[j] - dot) * yi[j];
        }
    });
}

// ----------------------------- losses -----------------------------

/// Mean squared error against a fixed target; returns a 1x1 node.
inline Var mse_to(const Var& pred, const Tensor& target) {
    require_same_shape(pred->value, target, "mse prediction", "mse target");
    const std::size_t n = pred->value.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred->value[i] - target[i];
        acc += d * d;
    }
    Tensor y = Tensor::scalar(acc / static_cast<double>(n));
    return detail::make_op(std::move(y), {pred}, [target](Node& node) {
        if (!node.parents[0]->needs_grad) return;
        Tensor& g = node.parents[0]->grad_buf();
        const double s = node.grad[0] * 2.0 / static_cast<double>(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (node.parents[0]->value[i] - target[i]);
    });
}

/// Mean binary cross-entropy from logits, stabilized log-sigmoid form.
inline Var bce_logits_to(const Var& logits, const Tensor& flags) {
    require_same_shape(logits->value, flags, "bce logits", "bce flags");
    const std::size_t n = logits->value.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = logits->value[i], y = flags[i];
        acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    return detail::make_op(std::move(out), {logits}, [flags](Node& node) {
        if (!node.parents[0]->needs_grad) return;
        Tensor& g = node.parents[0]->grad_buf();
        const double s = node.grad[0] / static_cast<double>(g.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += s * (detail::stable_sigmoid(node.parents[0]->value[i]) - flags[i]);
    });
}

/// Masked mean cross-entropy of integer targets from logits [BxV].
/// mask[i] in {0,1}; rows with mask 0 contribute nothing. A positive
/// `denom_override` replaces the mask sum, letting per-step calls of a padded
/// sequence add up to one mean over all real positions.
inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets,
                              const std::vector<double>& mask, double denom_override = 0.0) {
    require_matrix(logits->value, "cross-entropy logits");
    const std::size_t B = logits->value.rows(), V = logits->value.cols();
    if (targets.size() != B || mask.size() != B)
        throw ShapeError("cross-entropy targets/mask length " + std::to_string(targets.size()) + " vs batch " +
                         std::to_string(B));
    double total = 0.0, denom = denom_override;
    for (std::size_t i = 0; i < B; ++i) {
        if (mask[i] == 0.0) continue;
        const double* li = logits->value.row(i);
        double mx = li[0];
        for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, li[j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < V; ++j) lse += std::exp(li[j] - mx);
        lse = mx + std::log(lse);
        total += (lse - li[static_cast<std::size_t>(targets[i])]) * mask[i];
        if (denom_override <= 0.0) denom += mask[i];
    }
    if (denom == 0.0) throw ShapeError("cross-entropy mask selects no rows");
    Tensor out = Tensor::scalar(total / denom);
    return detail::make_op(std::move(out), {logits}, [targets, mask, denom](Node& node) {
        if (!node.parents[0]->needs_grad) return;
        Tensor& g = node.parents[0]->grad_buf();
        const std::size_t B = g.rows(), V = g.cols();
        const double s = node.grad[0] / denom;
        for (std::size_t i = 0; i < B; ++i) {
            if (mask[i] == 0.0) continue;
            const double* li = node.parents[0]->value.row(i);
            double mx = li[0];
            for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, li[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < V; ++j) sum += std::exp(li[j] - mx);
            double* gi = g.row(i);
            for (std::size_t j = 0; j < V; ++j) {
                const double p = std::exp(li[j] - mx) / sum;
                gi[j] += s * mask[i] * (p - (static_cast<std::size_t>(targets[i]) == j ? 1.0 : 0.0));
            }
        }
    });
}

// ----------------------------- backward -----------------------------

/// Reverse-mode sweep from a scalar loss. Topological order comes from an
/// iterative post-order DFS over parents, so it depends only on graph shape.
inline void backward(const Var& loss) {
    if (loss->value.size() != 1) throw ShapeError("backward root must be scalar, got " + loss->value.shape_str());
    if (!loss->needs_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].get();
            ++next;
            if (p->needs_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->grad_buf()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.size() == n->value.size()) n->backprop(*n);
    }
}

}  // namespace itts
