#include <Eigen/Core>
#include <cmath>
#include <unordered_set>

#include "moodgen/core/check.hpp"
#include "moodgen/nn/graph.hpp"

namespace moodgen::nn {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RMat>;
using CMapM = Eigen::Map<const RMat>;

MapM mat(Tensor& t, std::int64_t rows, std::int64_t cols) { return MapM(t.data(), rows, cols); }
CMapM mat(const Tensor& t, std::int64_t rows, std::int64_t cols) {
    return CMapM(t.data(), rows, cols);
}

Var make_op(Tensor value, const std::vector<Var>& parents, std::function<void(Node&)> bw) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    Var out(std::move(value), rg);
    if (rg) {
        auto node = out.node();
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(bw);
    }
    return out;
}

}  // namespace

void backward(const Var& root) {
    MG_CHECK(root.defined() && root.value().size() == 1, "backward() root must be scalar");
    if (!root.requires_grad()) return;

    // Iterative DFS postorder; reverse gives topological order from root.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad().fill(0.0);
    root.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad_alloc) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    MG_CHECK(a.value().same_shape(b.value()), "add: shape mismatch");
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            Tensor& g = p.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    MG_CHECK(a.value().same_shape(b.value()), "sub: shape mismatch");
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    MG_CHECK(a.value().same_shape(b.value()), "mul: shape mismatch");
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            Tensor& g = pa.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            Tensor& g = pb.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + s;
    return make_op(std::move(out), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var mul_scalar(const Var& a, double s) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
    return make_op(std::move(out), {a}, [s](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Var relu(const Var& a) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    return make_op(std::move(out), {a}, [](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = p.ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i)
            if (p.value[i] > 0.0) g[i] += self.grad[i];
    });
}

Var silu(const Var& a) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double x = a.value()[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    return make_op(std::move(out), {a}, [](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = p.ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) {
            const double x = p.value[i];
            const double s = 1.0 / (1.0 + std::exp(-x));
            g[i] += self.grad[i] * s * (1.0 + x * (1.0 - s));
        }
    });
}

Var tanh_op(const Var& a) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.value()[i]);
    return make_op(std::move(out), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    });
}

Var square(const Var& a) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * a.value()[i];
    return make_op(std::move(out), {a}, [](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = p.ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 2.0 * p.value[i];
    });
}

// --------------------------------------------------------------------- shape

Var reshape(const Var& a, std::vector<std::int64_t> shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_op(std::move(out), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    MG_CHECK(!parts.empty(), "concat_rows: empty input");
    const std::int64_t cols = parts[0].value().dim(1);
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        MG_CHECK(p.value().rank() == 2 && p.value().dim(1) == cols,
                 "concat_rows: column mismatch");
        rows += p.value().dim(0);
    }
    Tensor out({rows, cols});
    std::int64_t r = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(),
                  out.data() + r * cols);
        r += p.value().dim(0);
    }
    return make_op(std::move(out), parts, [cols](Node& self) {
        std::int64_t r = 0;
        for (auto& parent : self.parents) {
            const std::int64_t n = parent->value.size();
            if (parent->requires_grad) {
                Tensor& g = parent->ensure_grad();
                const double* src = self.grad.data() + r * cols;
                for (std::int64_t i = 0; i < n; ++i) g[i] += src[i];
            }
            r += parent->value.dim(0);
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const auto& sa = a.value().shape();
    const auto& sb = b.value().shape();
    MG_CHECK(sa.size() == 4 && sb.size() == 4 && sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
             "concat_channels: shape mismatch");
    const std::int64_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
    Tensor out({n, ca + cb, sa[2], sa[3]});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(a.value().data() + i * ca * hw, a.value().data() + (i + 1) * ca * hw,
                  out.data() + i * (ca + cb) * hw);
        std::copy(b.value().data() + i * cb * hw, b.value().data() + (i + 1) * cb * hw,
                  out.data() + i * (ca + cb) * hw + ca * hw);
    }
    return make_op(std::move(out), {a, b}, [n, ca, cb, hw](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::int64_t i = 0; i < n; ++i) {
            const double* src = self.grad.data() + i * (ca + cb) * hw;
            if (pa.requires_grad) {
                Tensor& g = pa.ensure_grad();
                for (std::int64_t k = 0; k < ca * hw; ++k) g[i * ca * hw + k] += src[k];
            }
            if (pb.requires_grad) {
                Tensor& g = pb.ensure_grad();
                for (std::int64_t k = 0; k < cb * hw; ++k) g[i * cb * hw + k] += src[ca * hw + k];
            }
        }
    });
}

Var select_row(const Var& a, std::int64_t i) {
    MG_CHECK(a.value().rank() == 2, "select_row: expected 2-D");
    MG_CHECK(i >= 0 && i < a.value().dim(0), "select_row: index out of range");
    const std::int64_t d = a.value().dim(1);
    Tensor out({d});
    std::copy(a.value().data() + i * d, a.value().data() + (i + 1) * d, out.data());
    return make_op(std::move(out), {a}, [i, d](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t k = 0; k < d; ++k) g[i * d + k] += self.grad[k];
    });
}

Var spatial_tokens(const Var& x, std::int64_t n) {
    const auto& s = x.value().shape();
    MG_CHECK(s.size() == 4, "spatial_tokens: expected 4-D");
    MG_CHECK(n >= 0 && n < s[0], "spatial_tokens: batch index out of range");
    const std::int64_t c = s[1], hw = s[2] * s[3];
    Tensor out({hw, c});
    const double* base = x.value().data() + n * c * hw;
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t t = 0; t < hw; ++t) out[t * c + ci] = base[ci * hw + t];
    return make_op(std::move(out), {x}, [n, c, hw](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        double* base = g.data() + n * c * hw;
        for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t t = 0; t < hw; ++t) base[ci * hw + t] += self.grad[t * c + ci];
    });
}

Var stack_tokens_to_batch(const std::vector<Var>& tokens, std::int64_t c, std::int64_t h,
                          std::int64_t w) {
    const std::int64_t n = static_cast<std::int64_t>(tokens.size());
    const std::int64_t hw = h * w;
    MG_CHECK(n > 0, "stack_tokens_to_batch: empty input");
    Tensor out({n, c, h, w});
    for (std::int64_t i = 0; i < n; ++i) {
        const Tensor& t = tokens[static_cast<std::size_t>(i)].value();
        MG_CHECK(t.rank() == 2 && t.dim(0) == hw && t.dim(1) == c,
                 "stack_tokens_to_batch: token shape mismatch");
        double* base = out.data() + i * c * hw;
        for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t k = 0; k < hw; ++k) base[ci * hw + k] = t[k * c + ci];
    }
    return make_op(std::move(out), tokens, [c, hw](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            Node& p = *self.parents[i];
            if (!p.requires_grad) continue;
            Tensor& g = p.ensure_grad();
            const double* base = self.grad.data() + static_cast<std::int64_t>(i) * c * hw;
            for (std::int64_t ci = 0; ci < c; ++ci)
                for (std::int64_t k = 0; k < hw; ++k) g[k * c + ci] += base[ci * hw + k];
        }
    });
}

// ------------------------------------------------------------ linear algebra

Var matmul(const Var& a, const Var& b) {
    const auto& sa = a.value().shape();
    const auto& sb = b.value().shape();
    MG_CHECK(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], "matmul: shape mismatch");
    const std::int64_t m = sa[0], k = sa[1], n = sb[1];
    Tensor out({m, n});
    mat(out, m, n).noalias() = mat(a.value(), m, k) * mat(b.value(), k, n);
    return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        CMapM gout(self.grad.data(), m, n);
        if (pa.requires_grad)
            mat(pa.ensure_grad(), m, k).noalias() += gout * mat(pb.value, k, n).transpose();
        if (pb.requires_grad)
            mat(pb.ensure_grad(), k, n).noalias() += mat(pa.value, m, k).transpose() * gout;
    });
}

Var transpose2(const Var& a) {
    const auto& s = a.value().shape();
    MG_CHECK(s.size() == 2, "transpose2: expected 2-D");
    const std::int64_t m = s[0], n = s[1];
    Tensor out({n, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
    return make_op(std::move(out), {a}, [m, n](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    });
}

Var matvec(const Var& a, const Var& x) {
    const auto& sa = a.value().shape();
    MG_CHECK(sa.size() == 2 && x.value().rank() == 1 && sa[1] == x.value().dim(0),
             "matvec: shape mismatch");
    const std::int64_t m = sa[0], k = sa[1];
    Tensor out({m});
    for (std::int64_t i = 0; i < m; ++i) {
        double s = 0.0;
        const double* row = a.value().data() + i * k;
        for (std::int64_t j = 0; j < k; ++j) s += row[j] * x.value()[j];
        out[i] = s;
    }
    return make_op(std::move(out), {a, x}, [m, k](Node& self) {
        Node& pa = *self.parents[0];
        Node& px = *self.parents[1];
        if (pa.requires_grad) {
            Tensor& g = pa.ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < k; ++j) g[i * k + j] += self.grad[i] * px.value[j];
        }
        if (px.requires_grad) {
            Tensor& g = px.ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < k; ++j) g[j] += self.grad[i] * pa.value[i * k + j];
        }
    });
}

Var dot(const Var& a, const Var& b) {
    MG_CHECK(a.value().same_shape(b.value()) && a.value().rank() == 1, "dot: shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
    return make_op(Tensor::scalar(s), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double g = self.grad[0];
        if (pa.requires_grad) {
            Tensor& ga = pa.ensure_grad();
            for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g * pb.value[i];
        }
        if (pb.requires_grad) {
            Tensor& gb = pb.ensure_grad();
            for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] += g * pa.value[i];
        }
    });
}

Var bias_rows(const Var& x, const Var& b) {
    const auto& s = x.value().shape();
    MG_CHECK(s.size() == 2 && b.value().rank() == 1 && b.value().dim(0) == s[1],
             "bias_rows: shape mismatch");
    const std::int64_t n = s[0], d = s[1];
    Tensor out({n, d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = x.value()[i * d + j] + b.value()[j];
    return make_op(std::move(out), {x, b}, [n, d](Node& self) {
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) { return bias_rows(matmul(x, w), b); }

// ---------------------------------------------------------------- reductions

Var mean_all(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    return make_op(Tensor::scalar(a.value().sum() / n), {a}, [n](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gs = self.grad[0] / n;
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += gs;
    });
}

Var sum_all(const Var& a) {
    return make_op(Tensor::scalar(a.value().sum()), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gs = self.grad[0];
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += gs;
    });
}

Var mean_rows(const Var& a) {
    const auto& s = a.value().shape();
    MG_CHECK(s.size() == 2, "mean_rows: expected 2-D");
    const std::int64_t n = s[0], d = s[1];
    Tensor out({d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) out[j] += a.value()[i * d + j];
    for (std::int64_t j = 0; j < d; ++j) out[j] /= static_cast<double>(n);
    return make_op(std::move(out), {a}, [n, d](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j)
                g[i * d + j] += self.grad[j] / static_cast<double>(n);
    });
}

Var mean_per_sample(const Var& a) {
    const auto& s = a.value().shape();
    MG_CHECK(s.size() >= 2, "mean_per_sample: expected rank >= 2");
    const std::int64_t n = s[0];
    const std::int64_t per = a.value().size() / n;
    Tensor out({n});
    for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        const double* base = a.value().data() + i * per;
        for (std::int64_t k = 0; k < per; ++k) acc += base[k];
        out[i] = acc / static_cast<double>(per);
    }
    return make_op(std::move(out), {a}, [n, per](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const double gs = self.grad[i] / static_cast<double>(per);
            double* base = g.data() + i * per;
            for (std::int64_t k = 0; k < per; ++k) base[k] += gs;
        }
    });
}

Var weighted_mean(const Var& v, const Tensor& w) {
    MG_CHECK(v.value().rank() == 1 && v.value().same_shape(w), "weighted_mean: shape mismatch");
    const std::int64_t n = v.value().size();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += v.value()[i] * w[i];
    Tensor weights = w;
    return make_op(Tensor::scalar(acc / static_cast<double>(n)), {v},
                   [n, weights = std::move(weights)](Node& self) {
                       Tensor& g = self.parents[0]->ensure_grad();
                       const double gs = self.grad[0] / static_cast<double>(n);
                       for (std::int64_t i = 0; i < n; ++i) g[i] += gs * weights[i];
                   });
}

// ------------------------------------------------------------- conv / spatial

namespace {

struct ConvDims {
    std::int64_t n, cin, h, w, cout, kh, kw, hout, wout;
    int stride, pad;
};

Tensor im2col(const Tensor& x, const ConvDims& d) {
    Tensor cols({d.n * d.hout * d.wout, d.cin * d.kh * d.kw});
    const std::int64_t ckk = d.cin * d.kh * d.kw;
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t oy = 0; oy < d.hout; ++oy)
            for (std::int64_t ox = 0; ox < d.wout; ++ox) {
                double* row = cols.data() + ((n * d.hout + oy) * d.wout + ox) * ckk;
                for (std::int64_t c = 0; c < d.cin; ++c) {
                    const double* plane = x.data() + (n * d.cin + c) * d.h * d.w;
                    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
                        const std::int64_t iy = oy * d.stride + ky - d.pad;
                        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
                            const std::int64_t ix = ox * d.stride + kx - d.pad;
                            row[(c * d.kh + ky) * d.kw + kx] =
                                (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                                    ? plane[iy * d.w + ix]
                                    : 0.0;
                        }
                    }
                }
            }
    return cols;
}

void col2im_add(const Tensor& cols, const ConvDims& d, Tensor& dx) {
    const std::int64_t ckk = d.cin * d.kh * d.kw;
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t oy = 0; oy < d.hout; ++oy)
            for (std::int64_t ox = 0; ox < d.wout; ++ox) {
                const double* row = cols.data() + ((n * d.hout + oy) * d.wout + ox) * ckk;
                for (std::int64_t c = 0; c < d.cin; ++c) {
                    double* plane = dx.data() + (n * d.cin + c) * d.h * d.w;
                    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
                        const std::int64_t iy = oy * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
                            const std::int64_t ix = ox * d.stride + kx - d.pad;
                            if (ix < 0 || ix >= d.w) continue;
                            plane[iy * d.w + ix] += row[(c * d.kh + ky) * d.kw + kx];
                        }
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const auto& sx = x.value().shape();
    const auto& sw = w.value().shape();
    MG_CHECK(sx.size() == 4 && sw.size() == 4 && sx[1] == sw[1], "conv2d: shape mismatch");
    MG_CHECK(b.value().rank() == 1 && b.value().dim(0) == sw[0], "conv2d: bias mismatch");
    MG_CHECK(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    ConvDims d;
    d.n = sx[0];
    d.cin = sx[1];
    d.h = sx[2];
    d.w = sx[3];
    d.cout = sw[0];
    d.kh = sw[2];
    d.kw = sw[3];
    d.stride = stride;
    d.pad = pad;
    d.hout = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wout = (d.w + 2 * pad - d.kw) / stride + 1;
    MG_CHECK(d.hout > 0 && d.wout > 0, "conv2d: empty output");

    const std::int64_t rows = d.n * d.hout * d.wout;
    const std::int64_t ckk = d.cin * d.kh * d.kw;
    auto cols = std::make_shared<Tensor>(im2col(x.value(), d));

    // out_rows[r, co] = cols[r, :] . w[co, :]
    Tensor out_rows({rows, d.cout});
    mat(out_rows, rows, d.cout).noalias() =
        mat(*cols, rows, ckk) * mat(w.value(), d.cout, ckk).transpose();

    Tensor out({d.n, d.cout, d.hout, d.wout});
    const std::int64_t hw = d.hout * d.wout;
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t t = 0; t < hw; ++t) {
            const double* src = out_rows.data() + (n * hw + t) * d.cout;
            for (std::int64_t co = 0; co < d.cout; ++co)
                out[(n * d.cout + co) * hw + t] = src[co] + b.value()[co];
        }

    return make_op(std::move(out), {x, w, b}, [d, cols, rows, ckk, hw](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];

        Tensor gout_rows({rows, d.cout});
        for (std::int64_t n = 0; n < d.n; ++n)
            for (std::int64_t t = 0; t < hw; ++t) {
                double* dst = gout_rows.data() + (n * hw + t) * d.cout;
                for (std::int64_t co = 0; co < d.cout; ++co)
                    dst[co] = self.grad[(n * d.cout + co) * hw + t];
            }

        if (pb.requires_grad) {
            Tensor& gb = pb.ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t co = 0; co < d.cout; ++co)
                    gb[co] += gout_rows[r * d.cout + co];
        }
        if (pw.requires_grad) {
            mat(pw.ensure_grad(), d.cout, ckk).noalias() +=
                mat(gout_rows, rows, d.cout).transpose() * mat(*cols, rows, ckk);
        }
        if (px.requires_grad) {
            Tensor dcols({rows, ckk});
            mat(dcols, rows, ckk).noalias() =
                mat(gout_rows, rows, d.cout) * mat(pw.value, d.cout, ckk);
            col2im_add(dcols, d, px.ensure_grad());
        }
    });
}

Var avg_pool2(const Var& x) {
    const auto& s = x.value().shape();
    MG_CHECK(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0, "avg_pool2: expected even H,W");
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    Tensor out({n, c, h / 2, w / 2});
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const double* in = x.value().data() + nc * h * w;
        double* o = out.data() + nc * (h / 2) * (w / 2);
        for (std::int64_t i = 0; i < h / 2; ++i)
            for (std::int64_t j = 0; j < w / 2; ++j)
                o[i * (w / 2) + j] = 0.25 * (in[(2 * i) * w + 2 * j] + in[(2 * i) * w + 2 * j + 1] +
                                             in[(2 * i + 1) * w + 2 * j] +
                                             in[(2 * i + 1) * w + 2 * j + 1]);
    }
    return make_op(std::move(out), {x}, [n, c, h, w](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t nc = 0; nc < n * c; ++nc) {
            double* go = g.data() + nc * h * w;
            const double* gi = self.grad.data() + nc * (h / 2) * (w / 2);
            for (std::int64_t i = 0; i < h / 2; ++i)
                for (std::int64_t j = 0; j < w / 2; ++j) {
                    const double v = 0.25 * gi[i * (w / 2) + j];
                    go[(2 * i) * w + 2 * j] += v;
                    go[(2 * i) * w + 2 * j + 1] += v;
                    go[(2 * i + 1) * w + 2 * j] += v;
                    go[(2 * i + 1) * w + 2 * j + 1] += v;
                }
        }
    });
}

Var upsample_nearest2(const Var& x) {
    const auto& s = x.value().shape();
    MG_CHECK(s.size() == 4, "upsample_nearest2: expected 4-D");
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    Tensor out({n, c, h * 2, w * 2});
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const double* in = x.value().data() + nc * h * w;
        double* o = out.data() + nc * 4 * h * w;
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) {
                const double v = in[i * w + j];
                o[(2 * i) * 2 * w + 2 * j] = v;
                o[(2 * i) * 2 * w + 2 * j + 1] = v;
                o[(2 * i + 1) * 2 * w + 2 * j] = v;
                o[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
            }
    }
    return make_op(std::move(out), {x}, [n, c, h, w](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t nc = 0; nc < n * c; ++nc) {
            double* go = g.data() + nc * h * w;
            const double* gi = self.grad.data() + nc * 4 * h * w;
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    go[i * w + j] += gi[(2 * i) * 2 * w + 2 * j] + gi[(2 * i) * 2 * w + 2 * j + 1] +
                                     gi[(2 * i + 1) * 2 * w + 2 * j] +
                                     gi[(2 * i + 1) * 2 * w + 2 * j + 1];
        }
    });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
    const auto& s = x.value().shape();
    MG_CHECK(s.size() == 4, "group_norm: expected 4-D");
    const std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    MG_CHECK(groups >= 1 && c % groups == 0, "group_norm: channels not divisible by groups");
    MG_CHECK(gamma.value().rank() == 1 && gamma.value().dim(0) == c &&
                 beta.value().rank() == 1 && beta.value().dim(0) == c,
             "group_norm: affine shape mismatch");
    const std::int64_t cpg = c / groups;
    const std::int64_t m = cpg * hw;

    Tensor out(s);
    auto mean = std::make_shared<Tensor>(Tensor({n, static_cast<std::int64_t>(groups)}));
    auto rstd = std::make_shared<Tensor>(Tensor({n, static_cast<std::int64_t>(groups)}));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t g = 0; g < groups; ++g) {
            const double* base = x.value().data() + (i * c + g * cpg) * hw;
            double mu = 0.0;
            for (std::int64_t k = 0; k < m; ++k) mu += base[k];
            mu /= static_cast<double>(m);
            double var = 0.0;
            for (std::int64_t k = 0; k < m; ++k) {
                const double dv = base[k] - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(m);
            const double rs = 1.0 / std::sqrt(var + eps);
            (*mean)[i * groups + g] = mu;
            (*rstd)[i * groups + g] = rs;
            double* o = out.data() + (i * c + g * cpg) * hw;
            for (std::int64_t ci = 0; ci < cpg; ++ci) {
                const double ga = gamma.value()[g * cpg + ci];
                const double be = beta.value()[g * cpg + ci];
                for (std::int64_t k = 0; k < hw; ++k)
                    o[ci * hw + k] = ga * (base[ci * hw + k] - mu) * rs + be;
            }
        }

    return make_op(std::move(out), {x, gamma, beta},
                   [n, c, hw, groups, cpg, m, mean, rstd](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       for (std::int64_t i = 0; i < n; ++i)
                           for (std::int64_t g = 0; g < groups; ++g) {
                               const double mu = (*mean)[i * groups + g];
                               const double rs = (*rstd)[i * groups + g];
                               const double* xb = px.value.data() + (i * c + g * cpg) * hw;
                               const double* gy = self.grad.data() + (i * c + g * cpg) * hw;
                               // Accumulate the two inner sums over the group.
                               double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                               for (std::int64_t ci = 0; ci < cpg; ++ci) {
                                   const double ga = pg.value[g * cpg + ci];
                                   for (std::int64_t k = 0; k < hw; ++k) {
                                       const double xhat = (xb[ci * hw + k] - mu) * rs;
                                       const double dxhat = gy[ci * hw + k] * ga;
                                       sum_dxhat += dxhat;
                                       sum_dxhat_xhat += dxhat * xhat;
                                   }
                               }
                               if (px.requires_grad) {
                                   Tensor& gx = px.ensure_grad();
                                   double* gxb = gx.data() + (i * c + g * cpg) * hw;
                                   const double inv_m = 1.0 / static_cast<double>(m);
                                   for (std::int64_t ci = 0; ci < cpg; ++ci) {
                                       const double ga = pg.value[g * cpg + ci];
                                       for (std::int64_t k = 0; k < hw; ++k) {
                                           const double xhat = (xb[ci * hw + k] - mu) * rs;
                                           const double dxhat = gy[ci * hw + k] * ga;
                                           gxb[ci * hw + k] +=
                                               rs * (dxhat - inv_m * sum_dxhat -
                                                     xhat * inv_m * sum_dxhat_xhat);
                                       }
                                   }
                               }
                               if (pg.requires_grad || pb.requires_grad) {
                                   for (std::int64_t ci = 0; ci < cpg; ++ci) {
                                       double dg = 0.0, db = 0.0;
                                       for (std::int64_t k = 0; k < hw; ++k) {
                                           const double xhat = (xb[ci * hw + k] - mu) * rs;
                                           dg += gy[ci * hw + k] * xhat;
                                           db += gy[ci * hw + k];
                                       }
                                       if (pg.requires_grad) pg.ensure_grad()[g * cpg + ci] += dg;
                                       if (pb.requires_grad) pb.ensure_grad()[g * cpg + ci] += db;
                                   }
                               }
                           }
                   });
}

Var add_bias_channels_per_sample(const Var& x, const Var& b) {
    const auto& s = x.value().shape();
    MG_CHECK(s.size() == 4 && b.value().rank() == 2 && b.value().dim(0) == s[0] &&
                 b.value().dim(1) == s[1],
             "add_bias_channels_per_sample: shape mismatch");
    const std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    Tensor out(s);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ci = 0; ci < c; ++ci) {
            const double bias = b.value()[i * c + ci];
            const double* in = x.value().data() + (i * c + ci) * hw;
            double* o = out.data() + (i * c + ci) * hw;
            for (std::int64_t k = 0; k < hw; ++k) o[k] = in[k] + bias;
        }
    return make_op(std::move(out), {x, b}, [n, c, hw](Node& self) {
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t ci = 0; ci < c; ++ci) {
                    double acc = 0.0;
                    const double* gy = self.grad.data() + (i * c + ci) * hw;
                    for (std::int64_t k = 0; k < hw; ++k) acc += gy[k];
                    g[i * c + ci] += acc;
                }
        }
    });
}

// ------------------------------------------------------------- probabilistic

Var softmax_rows(const Var& x) {
    const auto& s = x.value().shape();
    MG_CHECK(s.size() == 2, "softmax_rows: expected 2-D");
    const std::int64_t n = s[0], d = s[1];
    Tensor out({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = x.value().data() + i * d;
        double mx = row[0];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        double* o = out.data() + i * d;
        for (std::int64_t j = 0; j < d; ++j) {
            o[j] = std::exp(row[j] - mx);
            z += o[j];
        }
        for (std::int64_t j = 0; j < d; ++j) o[j] /= z;
    }
    return make_op(std::move(out), {x}, [n, d](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const double* y = self.value.data() + i * d;
            const double* gy = self.grad.data() + i * d;
            double dot = 0.0;
            for (std::int64_t j = 0; j < d; ++j) dot += gy[j] * y[j];
            for (std::int64_t j = 0; j < d; ++j) g[i * d + j] += (gy[j] - dot) * y[j];
        }
    });
}

Var softmax_xent(const Var& logits, const std::vector<std::int64_t>& targets) {
    const auto& s = logits.value().shape();
    MG_CHECK(s.size() == 2, "softmax_xent: expected 2-D logits");
    const std::int64_t n = s[0], k = s[1];
    MG_CHECK(static_cast<std::int64_t>(targets.size()) == n, "softmax_xent: target count mismatch");
    for (auto t : targets) MG_CHECK(t >= 0 && t < k, "softmax_xent: target index out of range");
    Tensor out({n});
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = logits.value().data() + i * k;
        double mx = row[0];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        out[i] = mx + std::log(z) - row[targets[static_cast<std::size_t>(i)]];
    }
    auto tgt = targets;
    return make_op(std::move(out), {logits}, [n, k, tgt = std::move(tgt)](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = p.ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const double* row = p.value.data() + i * k;
            double mx = row[0];
            for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
            const double gi = self.grad[i];
            for (std::int64_t j = 0; j < k; ++j) {
                const double pj = std::exp(row[j] - mx) / z;
                g[i * k + j] += gi * (pj - (j == tgt[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
            }
        }
    });
}

namespace {

// Shared normalize backward: y = x / r with r = sqrt(|x|^2 + eps^2), rowwise.
void normalize_backward(const double* x, const double* y, const double* gy, double* gx,
                        std::int64_t d, double r) {
    double dot = 0.0;
    for (std::int64_t j = 0; j < d; ++j) dot += gy[j] * y[j];
    for (std::int64_t j = 0; j < d; ++j) gx[j] += (gy[j] - y[j] * dot) / r;
    (void)x;
}

}  // namespace

Var l2_normalize_rows(const Var& x, double eps) {
    const auto& s = x.value().shape();
    MG_CHECK(s.size() == 2, "l2_normalize_rows: expected 2-D");
    const std::int64_t n = s[0], d = s[1];
    Tensor out({n, d});
    auto radii = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = x.value().data() + i * d;
        double ss = 0.0;
        for (std::int64_t j = 0; j < d; ++j) ss += row[j] * row[j];
        const double r = std::sqrt(ss + eps * eps);
        (*radii)[static_cast<std::size_t>(i)] = r;
        for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = row[j] / r;
    }
    return make_op(std::move(out), {x}, [n, d, radii](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = p.ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
            normalize_backward(p.value.data() + i * d, self.value.data() + i * d,
                               self.grad.data() + i * d, g.data() + i * d, d,
                               (*radii)[static_cast<std::size_t>(i)]);
    });
}

Var l2_normalize_vec(const Var& x, double eps) {
    MG_CHECK(x.value().rank() == 1, "l2_normalize_vec: expected 1-D");
    const std::int64_t d = x.value().dim(0);
    double ss = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ss += x.value()[j] * x.value()[j];
    const double r = std::sqrt(ss + eps * eps);
    Tensor out({d});
    for (std::int64_t j = 0; j < d; ++j) out[j] = x.value()[j] / r;
    return make_op(std::move(out), {x}, [d, r](Node& self) {
        Node& p = *self.parents[0];
        normalize_backward(p.value.data(), self.value.data(), self.grad.data(),
                           p.ensure_grad().data(), d, r);
    });
}

Var gather_rows(const Var& table, const std::vector<std::int64_t>& idx) {
    const auto& s = table.value().shape();
    MG_CHECK(s.size() == 2, "gather_rows: expected 2-D table");
    const std::int64_t d = s[1];
    for (auto i : idx) MG_CHECK(i >= 0 && i < s[0], "gather_rows: index out of range");
    Tensor out({static_cast<std::int64_t>(idx.size()), d});
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(table.value().data() + idx[r] * d, table.value().data() + (idx[r] + 1) * d,
                  out.data() + static_cast<std::int64_t>(r) * d);
    auto indices = idx;
    return make_op(std::move(out), {table}, [d, indices = std::move(indices)](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const double* src = self.grad.data() + static_cast<std::int64_t>(r) * d;
            double* dst = g.data() + indices[r] * d;
            for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

}  // namespace moodgen::nn
