// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape. Forward ops append nodes with value + backward closure;
// backward() replays closures in reverse creation order. With grads disabled
// the same forward arithmetic runs and no closure is created, so training and
// decoding follow bit-identical numeric paths.
//
// Backward closures capture node ids (never Node references: the node vector
// reallocates while the tape grows) plus whatever forward byproducts they
// need (softmax outputs, argmax piece indices, normalizer sums).

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "seqattn/common.hpp"
#include "seqattn/param_store.hpp"
#include "seqattn/tensor.hpp"

namespace seqattn {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

template <typename T>
class Graph {
public:
    explicit Graph(ParamStore<T>* store = nullptr, bool enable_grads = true)
        : store_(store), grads_(enable_grads) {}

    bool grads_enabled() const { return grads_; }
    std::size_t size() const { return nodes_.size(); }
    int degenerate_normalizations() const { return degenerate_; }

    const Tensor<T>& value(Var v) const { return node(v).value; }
    const Tensor<T>& grad(Var v) const {
        SEQATTN_CHECK(grads_, "gradients disabled on this graph");
        return node(v).grad;
    }

    // ---- leaves ------------------------------------------------------

    Var leaf(Tensor<T> v) { return push(std::move(v), nullptr); }

    Var scalar(T v) { return leaf(Tensor<T>::scalar(v)); }

    // Parameter leaf, memoized per entry. Frozen entries become plain leaves:
    // no gradient is ever harvested for them, which keeps their stored grads
    // exactly zero through a frozen stage.
    Var param(const std::string& name) {
        SEQATTN_CHECK(store_ != nullptr, "graph has no parameter store bound");
        const int pid = store_->id_of(name);
        if (pid < static_cast<int>(param_vars_.size()) && param_vars_[pid].valid())
            return param_vars_[pid];
        auto& e = store_->entry(pid);
        Var v = push(e.value, nullptr);
        if (grads_ && e.trainable) node(v).param_id = pid;
        if (pid >= static_cast<int>(param_vars_.size())) param_vars_.resize(pid + 1);
        param_vars_[pid] = v;
        return v;
    }

    // ---- elementwise -------------------------------------------------

    Var add(Var a, Var b) {
        require_same_shape(a, b, "add");
        Tensor<T> out = value(a);
        const Tensor<T>& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
        return push(std::move(out), make_backward([a, b](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            Tensor<T>& ga = g.mutable_grad(a);
            Tensor<T>& gb = g.mutable_grad(b);
            for (std::size_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i];
                gb[i] += go[i];
            }
        }));
    }

    Var add_n(const std::vector<Var>& vs) {
        SEQATTN_CHECK(!vs.empty(), "add_n over empty list");
        Tensor<T> out = value(vs[0]);
        for (std::size_t k = 1; k < vs.size(); ++k) {
            require_same_shape(vs[0], vs[k], "add_n");
            const Tensor<T>& v = value(vs[k]);
            for (std::size_t i = 0; i < out.numel(); ++i) out[i] += v[i];
        }
        return push(std::move(out), make_backward([vs](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            for (Var v : vs) {
                Tensor<T>& gv = g.mutable_grad(v);
                for (std::size_t i = 0; i < go.numel(); ++i) gv[i] += go[i];
            }
        }));
    }

    Var sub(Var a, Var b) {
        require_same_shape(a, b, "sub");
        Tensor<T> out = value(a);
        const Tensor<T>& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
        return push(std::move(out), make_backward([a, b](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            Tensor<T>& ga = g.mutable_grad(a);
            Tensor<T>& gb = g.mutable_grad(b);
            for (std::size_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i];
                gb[i] -= go[i];
            }
        }));
    }

    Var mul(Var a, Var b) {
        require_same_shape(a, b, "mul");
        Tensor<T> out = value(a);
        const Tensor<T>& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
        return push(std::move(out), make_backward([a, b](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            const Tensor<T>& va = g.value(a);
            const Tensor<T>& vb2 = g.value(b);
            Tensor<T>& ga = g.mutable_grad(a);
            Tensor<T>& gb = g.mutable_grad(b);
            for (std::size_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i] * vb2[i];
                gb[i] += go[i] * va[i];
            }
        }));
    }

    Var scale(Var a, T c) {
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
        return push(std::move(out), make_backward([a, c](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            Tensor<T>& ga = g.mutable_grad(a);
            for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += c * go[i];
        }));
    }

    Var one_minus(Var a) {
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(1) - out[i];
        return push(std::move(out), make_backward([a](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            Tensor<T>& ga = g.mutable_grad(a);
            for (std::size_t i = 0; i < go.numel(); ++i) ga[i] -= go[i];
        }));
    }

    Var sigmoid(Var a) {
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(out[i]);
        return push(std::move(out), make_backward([a](Graph& g, int self) {
            const Node& n = g.node_at(self);
            Tensor<T>& ga = g.mutable_grad(a);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) {
                const T y = n.value[i];
                ga[i] += n.grad[i] * y * (T(1) - y);
            }
        }));
    }

    Var tanh(Var a) {
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
        return push(std::move(out), make_backward([a](Graph& g, int self) {
            const Node& n = g.node_at(self);
            Tensor<T>& ga = g.mutable_grad(a);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) {
                const T y = n.value[i];
                ga[i] += n.grad[i] * (T(1) - y * y);
            }
        }));
    }

    Var reshape(Var a, Shape shape) {
        SEQATTN_CHECK(shape_numel(shape) == value(a).numel(), "reshape from ",
                      shape_str(value(a).shape()), " to ", shape_str(shape),
                      " changes element count");
        Tensor<T> out(std::move(shape), value(a).storage());
        return push(std::move(out), make_backward([a](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            Tensor<T>& ga = g.mutable_grad(a);
            for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        }));
    }

    // ---- reductions ---------------------------------------------------

    Var sum(Var a) {
        T s = 0;
        const Tensor<T>& va = value(a);
        for (std::size_t i = 0; i < va.numel(); ++i) s += va[i];
        return push(Tensor<T>::scalar(s), make_backward([a](Graph& g, int self) {
            const T go = g.node_at(self).grad.value();
            Tensor<T>& ga = g.mutable_grad(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go;
        }));
    }

    Var sumsq(Var a) {
        T s = 0;
        const Tensor<T>& va = value(a);
        for (std::size_t i = 0; i < va.numel(); ++i) s += va[i] * va[i];
        return push(Tensor<T>::scalar(s), make_backward([a](Graph& g, int self) {
            const T go = g.node_at(self).grad.value();
            const Tensor<T>& va2 = g.value(a);
            Tensor<T>& ga = g.mutable_grad(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += T(2) * va2[i] * go;
        }));
    }

    Var dot(Var a, Var b) {
        require_same_shape(a, b, "dot");
        T s = 0;
        const Tensor<T>& va = value(a);
        const Tensor<T>& vb = value(b);
        for (std::size_t i = 0; i < va.numel(); ++i) s += va[i] * vb[i];
        return push(Tensor<T>::scalar(s), make_backward([a, b](Graph& g, int self) {
            const T go = g.node_at(self).grad.value();
            const Tensor<T>& va2 = g.value(a);
            const Tensor<T>& vb2 = g.value(b);
            Tensor<T>& ga = g.mutable_grad(a);
            Tensor<T>& gb = g.mutable_grad(b);
            for (std::size_t i = 0; i < va2.numel(); ++i) {
                ga[i] += go * vb2[i];
                gb[i] += go * va2[i];
            }
        }));
    }

    Var pick(Var v, std::size_t index) {
        const Tensor<T>& t = value(v);
        SEQATTN_CHECK(t.rank() == 1 && index < t.numel(), "pick index ", index,
                      " out of range for shape ", shape_str(t.shape()));
        return push(Tensor<T>::scalar(t[index]), make_backward([v, index](Graph& g, int self) {
            g.mutable_grad(v)[index] += g.node_at(self).grad.value();
        }));
    }

    // out[r] = M[r, idx[r]]
    Var gather_rows(Var m, std::vector<std::size_t> idx) {
        const Tensor<T>& M = value(m);
        SEQATTN_CHECK(M.rank() == 2 && idx.size() == M.dim(0), "gather_rows needs one index per row");
        const std::size_t cols = M.dim(1);
        Tensor<T> out(Shape{idx.size()});
        for (std::size_t r = 0; r < idx.size(); ++r) {
            SEQATTN_CHECK(idx[r] < cols, "gather_rows column ", idx[r], " out of range");
            out[r] = M.at(r, idx[r]);
        }
        return push(std::move(out),
                    make_backward([m, idx = std::move(idx), cols](Graph& g, int self) {
                        const Tensor<T>& go = g.node_at(self).grad;
                        Tensor<T>& gm = g.mutable_grad(m);
                        for (std::size_t r = 0; r < idx.size(); ++r)
                            gm[r * cols + idx[r]] += go[r];
                    }));
    }

    // ---- linear algebra ------------------------------------------------

    // Row-wise affine map. x rank 1: y = Wx + b. x rank 2 (rows are samples):
    // Y[r] = W x[r] + b.
    Var affine(Var w, Var x, Var b) {
        const Tensor<T>& W = value(w);
        const Tensor<T>& X = value(x);
        const Tensor<T>& B = value(b);
        SEQATTN_CHECK(W.rank() == 2, "affine weight must be a matrix, got ", shape_str(W.shape()));
        const std::size_t m = W.dim(0), n = W.dim(1);
        SEQATTN_CHECK(B.rank() == 1 && B.dim(0) == m, "affine bias shape ", shape_str(B.shape()),
                      " does not match weight ", shape_str(W.shape()));
        const bool vec = X.rank() == 1;
        SEQATTN_CHECK((vec && X.dim(0) == n) || (X.rank() == 2 && X.dim(1) == n),
                      "affine input shape ", shape_str(X.shape()), " does not match weight ",
                      shape_str(W.shape()));
        const std::size_t rows = vec ? 1 : X.dim(0);

        Tensor<T> out(vec ? Shape{m} : Shape{rows, m});
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = X.data() + r * n;
            T* yr = out.data() + r * m;
            for (std::size_t i = 0; i < m; ++i) {
                const T* wi = W.data() + i * n;
                T acc = B[i];
                for (std::size_t j = 0; j < n; ++j) acc += wi[j] * xr[j];
                yr[i] = acc;
            }
        }
        return push(std::move(out), make_backward([w, x, b, m, n, rows](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            const Tensor<T>& W2 = g.value(w);
            const Tensor<T>& X2 = g.value(x);
            Tensor<T>& gw = g.mutable_grad(w);
            Tensor<T>& gx = g.mutable_grad(x);
            Tensor<T>& gb = g.mutable_grad(b);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gyr = go.data() + r * m;
                const T* xr = X2.data() + r * n;
                T* gxr = gx.data() + r * n;
                for (std::size_t i = 0; i < m; ++i) {
                    const T gyi = gyr[i];
                    if (gyi == T(0)) continue;
                    const T* wi = W2.data() + i * n;
                    T* gwi = gw.data() + i * n;
                    gb[i] += gyi;
                    for (std::size_t j = 0; j < n; ++j) {
                        gwi[j] += gyi * xr[j];
                        gxr[j] += gyi * wi[j];
                    }
                }
            }
        }));
    }

    // y = Wx (no bias).
    Var matvec(Var w, Var x) {
        const Tensor<T>& W = value(w);
        const Tensor<T>& X = value(x);
        SEQATTN_CHECK(W.rank() == 2 && X.rank() == 1 && W.dim(1) == X.dim(0),
                      "matvec shapes ", shape_str(W.shape()), " vs ", shape_str(X.shape()));
        const std::size_t m = W.dim(0), n = W.dim(1);
        Tensor<T> out(Shape{m});
        for (std::size_t i = 0; i < m; ++i) {
            const T* wi = W.data() + i * n;
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += wi[j] * X[j];
            out[i] = acc;
        }
        return push(std::move(out), make_backward([w, x, m, n](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            const Tensor<T>& W2 = g.value(w);
            const Tensor<T>& X2 = g.value(x);
            Tensor<T>& gw = g.mutable_grad(w);
            Tensor<T>& gx = g.mutable_grad(x);
            for (std::size_t i = 0; i < m; ++i) {
                const T gyi = go[i];
                if (gyi == T(0)) continue;
                const T* wi = W2.data() + i * n;
                T* gwi = gw.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) {
                    gwi[j] += gyi * X2[j];
                    gx[j] += gyi * wi[j];
                }
            }
        }));
    }

    // Adds v to every row of M.
    Var add_rowwise(Var m, Var v) {
        const Tensor<T>& M = value(m);
        const Tensor<T>& V = value(v);
        SEQATTN_CHECK(M.rank() == 2 && V.rank() == 1 && M.dim(1) == V.dim(0),
                      "add_rowwise shapes ", shape_str(M.shape()), " vs ", shape_str(V.shape()));
        const std::size_t rows = M.dim(0), cols = M.dim(1);
        Tensor<T> out = M;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] += V[j];
        return push(std::move(out), make_backward([m, v, rows, cols](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            Tensor<T>& gm = g.mutable_grad(m);
            Tensor<T>& gv = g.mutable_grad(v);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < cols; ++j) {
                    gm[r * cols + j] += go[r * cols + j];
                    gv[j] += go[r * cols + j];
                }
        }));
    }

    Var concat(const std::vector<Var>& parts) {
        SEQATTN_CHECK(!parts.empty(), "concat of nothing");
        std::size_t total = 0;
        for (Var p : parts) {
            SEQATTN_CHECK(value(p).rank() == 1, "concat expects vectors");
            total += value(p).numel();
        }
        Tensor<T> out(Shape{total});
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor<T>& v = value(p);
            for (std::size_t i = 0; i < v.numel(); ++i) out[off + i] = v[i];
            off += v.numel();
        }
        return push(std::move(out), make_backward([parts](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            std::size_t off2 = 0;
            for (Var p : parts) {
                Tensor<T>& gp = g.mutable_grad(p);
                for (std::size_t i = 0; i < gp.numel(); ++i) gp[i] += go[off2 + i];
                off2 += gp.numel();
            }
        }));
    }

    Var stack_rows(const std::vector<Var>& rows) {
        SEQATTN_CHECK(!rows.empty(), "stack_rows of nothing");
        const std::size_t n = value(rows[0]).numel();
        Tensor<T> out(Shape{rows.size(), n});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const Tensor<T>& v = value(rows[r]);
            SEQATTN_CHECK(v.rank() == 1 && v.numel() == n, "stack_rows with ragged rows");
            for (std::size_t j = 0; j < n; ++j) out[r * n + j] = v[j];
        }
        return push(std::move(out), make_backward([rows, n](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                Tensor<T>& gr = g.mutable_grad(rows[r]);
                for (std::size_t j = 0; j < n; ++j) gr[j] += go[r * n + j];
            }
        }));
    }

    Var row(Var m, std::size_t r) {
        const Tensor<T>& M = value(m);
        SEQATTN_CHECK(M.rank() == 2 && r < M.dim(0), "row ", r, " out of range for ",
                      shape_str(M.shape()));
        const std::size_t cols = M.dim(1);
        Tensor<T> out(Shape{cols});
        for (std::size_t j = 0; j < cols; ++j) out[j] = M.at(r, j);
        return push(std::move(out), make_backward([m, r, cols](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            Tensor<T>& gm = g.mutable_grad(m);
            for (std::size_t j = 0; j < cols; ++j) gm[r * cols + j] += go[j];
        }));
    }

    // c = sum_r alpha[r] * H[r, :]
    Var weighted_sum_rows(Var h, Var alpha) {
        const Tensor<T>& H = value(h);
        const Tensor<T>& A = value(alpha);
        SEQATTN_CHECK(H.rank() == 2 && A.rank() == 1 && H.dim(0) == A.dim(0),
                      "weighted_sum_rows: ", shape_str(H.shape()), " vs ", shape_str(A.shape()));
        const std::size_t rows = H.dim(0), cols = H.dim(1);
        Tensor<T> out(Shape{cols});
        for (std::size_t r = 0; r < rows; ++r) {
            const T a = A[r];
            const T* hr = H.data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) out[j] += a * hr[j];
        }
        return push(std::move(out), make_backward([h, alpha, rows, cols](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            const Tensor<T>& H2 = g.value(h);
            const Tensor<T>& A2 = g.value(alpha);
            Tensor<T>& gh = g.mutable_grad(h);
            Tensor<T>& ga = g.mutable_grad(alpha);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* hr = H2.data() + r * cols;
                T* ghr = gh.data() + r * cols;
                T acc = 0;
                for (std::size_t j = 0; j < cols; ++j) {
                    acc += go[j] * hr[j];
                    ghr[j] += A2[r] * go[j];
                }
                ga[r] += acc;
            }
        }));
    }

    // ---- softmax family --------------------------------------------------

    Var softmax(Var a) {
        const Tensor<T>& x = value(a);
        SEQATTN_CHECK(x.rank() == 1 && x.numel() >= 1, "softmax needs a nonempty vector");
        Tensor<T> out(x.shape());
        softmax_inplace(x.data(), out.data(), x.numel());
        return push(std::move(out), make_backward([a](Graph& g, int self) {
            const Node& n = g.node_at(self);
            Tensor<T>& ga = g.mutable_grad(a);
            T s = 0;
            for (std::size_t i = 0; i < n.value.numel(); ++i) s += n.grad[i] * n.value[i];
            for (std::size_t i = 0; i < n.value.numel(); ++i)
                ga[i] += n.value[i] * (n.grad[i] - s);
        }));
    }

    Var log_softmax(Var a) {
        const Tensor<T>& x = value(a);
        SEQATTN_CHECK(x.rank() == 1 && x.numel() >= 1, "log_softmax needs a nonempty vector");
        Tensor<T> out(x.shape());
        log_softmax_row(x.data(), out.data(), x.numel());
        return push(std::move(out), make_backward([a](Graph& g, int self) {
            const Node& n = g.node_at(self);
            Tensor<T>& ga = g.mutable_grad(a);
            T s = 0;
            for (std::size_t i = 0; i < n.value.numel(); ++i) s += n.grad[i];
            for (std::size_t i = 0; i < n.value.numel(); ++i)
                ga[i] += n.grad[i] - std::exp(n.value[i]) * s;
        }));
    }

    Var log_softmax_rows(Var a) {
        const Tensor<T>& x = value(a);
        SEQATTN_CHECK(x.rank() == 2 && x.dim(1) >= 1, "log_softmax_rows needs a matrix");
        const std::size_t rows = x.dim(0), cols = x.dim(1);
        Tensor<T> out(x.shape());
        for (std::size_t r = 0; r < rows; ++r)
            log_softmax_row(x.data() + r * cols, out.data() + r * cols, cols);
        return push(std::move(out), make_backward([a, rows, cols](Graph& g, int self) {
            const Node& n = g.node_at(self);
            Tensor<T>& ga = g.mutable_grad(a);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = n.value.data() + r * cols;
                const T* gy = n.grad.data() + r * cols;
                T* gx = ga.data() + r * cols;
                T s = 0;
                for (std::size_t j = 0; j < cols; ++j) s += gy[j];
                for (std::size_t j = 0; j < cols; ++j) gx[j] += gy[j] - std::exp(y[j]) * s;
            }
        }));
    }

    // alpha_i = d_i * exp(e_i - max e) / sum_k d_k * exp(e_k - max e).
    // Gate values below the 1e-8 floor only matter when the normalizer
    // degenerates; the floored branch carries zero gradient into d there.
    Var gated_normalize(Var e, Var d, bool* degenerate_out = nullptr) {
        const Tensor<T>& E = value(e);
        const Tensor<T>& D = value(d);
        require_same_shape(e, d, "gated_normalize");
        SEQATTN_CHECK(E.rank() == 1 && E.numel() >= 1, "gated_normalize needs vectors");
        const std::size_t n = E.numel();

        T m = E[0];
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, E[i]);
        std::vector<T> w(n);
        for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(E[i] - m);

        bool floored = false;
        T z = 0;
        for (std::size_t i = 0; i < n; ++i) z += D[i] * w[i];
        if (!(z >= T(1e-30))) {
            floored = true;
            z = 0;
            for (std::size_t i = 0; i < n; ++i) z += std::max(D[i], T(1e-8)) * w[i];
            if (!(z > T(0)) || !std::isfinite(static_cast<double>(z)))
                throw NumericError(detail::format_msg(
                    "gated normalization degenerate even after flooring (z=", z, ")"));
            ++degenerate_;
        }
        if (degenerate_out) *degenerate_out = floored;

        Tensor<T> out(Shape{n});
        T check = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const T di = floored ? std::max(D[i], T(1e-8)) : D[i];
            out[i] = di * w[i] / z;
            check += out[i];
        }
        if (!(std::abs(static_cast<double>(check) - 1.0) <= 1e-6) || !out.all_finite())
            throw NumericError(detail::format_msg(
                "attention weights failed normalization: sum=", check));

        return push(std::move(out),
                    make_backward([e, d, w = std::move(w), z, floored](Graph& g, int self) {
                        const Node& nd = g.node_at(self);
                        const Tensor<T>& D2 = g.value(d);
                        Tensor<T>& ge = g.mutable_grad(e);
                        Tensor<T>& gd = g.mutable_grad(d);
                        const std::size_t len = nd.value.numel();
                        T s = 0;
                        for (std::size_t i = 0; i < len; ++i) s += nd.grad[i] * nd.value[i];
                        for (std::size_t i = 0; i < len; ++i) {
                            const T residual = nd.grad[i] - s;
                            ge[i] += nd.value[i] * residual;
                            if (!floored || D2[i] >= T(1e-8)) gd[i] += (w[i] / z) * residual;
                        }
                    }));
    }

    // ---- maxout -----------------------------------------------------------

    // Pieces stacked in W[k, m, n], b[k, m]; x rank 1 or rank 2 (rows).
    // Ties route the subgradient to the lowest piece index.
    Var maxout(Var x, Var w, Var b) {
        const Tensor<T>& X = value(x);
        const Tensor<T>& W = value(w);
        const Tensor<T>& B = value(b);
        SEQATTN_CHECK(W.rank() == 3 && B.rank() == 2, "maxout parameter ranks: W ",
                      shape_str(W.shape()), " b ", shape_str(B.shape()));
        const std::size_t k = W.dim(0), m = W.dim(1), n = W.dim(2);
        if (k < 2)
            throw ConfigError(detail::format_msg("maxout needs at least 2 pieces, got ", k));
        SEQATTN_CHECK(B.dim(0) == k && B.dim(1) == m, "maxout bias shape ", shape_str(B.shape()));
        const bool vec = X.rank() == 1;
        SEQATTN_CHECK((vec && X.dim(0) == n) || (X.rank() == 2 && X.dim(1) == n),
                      "maxout input shape ", shape_str(X.shape()), " vs weight ",
                      shape_str(W.shape()));
        const std::size_t rows = vec ? 1 : X.dim(0);

        Tensor<T> out(vec ? Shape{m} : Shape{rows, m});
        std::vector<std::uint8_t> argmax(rows * m, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = X.data() + r * n;
            T* yr = out.data() + r * m;
            for (std::size_t p = 0; p < k; ++p) {
                const T* wp = W.data() + p * m * n;
                const T* bp = B.data() + p * m;
                for (std::size_t i = 0; i < m; ++i) {
                    T acc = bp[i];
                    const T* wrow = wp + i * n;
                    for (std::size_t j = 0; j < n; ++j) acc += wrow[j] * xr[j];
                    if (p == 0 || acc > yr[i]) {
                        yr[i] = acc;
                        argmax[r * m + i] = static_cast<std::uint8_t>(p);
                    }
                }
            }
        }
        return push(std::move(out), make_backward([x, w, b, argmax = std::move(argmax), m, n,
                                                   rows](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            const Tensor<T>& X2 = g.value(x);
            const Tensor<T>& W2 = g.value(w);
            Tensor<T>& gx = g.mutable_grad(x);
            Tensor<T>& gw = g.mutable_grad(w);
            Tensor<T>& gb = g.mutable_grad(b);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xr = X2.data() + r * n;
                T* gxr = gx.data() + r * n;
                for (std::size_t i = 0; i < m; ++i) {
                    const T gyi = go[r * m + i];
                    if (gyi == T(0)) continue;
                    const std::size_t p = argmax[r * m + i];
                    const T* wrow = W2.data() + (p * m + i) * n;
                    T* gwrow = gw.data() + (p * m + i) * n;
                    gb[p * m + i] += gyi;
                    for (std::size_t j = 0; j < n; ++j) {
                        gwrow[j] += gyi * xr[j];
                        gxr[j] += gyi * wrow[j];
                    }
                }
            }
        }));
    }

    // ---- attention-specific scalars ----------------------------------------

    // E = sum_i alpha_i * i with 1-based positions; input must lie on the simplex.
    Var expected_position(Var alpha) {
        const Tensor<T>& A = value(alpha);
        SEQATTN_CHECK(A.rank() == 1 && A.numel() >= 1, "expected_position needs a vector");
        check_simplex(A, "expected_position");
        T e = 0;
        for (std::size_t i = 0; i < A.numel(); ++i) e += A[i] * static_cast<T>(i + 1);
        return push(Tensor<T>::scalar(e), make_backward([alpha](Graph& g, int self) {
            const T go = g.node_at(self).grad.value();
            Tensor<T>& ga = g.mutable_grad(alpha);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go * static_cast<T>(i + 1);
        }));
    }

    // offsets[i] = (i+1) - prev_e for i = 0..n-1 (1-based positions).
    Var position_offsets(Var prev_e, std::size_t n) {
        SEQATTN_CHECK(value(prev_e).numel() == 1, "position_offsets takes a scalar");
        const T e = value(prev_e).value();
        Tensor<T> out(Shape{n});
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(i + 1) - e;
        return push(std::move(out), make_backward([prev_e, n](Graph& g, int self) {
            const Tensor<T>& go = g.node_at(self).grad;
            T s = 0;
            for (std::size_t i = 0; i < n; ++i) s += go[i];
            g.mutable_grad(prev_e)[0] -= s;
        }));
    }

    // p = max(0, sum_i (cdf_cur(i) - cdf_prev(i))); the clipped branch has
    // zero gradient (subgradient at the kink assigned to the zero branch).
    Var monotonicity_penalty(Var alpha_prev, Var alpha_cur) {
        const Tensor<T>& P = value(alpha_prev);
        const Tensor<T>& C = value(alpha_cur);
        SEQATTN_CHECK(P.rank() == 1 && C.rank() == 1 && P.numel() == C.numel(),
                      "monotonicity_penalty length mismatch: ", shape_str(P.shape()), " vs ",
                      shape_str(C.shape()));
        check_simplex(P, "monotonicity_penalty(alpha_prev)");
        check_simplex(C, "monotonicity_penalty(alpha_cur)");
        const std::size_t n = P.numel();
        T cdf_prev = 0, cdf_cur = 0, s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            cdf_prev += P[i];
            cdf_cur += C[i];
            s += cdf_cur - cdf_prev;
        }
        const bool active = s > T(0);
        return push(Tensor<T>::scalar(active ? s : T(0)),
                    make_backward([alpha_prev, alpha_cur, n, active](Graph& g, int self) {
                        if (!active) return;
                        const T go = g.node_at(self).grad.value();
                        Tensor<T>& gp = g.mutable_grad(alpha_prev);
                        Tensor<T>& gc = g.mutable_grad(alpha_cur);
                        for (std::size_t i = 0; i < n; ++i) {
                            const T weight = static_cast<T>(n - i);
                            gc[i] += go * weight;
                            gp[i] -= go * weight;
                        }
                    }));
    }

    // ---- backward ------------------------------------------------------------

    // Single-shot: grads accumulate, so replaying twice would double them.
    void backward(Var loss) {
        SEQATTN_CHECK(grads_, "backward() on a gradient-disabled graph");
        SEQATTN_CHECK(value(loss).numel() == 1, "backward() needs a scalar loss");
        mutable_grad(loss)[0] += T(1);
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[static_cast<std::size_t>(i)].backward)
                nodes_[static_cast<std::size_t>(i)].backward(*this, i);
    }

    // Adds scale * node grad into the bound store entries. Called once per
    // utterance by the trainer, in fixed order, after backward().
    void accumulate_param_grads(T scale = T(1)) {
        SEQATTN_CHECK(store_ != nullptr, "no parameter store bound");
        for (const Node& n : nodes_) {
            if (n.param_id < 0) continue;
            auto& e = store_->entry(n.param_id);
            for (std::size_t i = 0; i < e.grad.numel(); ++i) e.grad[i] += scale * n.grad[i];
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(Graph&, int)> backward;
        int param_id = -1;
    };

    Node& node(Var v) {
        SEQATTN_CHECK(v.valid() && v.id < static_cast<int>(nodes_.size()), "invalid graph var");
        return nodes_[static_cast<std::size_t>(v.id)];
    }
    const Node& node(Var v) const {
        SEQATTN_CHECK(v.valid() && v.id < static_cast<int>(nodes_.size()), "invalid graph var");
        return nodes_[static_cast<std::size_t>(v.id)];
    }
    Node& node_at(int id) { return nodes_[static_cast<std::size_t>(id)]; }

    Tensor<T>& mutable_grad(Var v) { return node(v).grad; }

    Var push(Tensor<T> value, std::function<void(Graph&, int)> backward) {
        Node n;
        if (grads_) n.grad = Tensor<T>(value.shape());
        n.value = std::move(value);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    template <typename F>
    std::function<void(Graph&, int)> make_backward(F&& f) {
        if (!grads_) return nullptr;
        return std::function<void(Graph&, int)>(std::forward<F>(f));
    }

    void require_same_shape(Var a, Var b, const char* op) const {
        SEQATTN_CHECK(value(a).same_shape(value(b)), op, ": shape mismatch ",
                      shape_str(value(a).shape()), " vs ", shape_str(value(b).shape()));
    }

    static T stable_sigmoid(T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
    }

    static void softmax_inplace(const T* x, T* y, std::size_t n) {
        T m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
        T z = 0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - m);
            z += y[i];
        }
        for (std::size_t i = 0; i < n; ++i) y[i] /= z;
    }

    static void log_softmax_row(const T* x, T* y, std::size_t n) {
        T m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
        T z = 0;
        for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i] - m);
        const T lz = std::log(z);
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - m - lz;
    }

    static void check_simplex(const Tensor<T>& a, const char* op) {
        double s = 0;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            SEQATTN_CHECK(a[i] >= T(0) && std::isfinite(static_cast<double>(a[i])), op,
                          ": input not on the simplex (entry ", i, " = ", a[i], ")");
            s += static_cast<double>(a[i]);
        }
        SEQATTN_CHECK(std::abs(s - 1.0) <= 1e-6, op, ": input not normalized (sum = ", s, ")");
    }

    std::vector<Node> nodes_;
    std::vector<Var> param_vars_;
    ParamStore<T>* store_;
    bool grads_;
    int degenerate_ = 0;
};

} // namespace seqattn
