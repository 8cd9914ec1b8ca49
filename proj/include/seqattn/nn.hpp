// SPDX-License-Identifier: Apache-2.0
//
// Shared network building blocks: initializers and the reset-update gated
// recurrent step used by both the encoder and the decoder.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "seqattn/graph.hpp"
#include "seqattn/param_store.hpp"
#include "seqattn/rng.hpp"
#include "seqattn/tensor.hpp"

namespace seqattn {

template <typename T>
Tensor<T> gaussian_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(stddev * rng.normal());
    return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Fan-in scaled Gaussian for dense weights.
template <typename T>
Tensor<T> dense_init(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
    return gaussian_tensor<T>(Shape{out_dim, in_dim}, 1.0 / std::sqrt(double(in_dim)), rng);
}

// Orthonormalization of a random Gaussian matrix via modified Gram-Schmidt
// with one reorthogonalization pass. Q^T Q = I to well below 1e-10.
template <typename T>
Tensor<T> orthonormal_init(std::size_t n, Rng& rng) {
    SEQATTN_CHECK(n >= 1, "orthonormal_init needs n >= 1");
    // columns of A orthonormalized in place
    std::vector<std::vector<double>> cols(n, std::vector<double>(n));
    for (auto& c : cols)
        for (double& v : c) v = rng.normal();
    for (std::size_t j = 0; j < n; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < j; ++k) {
                double dot = 0;
                for (std::size_t i = 0; i < n; ++i) dot += cols[j][i] * cols[k][i];
                for (std::size_t i = 0; i < n; ++i) cols[j][i] -= dot * cols[k][i];
            }
        }
        double norm = 0;
        for (std::size_t i = 0; i < n; ++i) norm += cols[j][i] * cols[j][i];
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            // astronomically unlikely rank collapse of a Gaussian draw;
            // replace with a fresh unit vector and redo this column
            for (double& v : cols[j]) v = rng.normal();
            --j;
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) cols[j][i] /= norm;
    }
    Tensor<T> q(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) q.at(i, j) = static_cast<T>(cols[j][i]);
    return q;
}

// Reset-update gate parameters (Cho et al. update rule). The recurrent
// matrices Uz/Ur/U are orthonormalized at init.
struct GruParamNames {
    std::string Wz, Uz, bz, Wr, Ur, br, W, U, b;

    static GruParamNames under(const std::string& prefix) {
        return {prefix + ".Wz", prefix + ".Uz", prefix + ".bz",
                prefix + ".Wr", prefix + ".Ur", prefix + ".br",
                prefix + ".W",  prefix + ".U",  prefix + ".b"};
    }
};

template <typename T>
void add_gru_params(ParamStore<T>& store, const GruParamNames& names, std::size_t hidden,
                    std::size_t input, Rng& rng) {
    store.add(names.Wz, dense_init<T>(hidden, input, rng));
    store.add(names.Uz, orthonormal_init<T>(hidden, rng));
    store.add(names.bz, Tensor<T>(Shape{hidden}));
    store.add(names.Wr, dense_init<T>(hidden, input, rng));
    store.add(names.Ur, orthonormal_init<T>(hidden, rng));
    store.add(names.br, Tensor<T>(Shape{hidden}));
    store.add(names.W, dense_init<T>(hidden, input, rng));
    store.add(names.U, orthonormal_init<T>(hidden, rng));
    store.add(names.b, Tensor<T>(Shape{hidden}));
}

// Graph-bound handles for one gate parameter set.
struct GruVars {
    Var Wz, Uz, bz, Wr, Ur, br, W, U, b;
};

template <typename T>
GruVars bind_gru(Graph<T>& g, const GruParamNames& names) {
    return {g.param(names.Wz), g.param(names.Uz), g.param(names.bz),
            g.param(names.Wr), g.param(names.Ur), g.param(names.br),
            g.param(names.W),  g.param(names.U),  g.param(names.b)};
}

// One gated recurrence step:
//   z = sigmoid(Wz u + Uz s + bz)
//   r = sigmoid(Wr u + Ur s + br)
//   cand = tanh(W u + U (r . s) + b)
//   s' = (1 - z) . s + z . cand
template <typename T>
Var gated_step(Graph<T>& g, Var s_prev, Var u, const GruVars& p) {
    Var z = g.sigmoid(g.add(g.affine(p.Wz, u, p.bz), g.matvec(p.Uz, s_prev)));
    Var r = g.sigmoid(g.add(g.affine(p.Wr, u, p.br), g.matvec(p.Ur, s_prev)));
    Var cand = g.tanh(g.add(g.affine(p.W, u, p.b), g.matvec(p.U, g.mul(r, s_prev))));
    return g.add(g.mul(g.one_minus(z), s_prev), g.mul(z, cand));
}

} // namespace seqattn
