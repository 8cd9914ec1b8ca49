// SPDX-License-Identifier: Apache-2.0
//
// AdaDelta with the adaptive gradient-norm clipping rule. Clipping tracks
// running means of log ||g|| (Elog with a warm-up decay min(rho, n/(n+1)),
// Elog2 with plain rho) and rescales the gradient to norm exp(Elog) whenever
// ||g|| exceeds exp(Elog + kappa * std). Accumulators update before the
// comparison; the first step therefore never rescales when grad_scale is 1.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "seqattn/param_store.hpp"

namespace seqattn {

template <typename T>
struct ClipState {
    T elog = 0;
    T elog2 = 0;
    std::uint64_t nsteps = 0;
    T rho_clip = T(0.99);
    T kappa = T(1);
    T grad_scale = T(1);
};

template <typename T>
struct ClipResult {
    T scaled_norm = 0;   // ||g|| after grad_scale, before any rescaling
    T output_norm = 0;   // ||rg||
    T threshold = 0;
    bool rescaled = false;
};

// In-place on the flat gradient vector. A zero-norm gradient skips the
// accumulator update (log undefined) but still counts as a step.
template <typename T>
ClipResult<T> adaptive_clip(std::vector<T>& grad, ClipState<T>& clip) {
    for (T& v : grad) v *= clip.grad_scale;
    double sq = 0;
    for (const T& v : grad) {
        SEQATTN_CHECK(std::isfinite(static_cast<double>(v)), "adaptive_clip: non-finite gradient");
        sq += static_cast<double>(v) * static_cast<double>(v);
    }
    const T ng = static_cast<T>(std::sqrt(sq));

    ClipResult<T> result;
    result.scaled_norm = ng;
    if (ng == T(0)) {
        ++clip.nsteps;
        return result;
    }

    const T log_ng = std::log(ng);
    const T warm = static_cast<T>(static_cast<double>(clip.nsteps) /
                                  static_cast<double>(clip.nsteps + 1));
    const T decay_mean = std::min(clip.rho_clip, warm);
    // incremental form of d*e + (1-d)*x: exact at the fixed point, so a
    // constant gradient norm keeps elog == log(ng) to the last bit
    clip.elog += (T(1) - decay_mean) * (log_ng - clip.elog);
    clip.elog2 += (T(1) - clip.rho_clip) * (log_ng * log_ng - clip.elog2);

    const T variance = std::max(T(0), clip.elog2 - clip.elog * clip.elog);
    // compare in log space: equivalent, and immune to exp(log(ng)) rounding
    // one ulp below ng on the boundary cases
    const T log_threshold = clip.elog + clip.kappa * std::sqrt(variance);
    result.threshold = std::exp(log_threshold);
    if (log_ng <= log_threshold) {
        result.output_norm = ng;
    } else {
        result.rescaled = true;
        const T factor = std::exp(clip.elog - log_ng);
        for (T& v : grad) v *= factor;
        double rsq = 0;
        for (const T& v : grad) rsq += static_cast<double>(v) * static_cast<double>(v);
        result.output_norm = static_cast<T>(std::sqrt(rsq));
    }
    ++clip.nsteps;
    return result;
}

// Standard AdaDelta (accumulate E[g^2], update, accumulate E[dx^2]).
// Accumulator tensors mirror the store entries; frozen entries are skipped
// entirely so their state stays zero through a frozen stage.
template <typename T>
class AdaDeltaOptimizer {
public:
    AdaDeltaOptimizer(ParamStore<T>& store, T rho, T eps, ClipState<T> clip)
        : store_(&store), rho_(rho), eps_(eps), clip_(clip) {
        for (const auto& e : store.entries()) {
            eg2_.push_back(zeros_like(e.value));
            edx2_.push_back(zeros_like(e.value));
        }
    }

    ClipState<T>& clip() { return clip_; }
    const ClipState<T>& clip() const { return clip_; }
    T rho() const { return rho_; }
    T eps() const { return eps_; }
    std::vector<Tensor<T>>& eg2() { return eg2_; }
    std::vector<Tensor<T>>& edx2() { return edx2_; }
    const std::vector<Tensor<T>>& eg2() const { return eg2_; }
    const std::vector<Tensor<T>>& edx2() const { return edx2_; }

    // Consumes the gradients currently held by the store (averaged by the
    // caller), returns clipping telemetry for the metrics log.
    ClipResult<T> step() {
        auto& entries = store_->entries();
        std::vector<T> flat;
        flat.reserve(store_->trainable_scalar_count());
        for (const auto& e : entries)
            if (e.trainable)
                for (std::size_t i = 0; i < e.grad.numel(); ++i) flat.push_back(e.grad[i]);

        ClipResult<T> result = adaptive_clip(flat, clip_);

        std::size_t pos = 0;
        for (std::size_t idx = 0; idx < entries.size(); ++idx) {
            auto& e = entries[idx];
            if (!e.trainable) continue;
            Tensor<T>& g2 = eg2_[idx];
            Tensor<T>& dx2 = edx2_[idx];
            for (std::size_t i = 0; i < e.value.numel(); ++i, ++pos) {
                const T g = flat[pos];
                g2[i] = rho_ * g2[i] + (T(1) - rho_) * g * g;
                const T dx = -std::sqrt(dx2[i] + eps_) / std::sqrt(g2[i] + eps_) * g;
                dx2[i] = rho_ * dx2[i] + (T(1) - rho_) * dx * dx;
                e.value[i] += dx;
            }
        }
        return result;
    }

private:
    ParamStore<T>* store_;
    T rho_;
    T eps_;
    ClipState<T> clip_;
    std::vector<Tensor<T>> eg2_;
    std::vector<Tensor<T>> edx2_;
};

} // namespace seqattn
