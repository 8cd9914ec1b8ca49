// SPDX-License-Identifier: Apache-2.0
//
// Length-bucketed minibatching: reshuffle, split into consecutive groups of
// up to group_size, sort each group by frame count, emit batches of
// batch_size. Keeps utterances of similar length together without a global
// sort.

#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "seqattn/common.hpp"
#include "seqattn/rng.hpp"

namespace seqattn {

struct Batch {
    std::vector<std::size_t> indices;
};

inline std::vector<Batch> make_batches(std::size_t n_items,
                                       const std::function<std::size_t(std::size_t)>& frame_count,
                                       Rng& rng, std::size_t group_size = 32,
                                       std::size_t batch_size = 4) {
    SEQATTN_CHECK(n_items > 0, "make_batches over an empty dataset");
    SEQATTN_CHECK(group_size >= 1 && batch_size >= 1, "group/batch sizes must be positive");

    std::vector<std::size_t> order(n_items);
    for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
    for (std::size_t i = n_items; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }

    for (std::size_t start = 0; start < n_items; start += group_size) {
        const std::size_t end = std::min(start + group_size, n_items);
        std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::size_t a, std::size_t b) {
                             return frame_count(a) < frame_count(b);
                         });
    }

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < n_items; start += batch_size) {
        const std::size_t end = std::min(start + batch_size, n_items);
        Batch b;
        b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
        batches.push_back(std::move(b));
    }
    return batches;
}

} // namespace seqattn
