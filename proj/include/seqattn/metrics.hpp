// SPDX-License-Identifier: Apache-2.0
//
// Levenshtein scoring with unit costs. The S/I/D decomposition breaks ties
// preferring substitution over insertion over deletion; the total distance
// itself is tie-free. Corpus rates pool counts over utterances (totals ratio,
// not a mean of per-utterance rates).

#pragma once

#include <limits>
#include <string>
#include <vector>

#include "seqattn/common.hpp"

namespace seqattn {

struct EvalReport {
    std::size_t substitutions = 0;
    std::size_t insertions = 0;
    std::size_t deletions = 0;
    std::size_t ref_token_count = 0;
    double error_rate = 0.0;

    std::size_t total_errors() const { return substitutions + insertions + deletions; }

    void finalize() {
        if (ref_token_count == 0)
            error_rate = total_errors() == 0 ? 0.0 : std::numeric_limits<double>::infinity();
        else
            error_rate = double(total_errors()) / double(ref_token_count);
    }
};

inline EvalReport edit_distance(const std::vector<std::string>& ref,
                                const std::vector<std::string>& hyp) {
    const std::size_t n = ref.size(), m = hyp.size();
    struct Cell {
        std::size_t cost = 0;
        std::size_t s = 0, i = 0, d = 0;
    };
    std::vector<Cell> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, 0, j, 0};

    for (std::size_t r = 1; r <= n; ++r) {
        cur[0] = {r, 0, 0, r};
        for (std::size_t j = 1; j <= m; ++j) {
            const bool match = ref[r - 1] == hyp[j - 1];
            // candidates in tie-break preference order
            Cell diag = prev[j - 1];
            diag.cost += match ? 0 : 1;
            if (!match) ++diag.s;
            Cell ins = cur[j - 1];
            ++ins.cost;
            ++ins.i;
            Cell del = prev[j];
            ++del.cost;
            ++del.d;

            Cell best = diag;
            if (ins.cost < best.cost) best = ins;
            if (del.cost < best.cost) best = del;
            cur[j] = best;
        }
        std::swap(prev, cur);
    }

    EvalReport report;
    report.substitutions = prev[m].s;
    report.insertions = prev[m].i;
    report.deletions = prev[m].d;
    report.ref_token_count = n;
    report.finalize();
    return report;
}

inline EvalReport corpus_error_rate(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& refs,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& hyps) {
    SEQATTN_DATA_CHECK(refs.size() == hyps.size(), "corpus scoring: ", refs.size(),
                       " references vs ", hyps.size(), " hypotheses");
    EvalReport pooled;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        SEQATTN_DATA_CHECK(refs[i].first == hyps[i].first, "corpus scoring: id mismatch at ", i,
                           ": '", refs[i].first, "' vs '", hyps[i].first, "'");
        const EvalReport r = edit_distance(refs[i].second, hyps[i].second);
        pooled.substitutions += r.substitutions;
        pooled.insertions += r.insertions;
        pooled.deletions += r.deletions;
        pooled.ref_token_count += r.ref_token_count;
    }
    pooled.finalize();
    return pooled;
}

} // namespace seqattn
