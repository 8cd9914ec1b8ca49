// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference check of the tape gradients. The loss builder
// must be a pure function of the store values; it is re-run twice per
// trainable scalar with that scalar perturbed by +/-eps.

#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "seqattn/graph.hpp"
#include "seqattn/param_store.hpp"

namespace seqattn {

template <typename T>
struct GradReport {
    struct Item {
        std::string name;
        T max_rel_err = 0;
        bool pass = true;
    };
    std::vector<Item> items; // one per trainable entry
    T max_rel_err = 0;
    T eps = 0;
    T tol = 0;
    bool pass = true;

    std::string summary() const {
        std::ostringstream os;
        os << (pass ? "PASS" : "FAIL") << " gradcheck: max relative error " << max_rel_err
           << " (tol " << tol << ", eps " << eps << ")\n";
        for (const auto& it : items)
            os << "  " << (it.pass ? "ok   " : "FAIL ") << it.name << "  " << it.max_rel_err
               << "\n";
        return os.str();
    }
};

template <typename T>
GradReport<T> gradcheck(ParamStore<T>& store,
                        const std::function<Var(Graph<T>&)>& build_loss, T eps = T(1e-5),
                        T tol = T(1e-4), T floor = T(1e-6)) {
    auto eval = [&]() -> T {
        Graph<T> g(&store, /*enable_grads=*/false);
        Var loss = build_loss(g);
        SEQATTN_CHECK(g.value(loss).numel() == 1, "gradcheck loss must be scalar");
        return g.value(loss).value();
    };

    // analytic gradients
    store.zero_grads();
    {
        Graph<T> g(&store, /*enable_grads=*/true);
        Var loss = build_loss(g);
        SEQATTN_CHECK(g.value(loss).numel() == 1, "gradcheck loss must be scalar");
        if (!std::isfinite(static_cast<double>(g.value(loss).value())))
            throw NumericError("gradcheck: loss is not finite at the unperturbed point");
        g.backward(loss);
        g.accumulate_param_grads();
    }

    GradReport<T> report;
    report.eps = eps;
    report.tol = tol;
    for (auto& e : store.entries()) {
        if (!e.trainable) continue; // frozen entries are excluded from the report
        typename GradReport<T>::Item item;
        item.name = e.name;
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
            const T orig = e.value[i];
            e.value[i] = orig + eps;
            const T lp = eval();
            e.value[i] = orig - eps;
            const T lm = eval();
            e.value[i] = orig;
            if (!std::isfinite(static_cast<double>(lp)) ||
                !std::isfinite(static_cast<double>(lm)))
                throw NumericError(detail::format_msg(
                    "gradcheck: non-finite loss while perturbing ", e.name, "[", i, "]"));
            const T numeric = (lp - lm) / (T(2) * eps);
            const T analytic = e.grad[i];
            const T denom =
                std::max(std::max(std::abs(analytic), std::abs(numeric)), floor);
            const T rel = std::abs(analytic - numeric) / denom;
            item.max_rel_err = std::max(item.max_rel_err, rel);
        }
        item.pass = item.max_rel_err <= tol;
        report.max_rel_err = std::max(report.max_rel_err, item.max_rel_err);
        report.pass = report.pass && item.pass;
        report.items.push_back(std::move(item));
    }
    return report;
}

} // namespace seqattn
