// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "seqattn/common.hpp"
#include "seqattn/tensor.hpp"

namespace seqattn {

// Selective weight-decay groups. Assignment is fixed when an entry is added:
// the output MLP weights and the frame-scorer weights carry decay, biases and
// everything else do not.
enum class DecayGroup { none, output_mlp, scorer };

inline const char* decay_group_name(DecayGroup g) {
    switch (g) {
        case DecayGroup::output_mlp: return "output_mlp";
        case DecayGroup::scorer: return "scorer";
        default: return "none";
    }
}

// Named parameter store. Entry order is insertion order and is load-bearing:
// the clip-norm concatenation, checkpoint blob layout and gradcheck reports
// all follow it.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
        bool trainable = true;
        DecayGroup group = DecayGroup::none;
    };

    int add(const std::string& name, Tensor<T> value, bool trainable = true,
            DecayGroup group = DecayGroup::none) {
        SEQATTN_CHECK(index_.find(name) == index_.end(), "duplicate parameter name: ", name);
        Entry e;
        e.name = name;
        e.grad = zeros_like(value);
        e.value = std::move(value);
        e.trainable = trainable;
        e.group = group;
        entries_.push_back(std::move(e));
        const int id = static_cast<int>(entries_.size()) - 1;
        index_.emplace(name, id);
        return id;
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    int id_of(const std::string& name) const {
        auto it = index_.find(name);
        SEQATTN_CHECK(it != index_.end(), "unknown parameter: ", name);
        return it->second;
    }

    Entry& entry(int id) { return entries_[static_cast<std::size_t>(id)]; }
    const Entry& entry(int id) const { return entries_[static_cast<std::size_t>(id)]; }
    Entry& entry(const std::string& name) { return entries_[static_cast<std::size_t>(id_of(name))]; }
    const Entry& entry(const std::string& name) const {
        return entries_[static_cast<std::size_t>(id_of(name))];
    }

    Tensor<T>& value(const std::string& name) { return entry(name).value; }
    const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
    Tensor<T>& grad(const std::string& name) { return entry(name).grad; }

    std::size_t size() const { return entries_.size(); }
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    void zero_grads() {
        for (auto& e : entries_) e.grad.fill(T(0));
    }

    void set_trainable(const std::string& name, bool trainable) {
        entry(name).trainable = trainable;
    }

    std::size_t trainable_scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.value.numel();
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

} // namespace seqattn
