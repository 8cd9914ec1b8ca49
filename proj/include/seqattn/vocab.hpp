// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqattn/common.hpp"

namespace seqattn {

// Symbol table with reserved markers. BOS is never emitted; EOS terminates
// every target. The on-disk vocabulary file lists content symbols only, one
// per line, in index order; the markers are implicit.
class Vocabulary {
public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kContentStart = 2;

    Vocabulary() = default;

    static Vocabulary from_content(std::vector<std::string> content) {
        SEQATTN_DATA_CHECK(!content.empty(), "vocabulary needs at least one content symbol");
        Vocabulary v;
        v.symbols_ = {"<bos>", "<eos>"};
        for (auto& s : content) {
            SEQATTN_DATA_CHECK(!s.empty(), "empty vocabulary symbol");
            v.symbols_.push_back(std::move(s));
        }
        for (std::size_t i = 0; i < v.symbols_.size(); ++i) {
            SEQATTN_DATA_CHECK(v.index_.emplace(v.symbols_[i], static_cast<int>(i)).second,
                               "duplicate vocabulary symbol: ", v.symbols_[i]);
        }
        return v;
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        SEQATTN_DATA_CHECK(in.good(), "cannot open vocabulary file: ", path);
        std::vector<std::string> content;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) content.push_back(line);
        }
        return from_content(std::move(content));
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        SEQATTN_DATA_CHECK(out.good(), "cannot write vocabulary file: ", path);
        for (std::size_t i = kContentStart; i < symbols_.size(); ++i)
            out << symbols_[i] << "\n";
    }

    std::size_t size() const { return symbols_.size(); }
    std::size_t content_size() const { return symbols_.size() - kContentStart; }

    bool contains_symbol(const std::string& symbol) const { return index_.count(symbol) > 0; }

    int id_of(const std::string& symbol) const {
        auto it = index_.find(symbol);
        SEQATTN_DATA_CHECK(it != index_.end(), "symbol not in vocabulary: ", symbol);
        return it->second;
    }

    const std::string& name(int id) const {
        SEQATTN_CHECK(id >= 0 && id < static_cast<int>(symbols_.size()), "token id ", id,
                      " out of range");
        return symbols_[static_cast<std::size_t>(id)];
    }

    bool is_content(int id) const { return id >= kContentStart && id < static_cast<int>(size()); }

    std::vector<std::string> content_symbols() const {
        return {symbols_.begin() + kContentStart, symbols_.end()};
    }

    bool operator==(const Vocabulary& o) const { return symbols_ == o.symbols_; }

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> index_;
};

} // namespace seqattn
