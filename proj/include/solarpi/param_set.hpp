#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "solarpi/tensor.hpp"

namespace solarpi {

/// Named trainable tensors with a stable flattening order (registration
/// order). flatten()/unflatten() form a bijection onto one gradient-sized
/// vector.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    void add(std::string name, Tensor t) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        index_[name] = entries_.size();
        offsets_.push_back(total_);
        total_ += t.size();
        entries_.push_back(Entry{std::move(name), std::move(t)});
    }

    size_t count() const { return entries_.size(); }
    int64_t total_size() const { return total_; }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return entries_[it->second].tensor;
    }
    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return entries_[it->second].tensor;
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return it->second;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(static_cast<size_t>(total_));
        for (const Entry& e : entries_)
            out.insert(out.end(), e.tensor.values.begin(), e.tensor.values.end());
        return out;
    }

    void unflatten(std::span<const double> flat) {
        if (static_cast<int64_t>(flat.size()) != total_)
            throw std::invalid_argument("unflatten: length mismatch");
        size_t pos = 0;
        for (Entry& e : entries_) {
            std::copy_n(flat.data() + pos, e.tensor.values.size(), e.tensor.values.data());
            pos += e.tensor.values.size();
        }
    }

    double get_flat(int64_t i) const {
        auto [e, off] = locate(i);
        return entries_[e].tensor[off];
    }
    void set_flat(int64_t i, double v) {
        auto [e, off] = locate(i);
        entries_[e].tensor[off] = v;
    }

    /// Name and intra-tensor offset of a flat coordinate (for diagnostics).
    std::string describe_coord(int64_t i) const {
        auto [e, off] = locate(i);
        return entries_[e].name + "[" + std::to_string(off) + "]";
    }

private:
    std::pair<size_t, int64_t> locate(int64_t i) const {
        if (i < 0 || i >= total_) throw std::out_of_range("flat index out of range");
        size_t lo = 0, hi = offsets_.size();
        while (hi - lo > 1) {
            size_t mid = (lo + hi) / 2;
            if (offsets_[mid] <= i)
                lo = mid;
            else
                hi = mid;
        }
        return {lo, i - offsets_[lo]};
    }

    std::vector<Entry> entries_;
    std::vector<int64_t> offsets_;
    std::map<std::string, size_t> index_;
    int64_t total_ = 0;
};

}  // namespace solarpi
