#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "slidealign/error.hpp"
#include "slidealign/tensor.hpp"

namespace sa {

// Trainable tensor with a persistent gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad.fill(0.0); }
};

// Owning, insertion-ordered parameter collection. Insertion order is the
// canonical order for initialization draws, optimizer state and checkpoints.
class ParamStore {
public:
    Parameter* add(std::string name, Tensor value) {
        require(find(name) == nullptr, ErrKind::contract, "duplicate parameter name: " + name);
        items_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
        return items_.back().get();
    }

    Parameter* find(std::string_view name) {
        for (auto& p : items_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    const Parameter* find(std::string_view name) const {
        return const_cast<ParamStore*>(this)->find(name);
    }

    size_t size() const { return items_.size(); }
    Parameter* at(size_t i) { return items_[i].get(); }
    const Parameter* at(size_t i) const { return items_[i].get(); }

    std::vector<Parameter*> all() {
        std::vector<Parameter*> out;
        out.reserve(items_.size());
        for (auto& p : items_) out.push_back(p.get());
        return out;
    }

    int64_t total_size() const {
        int64_t n = 0;
        for (auto& p : items_) n += p->value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : items_) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Parameter>> items_;
};

}  // namespace sa
