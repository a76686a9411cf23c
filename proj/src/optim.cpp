#include "msdiff/optim.hpp"

#include <cmath>
#include <unordered_map>

#include "msdiff/error.hpp"

namespace msd {

Tensor& ParamStore::add(const std::string& name, Tensor value, ParamGroup group) {
    if (params_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    value.set_requires_grad(true);
    groups_[name] = group;
    return params_[name] = std::move(value);
}

Tensor& ParamStore::add_gaussian(const std::string& name, const Shape& shape, std::size_t fan_in,
                                 ParamGroup group, Rng& rng) {
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std_dev * rng.normal();
    return add(name, Tensor::from(shape, std::move(values)), group);
}

Tensor& ParamStore::add_constant(const std::string& name, const Shape& shape, double value, ParamGroup group) {
    return add(name, Tensor::full(shape, value), group);
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

ParamGroup ParamStore::group(const std::string& name) const {
    auto it = groups_.find(name);
    if (it == groups_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParamStore::numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
}

std::size_t ParamStore::numel(ParamGroup g) const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_)
        if (groups_.at(name) == g) n += t.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
}

void ParamStore::copy_values_from(const ParamStore& other, std::function<bool(const std::string&)> filter) {
    for (auto& [name, t] : params_) {
        if (filter && !filter(name)) continue;
        auto it = other.params_.find(name);
        if (it == other.params_.end()) continue;
        if (it->second.shape() != t.shape()) {
            throw ShapeError("parameter '" + name + "' has shape " + shape_str(t.shape()) + " but source has " +
                             shape_str(it->second.shape()));
        }
        auto src = it->second.data();
        std::copy(src.begin(), src.end(), t.mutable_data().begin());
    }
}

ParamStore ParamStore::deep_copy() const {
    ParamStore out;
    for (const auto& [name, t] : params_) out.add(name, t.clone(), groups_.at(name));
    out.step_ = step_;
    return out;
}

void backward(const Tensor& loss, ParamStore& params) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward: loss must be a scalar tensor, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    for (auto& [_, t] : params.params_) {
        if (!t.has_grad()) t.zero_grad();
    }
    if (!loss.requires_grad()) return;

    // Iterative DFS post-order; a grey node reached again means a cycle.
    std::vector<TensorNode*> order;
    std::unordered_map<TensorNode*, int> state;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    state[loss.node().get()] = 1;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (!p->requires_grad) continue;
            int& s = state[p];
            if (s == 1) throw InternalError("backward: cycle in computation graph");
            if (s == 0) {
                s = 1;
                stack.emplace_back(p, 0);
            }
            continue;
        }
        state[node] = 2;
        order.push_back(node);
        stack.pop_back();
    }

    for (TensorNode* n : order) {
        if (n->parents.empty()) {
            if (n->grad.size() != n->data.size()) n->grad.assign(n->data.size(), 0.0);
        } else {
            n->grad.assign(n->data.size(), 0.0);
        }
    }
    TensorNode* root = loss.node().get();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward) n->backward(*n);
    }
    // Release intermediate grad buffers; leaves keep theirs.
    for (TensorNode* n : order) {
        if (!n->parents.empty()) std::vector<double>().swap(n->grad);
    }
}

void Adam::step(ParamStore& params, double learning_rate, const std::function<bool(const std::string&)>& trainable) {
    const std::uint64_t t = params.step_ + 1;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t));
    for (auto& [name, p] : params.params_) {
        if (trainable && !trainable(name)) continue;
        if (!p.has_grad()) throw ContractError("optimizer_step: parameter '" + name + "' has no gradient");
    }
    for (auto& [name, p] : params.params_) {
        if (trainable && !trainable(name)) continue;
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        auto g = p.grad();
        auto w = p.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= learning_rate * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
    params.step_ = t;
    params.zero_grad();
}

}  // namespace msd
