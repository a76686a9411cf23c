#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msdiff/rng.hpp"
#include "msdiff/tensor.hpp"

namespace msd {

class ParamStore;
void backward(const Tensor& loss, ParamStore& params);

// Base parameters stand in for the pre-trained diffusion model; adapter
// parameters are the ones trained while the base is frozen.
enum class ParamGroup { base, adapter };

/// Named model parameters plus the optimizer step counter. Iteration order is
/// lexicographic by name, which fixes every traversal that touches the store.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor value, ParamGroup group);
    // Gaussian init with std 1/sqrt(fan_in).
    Tensor& add_gaussian(const std::string& name, const Shape& shape, std::size_t fan_in, ParamGroup group, Rng& rng);
    Tensor& add_constant(const std::string& name, const Shape& shape, double value, ParamGroup group);

    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    ParamGroup group(const std::string& name) const;

    const std::map<std::string, Tensor>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }
    std::size_t numel() const;
    std::size_t numel(ParamGroup group) const;

    void zero_grad();
    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t s) { step_ = s; }

    // Overwrite values of every parameter present in both stores.
    void copy_values_from(const ParamStore& other, std::function<bool(const std::string&)> filter = {});
    ParamStore deep_copy() const;

private:
    friend class Adam;
    friend void backward(const Tensor& loss, ParamStore& params);
    std::map<std::string, Tensor> params_;
    std::map<std::string, ParamGroup> groups_;
    std::uint64_t step_ = 0;
};

/// Reverse-mode sweep from a scalar loss. Parameter grads accumulate; every
/// parameter in `params` ends up with an allocated grad buffer.
void backward(const Tensor& loss, ParamStore& params);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// One update of every parameter accepted by `trainable` (all when empty).
    /// Increments the step counter and zeroes all grads afterwards.
    void step(ParamStore& params, double learning_rate,
              const std::function<bool(const std::string&)>& trainable = {});

private:
    AdamConfig config_;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

}  // namespace msd
