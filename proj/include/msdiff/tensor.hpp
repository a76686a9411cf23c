#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// One vertex of the recorded computation. `backward` reads this node's grad and
// accumulates into the grads of `parents`.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;
};

/// Dense row-major f64 array with optional reverse-mode gradient tracking.
///
/// Tensor is a shared handle: copies alias the same storage. Use `clone()` for
/// an independent leaf copy. Operations live in ops.hpp.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor from(const Shape& shape, std::vector<double> values);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    // Matrix view used by most ops: rows = shape[0], cols = size / rows.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    std::span<const double> grad() const;
    bool has_grad() const;
    void zero_grad();

    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);

    /// Independent leaf with the same values and no graph history.
    Tensor clone() const;
    /// Same values, new shape (element count must match). Differentiable.
    Tensor reshape(const Shape& shape) const;

    const std::shared_ptr<TensorNode>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<TensorNode> node_;
};

/// Thread-local switch for graph recording. Inference paths disable it so that
/// no parent links are kept alive.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds an op result. Records `parents` and `backward` only when grad mode is
// on and at least one parent requires grad. Throws NumericError naming `op` if
// any output value is non-finite.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, std::function<void(TensorNode&)> backward);

}  // namespace msd
