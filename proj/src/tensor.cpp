#include "msdiff/tensor.hpp"

#include <cmath>
#include <sstream>

#include "msdiff/error.hpp"

namespace msd {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

static void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
    check_shape(shape);
    auto node = std::make_shared<TensorNode>();
    node->shape = shape;
    node->data.assign(shape_numel(shape), value);
    return Tensor(std::move(node));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
    check_shape(shape);
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in tensor literal");
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = shape;
    node->data = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::size() const { return shape_numel(shape()); }
std::size_t Tensor::rows() const { return shape()[0]; }
std::size_t Tensor::cols() const { return size() / rows(); }

std::span<const double> Tensor::data() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

std::span<const double> Tensor::grad() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
    if (!node_) return;
    node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!node_) throw ContractError("use of undefined tensor");
    node_->requires_grad = on;
    return *this;
}

Tensor Tensor::clone() const {
    auto node = std::make_shared<TensorNode>();
    node->shape = shape();
    node->data = node_->data;
    return Tensor(std::move(node));
}

Tensor Tensor::reshape(const Shape& new_shape) const {
    check_shape(new_shape);
    if (shape_numel(new_shape) != size()) {
        throw ShapeError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
    }
    return make_result("reshape", new_shape, node_->data, {*this}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(TensorNode&)> backward) {
    for (double v : data) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool track = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            if (p.requires_grad()) {
                track = true;
                break;
            }
        }
    }
    if (track) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

}  // namespace msd
