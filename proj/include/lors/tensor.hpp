#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lors {

using Shape = std::vector<int>;

/// Shape/dimension mismatch between operands. Messages name both shapes.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Out-of-range layer or element index.
class IndexError : public std::runtime_error {
public:
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API contract violation (e.g. backward from a non-scalar loss).
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid model or experiment configuration.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) {
        if (e < 0) throw ShapeError("negative extent in shape " + shape_str(s));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

/// One recorded op (or leaf) in a dynamic computation graph. Values are
/// 64-bit floats in row-major order.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily, same length as data
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    // Accumulates d(loss)/d(parent) into each parent's grad, given this
    // node's grad. Empty for leaves and for nodes recorded with autodiff off.
    std::function<void(TensorNode&)> backprop;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }
};

/// Value-semantics handle onto a shared tensor node. Copies alias the same
/// storage; ops return fresh nodes, so results behave as independent values.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->data.assign(shape_numel(shape), 0.0);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<double> values,
                            bool requires_grad = false) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        }
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::size_t numel() const { return node_->data.size(); }
    int extent(int axis) const {
        int r = rank();
        if (axis < 0) axis += r;
        if (axis < 0 || axis >= r) {
            throw IndexError("axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(shape()));
        }
        return node_->shape[static_cast<std::size_t>(axis)];
    }

    std::vector<double>& data() & { return node_->data; }
    const std::vector<double>& data() const& { return node_->data; }
    // Copies out of a temporary handle so `f().data()` cannot dangle.
    std::vector<double> data() && { return node_->data; }
    std::vector<double>& grad() & { return node_->grad; }
    const std::vector<double>& grad() const& { return node_->grad; }
    std::vector<double> grad() && { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    double value() const {
        if (numel() != 1) {
            throw ContractError("value() on tensor of shape " + shape_str(shape()));
        }
        return node_->data[0];
    }

    double at(std::initializer_list<int> idx) const { return node_->data[flat_index(idx)]; }
    double& at(std::initializer_list<int> idx) { return node_->data[flat_index(idx)]; }

    void zero_grad() { node_->zero_grad(); }

    const NodePtr& node() const { return node_; }

    /// Deep copy of shape+data only; the copy is a fresh leaf.
    Tensor clone() const {
        auto n = std::make_shared<TensorNode>();
        n->shape = node_->shape;
        n->data = node_->data;
        n->requires_grad = node_->requires_grad;
        return Tensor(std::move(n));
    }

private:
    std::size_t flat_index(std::initializer_list<int> idx) const {
        const Shape& s = node_->shape;
        if (idx.size() != s.size()) {
            throw IndexError("index rank " + std::to_string(idx.size()) +
                             " does not match shape " + shape_str(s));
        }
        std::size_t flat = 0;
        std::size_t d = 0;
        for (int i : idx) {
            if (i < 0 || i >= s[d]) {
                throw IndexError("index " + std::to_string(i) + " out of range at axis " +
                                 std::to_string(d) + " of shape " + shape_str(s));
            }
            flat = flat * static_cast<std::size_t>(s[d]) + static_cast<std::size_t>(i);
            ++d;
        }
        return flat;
    }

    NodePtr node_;
};

}  // namespace lors
