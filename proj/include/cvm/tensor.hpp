#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cvm/error.hpp"

namespace cvm {

using Shape = std::vector<int>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;        // empty until needed
    bool requires_grad = false; // leaf flag, set by the user
    bool from_op = false;       // produced by a taped operation

    TensorNode() = default;
    explicit TensorNode(Shape s) : shape(std::move(s)) {
        for (int d : shape)
            if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
        data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
    }
    TensorNode(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        for (int dim : shape)
            if (dim <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
    }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
    bool wants_grad() const { return requires_grad || from_op; }
};

// Shared-node handle with value semantics on the handle itself. Copies alias
// the same storage, mirroring how tensors flow through a recorded graph.
template <typename T>
class Tensor {
public:
    using Node = TensorNode<T>;
    using NodePtr = std::shared_ptr<Node>;

    Tensor() : node_(std::make_shared<Node>(Shape{1})) {}
    explicit Tensor(Shape shape) : node_(std::make_shared<Node>(std::move(shape))) {}
    Tensor(Shape shape, std::vector<T> data)
        : node_(std::make_shared<Node>(std::move(shape), std::move(data))) {}
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }
    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
    static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    T& operator[](std::size_t i) { return node_->data[i]; }
    const T& operator[](std::size_t i) const { return node_->data[i]; }
    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    std::size_t offset_of(std::initializer_list<int> idx) const {
        if (idx.size() != ndim()) throw DimensionError("index rank mismatch");
        std::size_t off = 0;
        std::size_t axis = 0;
        for (int i : idx) {
            off = off * static_cast<std::size_t>(node_->shape[axis]) + static_cast<std::size_t>(i);
            ++axis;
        }
        return off;
    }
    T& at(std::initializer_list<int> idx) { return node_->data[offset_of(idx)]; }
    const T& at(std::initializer_list<int> idx) const { return node_->data[offset_of(idx)]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v = true) {
        node_->requires_grad = v;
        return *this;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad_view() const {
        if (node_->grad.empty()) throw ContractError("gradient not populated; run backward() first");
        return node_->grad;
    }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(node_->data.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(node_->data[i]);
        return Tensor<U>(node_->shape, std::move(out));
    }

    Tensor clone() const { return Tensor(node_->shape, node_->data); }

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// Linear record of taped operations. Backward replays the records in reverse
// order, which is a valid topological order because the graph is built
// incrementally. Leaf gradients accumulate across backward() calls; gradients
// of op-produced nodes are re-zeroed at the start of each replay.
template <typename T>
class Tape {
public:
    using BackFn = std::function<void()>;

    void record(BackFn fn, typename Tensor<T>::NodePtr out) {
        out->from_op = true;
        entries_.push_back(Entry{std::move(fn), std::move(out)});
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
        auto loss_node = loss.node();
        bool connected = loss_node->requires_grad;
        for (const auto& e : entries_)
            if (e.out.get() == loss_node.get()) connected = true;
        if (!connected) throw ContractError("loss is not connected to this tape");

        for (auto& e : entries_) {
            e.out->grad.assign(e.out->data.size(), T(0));
        }
        loss_node->ensure_grad();
        loss_node->grad[0] += T(1);

        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            it->fn();
        }
    }

    // Drops all records and the gradient state of op-produced nodes.
    void clear() {
        for (auto& e : entries_) {
            e.out->grad.clear();
            e.out->grad.shrink_to_fit();
            e.out->from_op = false;
        }
        entries_.clear();
    }

private:
    struct Entry {
        BackFn fn;
        typename Tensor<T>::NodePtr out;
    };
    std::vector<Entry> entries_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;
using Tapef = Tape<float>;
using Taped = Tape<double>;

} // namespace cvm
