// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "core/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "core/errors.hpp"

namespace smoe {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_macs = 0;

std::shared_ptr<detail::TensorNode> new_node(Shape shape, std::vector<double> values,
                                             bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor of shape " + shape_str(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor() : node_(new_node({}, {0.0}, false)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(new_node({}, {value}, requires_grad));
}

Tensor Tensor::eye(std::size_t n, bool requires_grad) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return Tensor(new_node({n, n}, std::move(v), requires_grad));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= node_->shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(node_->shape));
    }
    return node_->shape[axis];
}

std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
    if (node_->data.size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(node_->shape));
    }
    return node_->data[0];
}

void Tensor::set_requires_grad(bool value) {
    if (!node_->leaf) throw ContractError("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = value;
    if (!value) node_->grad.reset();
}

std::span<const double> Tensor::grad() const {
    if (!node_->grad) throw ContractError("tensor has no gradient buffer");
    return *node_->grad;
}

void Tensor::zero_grad() {
    if (node_->grad) std::fill(node_->grad->begin(), node_->grad->end(), 0.0);
}

void Tensor::clear_grad() { node_->grad.reset(); }

Tensor Tensor::detach() const { return Tensor(new_node(node_->shape, node_->data, false)); }

// ---------------------------------------------------------------------------

void Tape::record(std::vector<std::shared_ptr<detail::TensorNode>> inputs,
                  std::shared_ptr<detail::TensorNode> output, BackwardFn fn, const char* name) {
    if (consumed_) throw ContractError("cannot record on a tape after backward()");
    records_.push_back(Record{std::move(inputs), std::move(output), std::move(fn), name});
}

Tape* Tape::current() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (consumed_) throw ContractError("backward() already ran on this tape");
    consumed_ = true;
    const auto& root = loss.node();
    if (!root->requires_grad) {
        throw ContractError("loss does not depend on any tensor that requires grad");
    }
    const bool on_tape = std::any_of(records_.begin(), records_.end(),
                                     [&](const Record& r) { return r.output == root; });
    if (!root->leaf && !on_tape) throw ContractError("loss was not recorded on this tape");

    if (!root->grad) root->grad.emplace(1, 0.0);
    (*root->grad)[0] += 1.0;

    // Recording pauses while backward rules run so they may use plain ops.
    NoGradScope pause;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        auto& out = *it->output;
        if (out.grad) it->backward(*out.grad);
        for (auto& in : it->inputs) {
            if (in->requires_grad && !in->grad) in->grad.emplace(in->data.size(), 0.0);
        }
    }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
    Tape* tape = Tape::current();
    if (!tape) throw ContractError("backward() called with no active tape");
    tape->backward(loss);
}

namespace {

template <typename Inputs>
Tensor make_result_impl(Shape shape, std::vector<double> values, const Inputs& inputs,
                        BackwardFn fn, const char* name) {
    Tape* tape = g_active_tape;
    bool track = false;
    if (tape) {
        for (const auto& t : inputs) track = track || t.requires_grad();
    }
    auto node = new_node(std::move(shape), std::move(values), track);
    if (track) {
        node->leaf = false;
        std::vector<std::shared_ptr<detail::TensorNode>> ins;
        ins.reserve(inputs.size());
        for (const auto& t : inputs) ins.push_back(t.node());
        tape->record(std::move(ins), node, std::move(fn), name);
    }
    return Tensor(std::move(node));
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   BackwardFn fn, const char* name) {
    return make_result_impl(std::move(shape), std::move(values), inputs, std::move(fn), name);
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn fn, const char* name) {
    return make_result_impl(std::move(shape), std::move(values), inputs, std::move(fn), name);
}

std::span<double> grad_target(const Tensor& input) {
    auto& node = *input.node();
    if (!node.requires_grad) return {};
    if (!node.grad) node.grad.emplace(node.data.size(), 0.0);
    return *node.grad;
}

namespace macs {
std::uint64_t count() { return g_macs; }
void add(std::uint64_t n) { g_macs += n; }
void reset() { g_macs = 0; }
}  // namespace macs

}  // namespace smoe
