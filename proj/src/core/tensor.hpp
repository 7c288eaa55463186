// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a define-by-run gradient tape.
//
// A Tensor is a cheap handle to shared storage. Leaves are created by the
// factory functions; every op returns a fresh tensor. When a Tape is active on
// the calling thread and at least one input requires grad, the op appends a
// record to that tape and its output requires grad as well. Without an active
// tape ops run untracked, which is how inference runs.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace smoe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    bool leaf = true;
    std::optional<std::vector<double>> grad;
};

}  // namespace detail

class Tensor {
public:
    Tensor();

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor eye(std::size_t n, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    // Writable view of a leaf's values. Mutating a tensor that is already an
    // input to a recorded op invalidates that record's backward rule.
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t flat) const { return node_->data[flat]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->leaf; }
    void set_requires_grad(bool value);

    bool has_grad() const { return node_->grad.has_value(); }
    std::span<const double> grad() const;
    void zero_grad();
    void clear_grad();

    // New leaf with copied values and no tape history.
    Tensor detach() const;

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::TensorNode> node_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and replays the records in reverse. Grads of
    // leaves accumulate; frozen tensors are never touched.
    void backward(const Tensor& loss);

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }

    void record(std::vector<std::shared_ptr<detail::TensorNode>> inputs,
                std::shared_ptr<detail::TensorNode> output, BackwardFn fn, const char* name);

    static Tape* current();

private:
    friend class TapeScope;
    struct Record {
        std::vector<std::shared_ptr<detail::TensorNode>> inputs;
        std::shared_ptr<detail::TensorNode> output;
        BackwardFn backward;
        const char* name;
    };
    std::vector<Record> records_;
    bool consumed_ = false;
};

// Activates a tape for the current thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Suspends recording (inference, finite-difference probes).
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

// Convenience: backward on the tape active on this thread.
void backward(const Tensor& loss);

// Building block for ops. Records `fn` when a tape is active and any input
// requires grad; otherwise the output is an untracked value.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   BackwardFn fn, const char* name);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn fn, const char* name);

// Grad accumulation target of an input inside a backward rule. Empty span
// when the input does not require grad.
std::span<double> grad_target(const Tensor& input);

// Multiply-accumulate accounting for forward ops. Thread-local and always on.
namespace macs {
std::uint64_t count();
void add(std::uint64_t n);
void reset();
}  // namespace macs

class MacScope {
public:
    MacScope() : start_(macs::count()) {}
    std::uint64_t elapsed() const { return macs::count() - start_; }

private:
    std::uint64_t start_;
};

}  // namespace smoe
