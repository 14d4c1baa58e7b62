#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace q2l {

#ifdef Q2L_USE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AutogradError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

namespace detail {

inline std::atomic<bool>& check_finite_flag() {
#ifdef NDEBUG
    static std::atomic<bool> flag{false};
#else
    static std::atomic<bool> flag{true};
#endif
    return flag;
}

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <class T>
struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool leaf = true;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Debug-mode finiteness assertion on every op output. On by default in
/// builds without NDEBUG.
inline void set_check_finite(bool on) { detail::check_finite_flag().store(on); }
inline bool check_finite_enabled() { return detail::check_finite_flag().load(); }

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major n-dimensional array with an optional gradient slot.
///
/// A Tensor is a handle: copies share the same storage. Values written by an
/// op are never modified afterwards except by parameter updates.
template <class T>
class Tensor {
public:
    using value_type = T;
    using StoragePtr = std::shared_ptr<detail::Storage<T>>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : impl_(std::make_shared<detail::Storage<T>>()) {
        if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
        for (auto e : shape)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        if (shape_numel(shape) != data.size())
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }
    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }
    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    /// Direct write access; only for parameter updates and initialization.
    std::span<T> mutable_data() { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient view; all zeros when nothing has been accumulated yet.
    std::vector<T> grad() const {
        return impl_->grad.empty() ? std::vector<T>(numel(), T(0)) : impl_->grad;
    }
    std::span<T> grad_span() { return impl_->grad_buffer(); }
    void zero_grad() { impl_->grad.clear(); }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool is_leaf() const { return impl_->leaf; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
        return impl_->data[0];
    }
    T operator[](std::size_t i) const { return impl_->data[i]; }
    T at(std::size_t i, std::size_t j) const { return impl_->data[i * impl_->shape.back() + j]; }

    /// Value copy with no gradient history.
    Tensor detach() const { return Tensor(shape(), impl_->data, false); }

    const StoragePtr& storage() const { return impl_; }

private:
    StoragePtr impl_;
};

/// Ordered record of executed differentiable operations on one thread.
///
/// Entries are appended in execution order, so each entry's inputs were
/// produced by earlier entries or are leaves. backward() replays the record
/// in reverse, visiting each entry once, then clears it.
template <class T>
class Tape {
public:
    using StoragePtr = typename Tensor<T>::StoragePtr;
    using BackwardFn = std::function<void(detail::Storage<T>& out)>;

    struct Entry {
        StoragePtr output;
        BackwardFn backward;
    };

    static Tape& current() {
        thread_local Tape tape;
        return tape;
    }

    void record(StoragePtr output, BackwardFn fn) { entries_.push_back({std::move(output), std::move(fn)}); }
    void clear() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    void backward(const Tensor<T>& loss) {
        if (!loss.defined()) throw AutogradError("backward: undefined loss tensor");
        if (loss.numel() != 1)
            throw AutogradError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
        const auto& target = loss.storage();
        std::ptrdiff_t start = -1;
        for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(entries_.size()) - 1; i >= 0; --i) {
            if (entries_[static_cast<std::size_t>(i)].output == target) {
                start = i;
                break;
            }
        }
        if (start < 0) throw AutogradError("backward: loss is not recorded on the tape (detached)");
        target->grad_buffer()[0] += T(1);
        for (std::ptrdiff_t i = start; i >= 0; --i) {
            auto& e = entries_[static_cast<std::size_t>(i)];
            if (!e.output->grad.empty()) e.backward(*e.output);
        }
        clear();
    }

private:
    std::vector<Entry> entries_;
};

/// Accumulates d(loss)/d(t) into every tensor on the current thread's tape
/// that requires grad, then clears the tape. Gradients add onto existing ones.
template <class T>
void backward(const Tensor<T>& loss) {
    Tape<T>::current().backward(loss);
}

}  // namespace q2l
