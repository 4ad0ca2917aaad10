#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hm {

// Raised when a computation hits non-finite values (as opposed to bad
// shapes/arguments or unreadable data).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until this tensor joins a recorded graph
    bool requires_grad = false;
};

// Dense N-d array handle with shared storage. Images use N x C x H x W.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : s_(std::make_shared<TensorStorage<T>>()) {
        s_->shape = std::move(shape);
        s_->data.assign(size_t(shape_numel(s_->shape)), fill);
        s_->requires_grad = requires_grad;
    }

    static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false) {
        Tensor t;
        t.s_ = std::make_shared<TensorStorage<T>>();
        if (shape_numel(shape) != int64_t(values.size()))
            throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) +
                                        " does not match " + std::to_string(values.size()) +
                                        " values");
        t.s_->shape = std::move(shape);
        t.s_->data = std::move(values);
        t.s_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v) { return from_data({1}, {v}); }

    bool defined() const { return s_ != nullptr; }
    const Shape& shape() const { return s_->shape; }
    int ndim() const { return int(s_->shape.size()); }
    int64_t dim(int i) const { return s_->shape[size_t(i)]; }
    int64_t numel() const { return int64_t(s_->data.size()); }

    T* data() { return s_->data.data(); }
    const T* data() const { return s_->data.data(); }
    std::vector<T>& vec() { return s_->data; }
    const std::vector<T>& vec() const { return s_->data; }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::item: numel != 1");
        return s_->data[0];
    }

    bool requires_grad() const { return s_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        s_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return defined() && !s_->grad.empty(); }
    T* grad() { return s_->grad.data(); }
    const T* grad() const { return s_->grad.data(); }
    std::vector<T>& grad_vec() { return s_->grad; }

    void ensure_grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
    }
    void zero_grad() {
        if (!s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
    }

    // whether backward should propagate into this tensor
    bool tracked() const { return defined() && (s_->requires_grad || !s_->grad.empty()); }

    T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        const Shape& sh = s_->shape;
        return s_->data[size_t(((n * sh[1] + c) * sh[2] + h) * sh[3] + w)];
    }
    T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        const Shape& sh = s_->shape;
        return s_->data[size_t(((n * sh[1] + c) * sh[2] + h) * sh[3] + w)];
    }

    bool same_storage(const Tensor& o) const { return s_ == o.s_; }
    std::shared_ptr<TensorStorage<T>> storage() const { return s_; }

private:
    std::shared_ptr<TensorStorage<T>> s_;
};

// Define-by-run record of executed differentiable ops. Ops append in
// execution order (inputs always precede consumers), backward replays the
// closures once each, in reverse.
template <typename T>
class Tape {
public:
    static Tape& get() {
        static thread_local Tape tape;
        return tape;
    }

    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void replay_reverse() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

namespace detail {
inline bool& grad_mode_flag() {
    static thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Populates grads of everything reachable from the scalar loss, then clears
// the tape (the graph is rebuilt on the next forward pass).
template <typename T>
void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    if (!loss.tracked())
        throw std::invalid_argument("backward: loss is not part of a recorded graph");
    loss.ensure_grad();
    loss.grad()[0] = T(1);
    auto& tape = Tape<T>::get();
    tape.replay_reverse();
    tape.clear();
}

template <typename T>
void clear_tape() {
    Tape<T>::get().clear();
}

}  // namespace hm
