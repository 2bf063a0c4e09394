#pragma once

#include <agnet/error.hpp>
#include <agnet/scalar.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace agnet::inline AGNET_ABI {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

/// Cache-line aligned storage. Vectorized kernels pick their loop split from
/// the data address, so a fixed alignment keeps results bitwise reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U> &) noexcept
    {
    }
    T *allocate(size_t n) { return static_cast<T *>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T *p, size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U> &) const noexcept
    {
        return true;
    }
};

using Storage = std::vector<Scalar, AlignedAllocator<Scalar>>;

struct TensorImpl {
    Shape shape;
    Storage data;
    Storage grad; // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;

    void ensure_grad();
};

/// Dense row-major array with shared ownership. Copies of a Tensor alias the
/// same storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Scalar fill = 0);
    Tensor(Shape shape, std::vector<Scalar> values);

    static Tensor scalar(Scalar value);

    bool defined() const { return impl_ != nullptr; }
    const Shape &shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int64_t dim(int axis) const;
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    std::span<Scalar> data() { return impl_->data; }
    std::span<const Scalar> data() const { return impl_->data; }
    Scalar *ptr() { return impl_->data.data(); }
    const Scalar *ptr() const { return impl_->data.data(); }
    Scalar &operator[](int64_t i) { return impl_->data[static_cast<size_t>(i)]; }
    Scalar operator[](int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }
    Scalar item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor &set_requires_grad(bool on);
    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient buffer, allocated (zeroed) on first access. Tensors are
    /// handles, so the buffer is writable through a const handle.
    std::span<Scalar> grad() const;
    void zero_grad();

    /// Deep copy of the values, detached from any tape.
    Tensor clone() const;
    /// Shares nothing with the tape; same as clone() but keeps intent explicit.
    Tensor detach() const { return clone(); }

    bool all_finite() const;

    const std::shared_ptr<TensorImpl> &impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Records differentiable operations for the reverse sweep. One tape per
/// thread; operations append to it only while gradient recording is enabled
/// and at least one input requires a gradient.
class Tape {
public:
    static Tape &current();

    bool recording() const { return enabled_; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Registers `out` as produced by a differentiable op. Returns false
    /// (and records nothing) when no input needs a gradient.
    bool record(const std::vector<const Tensor *> &inputs, Tensor &out, std::function<void()> backward_fn);

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
    void backward(const Tensor &loss);

private:
    friend class NoGradGuard;
    struct Node {
        std::shared_ptr<TensorImpl> output;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
    bool enabled_ = true;
};

/// Disables recording on the current thread's tape for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
    bool previous_;
};

void backward(const Tensor &loss);

/// Number of reverse sweeps executed by this process (all threads).
uint64_t backward_pass_count();

} // namespace agnet::inline AGNET_ABI
