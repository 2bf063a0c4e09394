#include <agnet/tensor.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace agnet::inline AGNET_ABI {

namespace {
std::atomic<uint64_t> g_backward_passes{0};
}

int64_t shape_numel(const Shape &shape)
{
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0)
            throw DimensionError("non-positive extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape &shape)
{
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void TensorImpl::ensure_grad()
{
    if (grad.size() != data.size())
        grad.assign(data.size(), Scalar(0));
}

Tensor::Tensor(Shape shape, Scalar fill) : impl_(std::make_shared<TensorImpl>())
{
    const int64_t n = shape_numel(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values) : impl_(std::make_shared<TensorImpl>())
{
    const int64_t n = shape_numel(shape);
    if (static_cast<int64_t>(values.size()) != n)
        throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data.assign(values.begin(), values.end());
}

Tensor Tensor::scalar(Scalar value)
{
    return Tensor(Shape{1}, value);
}

int64_t Tensor::dim(int axis) const
{
    if (axis < 0)
        axis += ndim();
    if (axis < 0 || axis >= ndim())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
    return impl_->shape[static_cast<size_t>(axis)];
}

Scalar Tensor::item() const
{
    if (numel() != 1)
        throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

Tensor &Tensor::set_requires_grad(bool on)
{
    impl_->requires_grad = on;
    return *this;
}

std::span<Scalar> Tensor::grad() const
{
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad()
{
    std::fill(impl_->grad.begin(), impl_->grad.end(), Scalar(0));
}

Tensor Tensor::clone() const
{
    Tensor t(impl_->shape);
    std::copy(impl_->data.begin(), impl_->data.end(), t.impl_->data.begin());
    return t;
}

bool Tensor::all_finite() const
{
    return std::all_of(impl_->data.begin(), impl_->data.end(), [](Scalar v) { return std::isfinite(v); });
}

Tape &Tape::current()
{
    thread_local Tape tape;
    return tape;
}

bool Tape::record(const std::vector<const Tensor *> &inputs, Tensor &out, std::function<void()> backward_fn)
{
    if (!enabled_)
        return false;
    const bool needed = std::any_of(inputs.begin(), inputs.end(), [](const Tensor *t) { return t && t->defined() && t->requires_grad(); });
    if (!needed)
        return false;
    out.impl()->requires_grad = true;
    out.impl()->is_leaf = false;
    nodes_.push_back(Node{out.impl(), std::move(backward_fn)});
    return true;
}

void Tape::backward(const Tensor &loss)
{
    if (!loss.defined() || loss.numel() != 1)
        throw DimensionError("backward() needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    if (!loss.requires_grad())
        throw Error("backward() on a loss that is not connected to the tape");

    for (auto &node : nodes_) {
        node.output->ensure_grad();
        std::fill(node.output->grad.begin(), node.output->grad.end(), Scalar(0));
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += Scalar(1);

    const bool was_enabled = enabled_;
    enabled_ = false;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        it->backward_fn();
    enabled_ = was_enabled;
    g_backward_passes.fetch_add(1, std::memory_order_relaxed);
}

NoGradGuard::NoGradGuard() : previous_(Tape::current().enabled_)
{
    Tape::current().enabled_ = false;
}

NoGradGuard::~NoGradGuard()
{
    Tape::current().enabled_ = previous_;
}

void backward(const Tensor &loss)
{
    Tape::current().backward(loss);
}

uint64_t backward_pass_count()
{
    return g_backward_passes.load(std::memory_order_relaxed);
}

} // namespace agnet::inline AGNET_ABI
