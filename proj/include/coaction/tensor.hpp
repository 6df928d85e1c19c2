#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace coaction {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) noexcept
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            os << ", ";
        }
        os << shape[i];
    }
    os << ')';
    return os.str();
}

namespace detail {

/// Leaves elements default-initialized so buffers that are fully overwritten skip the zero fill.
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = DefaultInitAllocator<U>;
    };
    DefaultInitAllocator() = default;
    template <class U>
    DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept
    {
    }
    template <class U>
    void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>)
    {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args)
    {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

}  // namespace detail

/// Dense row-major array of doubles. A rank-0 tensor (empty shape) holds one scalar.
class Tensor {
public:
    Tensor() : shape_{0} {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill)
    {
    }

    Tensor(Shape shape, const std::vector<double>& data)
        : shape_(std::move(shape)), data_(data.begin(), data.end())
    {
        if (shape_size(shape_) != data_.size()) {
            throw ShapeError("tensor shape " + to_string(shape_) + " holds " +
                             std::to_string(shape_size(shape_)) + " values, got " +
                             std::to_string(data_.size()));
        }
    }

    /// Storage left uninitialized; every element must be written before it is read.
    static Tensor uninitialized(Shape shape)
    {
        Tensor t;
        t.data_.resize(shape_size(shape));
        t.shape_ = std::move(shape);
        return t;
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor vector(std::vector<double> v)
    {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v)
    {
        return Tensor(Shape{rows, cols}, std::move(v));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    /// Extent of an axis; negative axes count from the back.
    std::size_t dim(std::ptrdiff_t axis) const
    {
        const auto r = static_cast<std::ptrdiff_t>(shape_.size());
        const auto a = axis < 0 ? axis + r : axis;
        if (a < 0 || a >= r) {
            throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
        }
        return shape_[static_cast<std::size_t>(a)];
    }

    std::size_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
    std::size_t leading_size() const { return last_dim() == 0 ? 0 : size() / last_dim(); }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }

    double item() const
    {
        if (data_.size() != 1) {
            throw ShapeError("item() on tensor of shape " + to_string(shape_));
        }
        return data_[0];
    }

    double at(std::size_t row, std::size_t col) const { return data_[row * last_dim() + col]; }

    std::vector<double> row(std::size_t r) const
    {
        const auto c = last_dim();
        return {data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
    }

    Tensor reshaped(Shape shape) const
    {
        if (shape_size(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
        }
        Tensor t(*this);
        t.shape_ = std::move(shape);
        return t;
    }

    void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const noexcept
    {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double, detail::DefaultInitAllocator<double>> data_;
};

}  // namespace coaction
