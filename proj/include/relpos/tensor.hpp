#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace relpos {

enum class DType { f64, f32 };

const char* dtype_name(DType dtype);

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array. Storage is always double; an f32 tensor keeps every
/// stored value rounded to single precision.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, DType dtype = DType::f64);
    Tensor(Shape shape, std::vector<double> data, DType dtype = DType::f64);

    static Tensor zeros(Shape shape, DType dtype = DType::f64);
    static Tensor ones(Shape shape, DType dtype = DType::f64);
    static Tensor full(Shape shape, double value, DType dtype = DType::f64);
    static Tensor identity(std::size_t n, DType dtype = DType::f64);
    static Tensor scalar(double value, DType dtype = DType::f64);
    /// 2-D tensor from nested rows; all rows must have equal length.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    DType dtype() const { return dtype_; }

    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const double& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    double item() const;

    /// Rounds storage to the tensor's dtype (no-op for f64).
    void round_to_dtype();
    Tensor reshaped(Shape shape) const;
    void fill(double value);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
    std::vector<double> data_;
    DType dtype_ = DType::f64;
};

// Plain (untracked) arithmetic. Shape mismatches throw DimensionError,
// dtype mismatches throw UsageError.

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op);
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void require_finite(const Tensor& t, const char* op);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T b without materialising the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a b^T without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor softmax_rows(const Tensor& e);
double sum_prod3(std::span<const double> a, std::span<const double> b, std::span<const double> c);
double dot(std::span<const double> a, std::span<const double> b);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace relpos
