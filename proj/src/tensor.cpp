#include "relpos/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Core>

#include "relpos/errors.hpp"

namespace relpos {

const char* dtype_name(DType dtype) { return dtype == DType::f64 ? "f64" : "f32"; }

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

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

namespace {

void validate_shape(const Shape& shape) {
    for (auto e : shape)
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
    validate_shape(shape_);
    if (shape_numel(shape_) != data_.size())
        throw DimensionError("shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                             " values, got " + std::to_string(data_.size()));
    round_to_dtype();
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::ones(Shape shape, DType dtype) { return full(std::move(shape), 1.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t(std::move(shape), dtype);
    t.fill(value);
    return t;
}

Tensor Tensor::identity(std::size_t n, DType dtype) {
    Tensor t({n, n}, dtype);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return Tensor({1}, {value}, dtype); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
    if (shape_.size() != 2) throw DimensionError("expected a matrix, got shape " + shape_str(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() != 2) throw DimensionError("expected a matrix, got shape " + shape_str(shape_));
    return shape_[1];
}

std::span<double> Tensor::row(std::size_t r) {
    const std::size_t c = cols();
    return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t c = cols();
    return std::span<const double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
    if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

void Tensor::round_to_dtype() {
    if (dtype_ == DType::f32)
        for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_, dtype_);
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
    round_to_dtype();
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw UsageError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

void require_finite(const Tensor& t, const char* op) {
    for (double v : t.data())
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap as_matrix(const Tensor& t) {
    return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
    return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "matmul");
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    Tensor out({a.rows(), b.cols()}, a.dtype());
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
    out.round_to_dtype();
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "matmul_tn");
    if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows())
        throw DimensionError("matmul_tn: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    Tensor out({a.cols(), b.cols()}, a.dtype());
    as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
    out.round_to_dtype();
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "matmul_nt");
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
        throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    Tensor out({a.rows(), b.rows()}, a.dtype());
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
    out.round_to_dtype();
    return out;
}

Tensor transpose(const Tensor& a) {
    const std::size_t p = a.rows(), q = a.cols();
    Tensor out({q, p}, a.dtype());
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "add");
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    out.round_to_dtype();
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "mul");
    require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
    out.round_to_dtype();
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (auto& v : out.data()) v *= s;
    out.round_to_dtype();
    return out;
}

Tensor softmax_rows(const Tensor& e) {
    require_finite(e, "softmax_rows");
    const std::size_t p = e.rows(), q = e.cols();
    Tensor out({p, q}, e.dtype());
    for (std::size_t i = 0; i < p; ++i) {
        auto in = e.row(i);
        auto o = out.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        const double inv = 1.0 / total;
        for (auto& v : o) v *= inv;
    }
    out.round_to_dtype();
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionError("dot: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) s += a[t] * b[t];
    return s;
}

double sum_prod3(std::span<const double> a, std::span<const double> b, std::span<const double> c) {
    if (a.size() != b.size() || a.size() != c.size())
        throw DimensionError("sum_prod3: length mismatch " + std::to_string(a.size()) + ", " +
                             std::to_string(b.size()) + ", " + std::to_string(c.size()));
    double s = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) s += a[t] * b[t] * c[t];
    return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace relpos
