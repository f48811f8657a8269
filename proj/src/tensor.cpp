#include "mwat/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mwat {

int shape_numel(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("shape dims must be positive, got " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int>(data_.size()))
        throw DimensionError("shape " + shape_to_string(shape_) + " does not match data length " +
                             std::to_string(data_.size()));
    for (double v : data_)
        if (!std::isfinite(v)) throw NumericError("tensor constructed with non-finite value");
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
    return Tensor(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), 0.0));
}

Tensor Tensor::full(const std::vector<int>& shape, double v) {
    return Tensor(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::from_vec(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() requires a scalar tensor, shape is " + shape_str());
    return data_[0];
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::uint64_t Tensor::checksum() const {
    std::uint64_t h = fnv1a64(shape_.data(), shape_.size() * sizeof(int));
    return fnv1a64(data_.data(), data_.size() * sizeof(double), h);
}

}  // namespace mwat
