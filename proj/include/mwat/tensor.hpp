#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "mwat/common.hpp"

namespace mwat {

// Dense row-major tensor of doubles. Construction validates finiteness, so a
// tensor in circulation never carries NaN/Inf. A tensor additionally remembers
// whether it is recorded on a tape (node id + tape id); see autodiff.hpp.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(const std::vector<int>& shape);
    static Tensor full(const std::vector<int>& shape, double v);
    static Tensor scalar(double v);
    static Tensor from_vec(std::vector<double> v);  // 1-d

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int size() const { return static_cast<int>(data_.size()); }
    bool empty() const { return data_.empty(); }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    double item() const;
    double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }
    double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return requires_grad_; }
    int node() const { return node_; }
    std::uint64_t tape_id() const { return tape_id_; }

    // Strips any tape association, keeping the value.
    Tensor detached() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    std::uint64_t checksum() const;

private:
    std::vector<int> shape_{};
    std::vector<double> data_{};
    bool requires_grad_ = false;
    int node_ = -1;
    std::uint64_t tape_id_ = 0;

    friend class Tape;
    friend struct OpRecorder;
};

int shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

}  // namespace mwat
