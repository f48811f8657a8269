#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mwat/tensor.hpp"

namespace mwat {

enum class Op : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    matmul,
    conv2d,
    relu,
    tanh,
    sigmoid,
    flatten,
    concat,
    slice,
    sum,
    mean,
    mse_loss,
    bce_with_logits_loss,
    l1_norm,
    l2_norm,
    sign,
    clamp,
};

// Records one forward computation. Nodes are appended in execution order,
// which is by construction a topological order. Input values are saved by
// copy so backward never has to chase live tensors.
class Tape {
public:
    struct Node {
        Op op;
        std::vector<int> in_ids;                    // -1 marks a constant input
        std::vector<std::vector<int>> in_shapes;
        std::vector<std::vector<double>> in_data;
        std::vector<int> out_shape;
        std::vector<double> out_data;
        std::vector<double> attrs;                  // op parameters (stride, pad, axis, ...)
    };

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf whose gradient can be queried after backward.
    // The tensor is updated in place with its node id.
    void watch(Tensor& t);

    std::uint64_t id() const { return id_; }
    int num_nodes() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

    // Activates this tape on the current thread for the lifetime of the scope.
    // A tape is single-owner: do not share one across concurrent executions.
    class Scope {
    public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active();

private:
    friend struct OpRecorder;
    std::uint64_t id_;
    std::vector<Node> nodes_;
};

// Result of a backward pass. Multiple backward passes over one tape are
// independent; the tape itself stays const.
class Gradients {
public:
    bool has(const Tensor& t) const;
    // Gradient for a tensor recorded on the tape; zeros if the loss does not
    // reach it. Asking for a tensor from another tape is a contract error.
    Tensor grad(const Tensor& t) const;

private:
    friend Gradients backward(const Tensor& loss, const Tape& tape);
    std::uint64_t tape_id_ = 0;
    std::vector<std::vector<double>> bar_;
    std::vector<char> touched_;
    const Tape* tape_ = nullptr;
};

Gradients backward(const Tensor& loss, const Tape& tape);

// Primitives. Each validates shapes, computes the value, and records a node
// on the active tape when any input is tape-connected. Outputs are checked
// finite; a non-finite result raises NumericError.
Tensor add(const Tensor& a, const Tensor& b);        // same shape, or b broadcast over dim 0
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);        // same shape, or scalar * tensor
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor flatten(const Tensor& x);                     // [B,...] -> [B,prod]
Tensor reshape(const Tensor& x, const std::vector<int>& shape);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& x, int dim, int start, int len);
Tensor sum(const Tensor& x);                         // -> scalar
Tensor mean(const Tensor& x);                        // -> scalar
// Per-sample losses: inputs are [B,F]; result is [B]. The optional mask
// selects valid slots; each sample divides by its own valid count.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);
Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& target);
Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& target, const Tensor& mask);
Tensor l1_norm(const Tensor& x);                     // -> scalar
Tensor l2_norm(const Tensor& x);                     // -> scalar
Tensor sign(const Tensor& x);                        // sign(0) = 0
Tensor clamp(const Tensor& x, double lo, double hi);

// Generic dispatcher over the primitive set, mainly for bindings and tests.
Tensor primitive_forward(const std::string& op, const std::vector<Tensor>& inputs,
                         const std::vector<double>& attrs = {});

// Max relative error between the reverse-mode gradient of f at x and central
// finite differences with step h: max_i |ad_i - fd_i| / max(1e-8, |fd_i|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

// True when t is recorded on the tape currently active on this thread.
bool tape_live(const Tensor& t);

}  // namespace mwat
