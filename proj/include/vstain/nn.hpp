#pragma once

// Minimal reverse-mode differentiation for the denoising networks: a dense
// double tensor, a tape of recorded operations, and the handful of layers the
// UNet needs. Layouts are NCHW for feature maps and (N, D) for vectors.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace vstain::nn {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    void fill(double v);
    bool all_finite() const;

    static std::string shape_string(const std::vector<int>& shape);
    static std::size_t element_count(const std::vector<int>& shape);

    bool operator==(const Tensor&) const = default;

private:
    std::vector<int> shape_;
    // Max-aligned so Eigen kernels take the same path on every run.
    std::vector<double, Eigen::aligned_allocator<double>> data_;
};

/// Raised when a layer produces NaN or Inf; the message names the layer.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    /// Receives the node's accumulated output gradient.
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    /// A non-recording tape keeps values only; no backward closures.
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    /// Leaf that never receives a gradient. The reference must outlive the tape.
    Var constant(const Tensor& value, std::string name = "input");
    Var constant(Tensor&& value, std::string name = "input");
    /// Owned leaf that receives a gradient (used by gradient checks).
    Var variable(Tensor value, std::string name);
    /// External parameter; repeated binds of the same tensor share one node.
    Var parameter(const Tensor& value, const std::string& name);

    /// Records an op result. The value is checked for NaN/Inf first.
    Var push(Tensor value, std::string name, std::initializer_list<Var> parents, Backward backward);

    const Tensor& value(Var v) const;
    const std::string& name(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).name; }
    bool needs_grad(Var v) const { return v.valid() && nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
    /// Gradient buffer, zero-allocated on first use.
    Tensor& grad(Var v);
    bool has_grad(Var v) const;

    /// Seeds d(loss)/d(loss) = 1 for a single-element loss and runs all
    /// recorded closures in reverse.
    void backward(Var loss);

    /// Gradient accumulated for a bound parameter, or null if it had none.
    const Tensor* gradient_of(const Tensor& parameter) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        bool needs_grad = false;
        std::string name;
        Backward backward;
    };

    bool record_;
    std::deque<Node> nodes_;
    std::unordered_map<const Tensor*, int> params_;
};

/// True when the tape records and `v` needs a gradient.
inline bool wants(const Tape& tape, Var v) { return tape.recording() && tape.needs_grad(v); }

// Layers -------------------------------------------------------------------

/// 2-D convolution, square kernel, zero padding. `w` is (Cout, Cin, k, k),
/// `b` is (Cout) or invalid for no bias.
Var conv2d(Tape& tape, Var x, Var w, Var b, int stride, int pad, const std::string& name);
Var linear(Tape& tape, Var x, Var w, Var b, const std::string& name);
Var group_norm(Tape& tape, Var x, Var gamma, Var beta, int groups, const std::string& name,
               double eps = 1e-5);
Var silu(Tape& tape, Var x, const std::string& name);
Var sigmoid(Tape& tape, Var x, const std::string& name);
Var add(Tape& tape, Var a, Var b, const std::string& name);
/// x (N, C, H, W) + v (N, C) broadcast over space.
Var add_channel_bias(Tape& tape, Var x, Var v, const std::string& name);
Var concat_channels(Tape& tape, Var a, Var b, const std::string& name);
Var upsample_nearest2(Tape& tape, Var x, const std::string& name);
Var scale(Tape& tape, Var x, double s, const std::string& name);
/// Mean of squared differences, shape (1).
Var mse(Tape& tape, Var a, Var b, const std::string& name);

}  // namespace vstain::nn
