#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// Every trainable component (denoiser, motion VAE, audio encoder) is built
// from the ops below. Values are row-major in meaning: one row per token or
// frame, one column per feature. A Tape records one forward pass; seeding
// one or more outputs with cotangents and calling backward() fills the
// gradients of every parameter leaf touched by that pass.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace beatflow::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

struct Param {
    std::string name;
    Mat value;
    std::size_t index = 0;
};

/// Named parameter tensors with stable addresses and insertion order.
class ParamSet {
public:
    ParamSet() = default;
    ParamSet(const ParamSet& other);
    ParamSet& operator=(const ParamSet& other);
    ParamSet(ParamSet&&) noexcept = default;
    ParamSet& operator=(ParamSet&&) noexcept = default;

    Param& add(std::string name, Mat init);
    Param& at(std::string_view name);
    const Param& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;
    bool all_finite() const;

    Param& operator[](std::size_t i) { return params_[i]; }
    const Param& operator[](std::size_t i) const { return params_[i]; }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::deque<Param> params_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Gradient buffers shaped like a ParamSet.
class Grads {
public:
    Grads() = default;
    explicit Grads(const ParamSet& params);

    Mat& operator[](std::size_t i) { return g_[i]; }
    const Mat& operator[](std::size_t i) const { return g_[i]; }
    std::size_t size() const { return g_.size(); }

    void zero();
    void add(const Grads& other);
    void scale(double s);
    double norm() const;
    bool all_finite() const;

private:
    std::vector<Mat> g_;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Mat&)>;

    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const { return record_; }

    Var constant(Mat value);
    /// Leaf referencing a parameter; its value is read in place, not copied.
    Var param(const Param& p);

    const Mat& value(Var v) const;
    /// Gradient buffer of v, allocated as zeros on first access.
    Mat& grad(Var v);
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    Var push(Mat value, std::initializer_list<Var> parents, Backward fn);
    Var push(Mat value, std::span<const Var> parents, Backward fn);

    /// Adds a cotangent to an output; several outputs may be seeded.
    void seed(Var v, const Mat& cotangent);
    void backward();
    void backward(Var out, const Mat& cotangent);
    bool has_run_backward() const { return backward_done_; }

    /// Adds leaf gradients into `out` (indexed by Param::index).
    void accumulate(Grads& out) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat own;
        const Mat* ref = nullptr;
        Mat grad;
        Backward fn;
        const Param* param = nullptr;
        bool requires_grad = false;
    };

    bool record_;
    bool backward_done_ = false;
    std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(Tape& t, Var a, Var b);
/// a * b^T
Var matmul_nt(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// Broadcast-add a 1×n row to every row of a.
Var add_row(Tape& t, Var a, Var row);
/// Broadcast-multiply every row of a by a 1×n row.
Var mul_row(Tape& t, Var a, Var row);

// Pointwise.
Var tanh(Tape& t, Var a);
Var silu(Tape& t, Var a);
Var gelu(Tape& t, Var a);
Var exp(Tape& t, Var a);

// Structure.
Var concat_cols(Tape& t, std::span<const Var> parts);
Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count);
/// out.row(i) = table.row(idx[i])
Var gather_rows(Tape& t, Var table, std::vector<int> idx);
/// out.row(i) = a.row(i - d) for i >= d, zero otherwise (causal delay).
Var shift_rows(Tape& t, Var a, Eigen::Index d);

/// Row-wise normalization to zero mean and unit variance (no affine).
Var layer_norm(Tape& t, Var a, double eps = 1e-5);
/// Row-wise softmax of (a * scale); with `causal`, entries j > i are masked.
Var softmax_rows(Tape& t, Var a, double scale, bool causal);

// Composite layers.
Var linear(Tape& t, Var x, const Param& w, const Param* b);

/// Deterministic initializers.
Mat xavier(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng, double gain = 1.0);
Mat normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables
};

class Adam {
public:
    Adam() = default;
    Adam(const ParamSet& params, AdamConfig cfg);

    void step(ParamSet& params, const Grads& grads);
    long steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    AdamConfig cfg_;
    Grads m_;
    Grads v_;
    long t_ = 0;
};

}  // namespace beatflow::nn
