#include "beatflow/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace beatflow::nn {

ParamSet::ParamSet(const ParamSet& other) : params_(other.params_), index_(other.index_) {}

ParamSet& ParamSet::operator=(const ParamSet& other) {
    if (this != &other) {
        params_ = other.params_;
        index_ = other.index_;
    }
    return *this;
}

Param& ParamSet::add(std::string name, Mat init) {
    if (index_.contains(name)) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    const std::size_t i = params_.size();
    index_.emplace(name, i);
    params_.push_back(Param{std::move(name), std::move(init), i});
    return params_.back();
}

Param& ParamSet::at(std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter: " + std::string(name));
    }
    return params_[it->second];
}

const Param& ParamSet::at(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter: " + std::string(name));
    }
    return params_[it->second];
}

bool ParamSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

bool ParamSet::all_finite() const {
    for (const auto& p : params_) {
        if (!p.value.allFinite()) return false;
    }
    return true;
}

Grads::Grads(const ParamSet& params) {
    g_.reserve(params.size());
    for (const auto& p : params) g_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
}

void Grads::zero() {
    for (auto& g : g_) g.setZero();
}

void Grads::add(const Grads& other) {
    for (std::size_t i = 0; i < g_.size(); ++i) g_[i] += other.g_[i];
}

void Grads::scale(double s) {
    for (auto& g : g_) g *= s;
}

double Grads::norm() const {
    double s = 0.0;
    for (const auto& g : g_) s += g.squaredNorm();
    return std::sqrt(s);
}

bool Grads::all_finite() const {
    for (const auto& g : g_) {
        if (!g.allFinite()) return false;
    }
    return true;
}

Var Tape::constant(Mat value) {
    Node n;
    n.own = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const Param& p) {
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.requires_grad = record_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

const Mat& Tape::value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ref ? *n.ref : n.own;
}

Mat& Tape::grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) {
        const Mat& val = n.ref ? *n.ref : n.own;
        n.grad = Mat::Zero(val.rows(), val.cols());
    }
    return n.grad;
}

Var Tape::push(Mat value, std::initializer_list<Var> parents, Backward fn) {
    return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::push(Mat value, std::span<const Var> parents, Backward fn) {
    Node n;
    n.own = std::move(value);
    if (record_) {
        for (Var p : parents) {
            if (nodes_[p.id].requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
        if (n.requires_grad) n.fn = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

void Tape::seed(Var v, const Mat& cotangent) {
    if (!record_) throw std::logic_error("tape was created without gradient recording");
    Mat& g = grad(v);
    if (g.rows() != cotangent.rows() || g.cols() != cotangent.cols()) {
        throw std::invalid_argument("cotangent shape does not match output");
    }
    g += cotangent;
}

void Tape::backward() {
    if (!record_) throw std::logic_error("tape was created without gradient recording");
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.fn || n.grad.size() == 0) continue;
        // The callback only touches parents (lower indices), so n.grad stays put.
        n.fn(*this, n.grad);
    }
    backward_done_ = true;
}

void Tape::backward(Var out, const Mat& cotangent) {
    seed(out, cotangent);
    backward();
}

void Tape::accumulate(Grads& out) const {
    for (const Node& n : nodes_) {
        if (n.param && n.grad.size() != 0) out[n.param->index] += n.grad;
    }
}

Var matmul(Tape& t, Var a, Var b) {
    Mat out = t.value(a) * t.value(b);
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
        if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
        if (t.requires_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
    });
}

Var matmul_nt(Tape& t, Var a, Var b) {
    Mat out = t.value(a) * t.value(b).transpose();
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
        if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b);
        if (t.requires_grad(b)) t.grad(b).noalias() += g.transpose() * t.value(a);
    });
}

Var add(Tape& t, Var a, Var b) {
    Mat out = t.value(a) + t.value(b);
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(b)) t.grad(b) += g;
    });
}

Var sub(Tape& t, Var a, Var b) {
    Mat out = t.value(a) - t.value(b);
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(b)) t.grad(b) -= g;
    });
}

Var mul(Tape& t, Var a, Var b) {
    Mat out = t.value(a).cwiseProduct(t.value(b));
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
        if (t.requires_grad(a)) t.grad(a) += g.cwiseProduct(t.value(b));
        if (t.requires_grad(b)) t.grad(b) += g.cwiseProduct(t.value(a));
    });
}

Var scale(Tape& t, Var a, double s) {
    Mat out = t.value(a) * s;
    return t.push(std::move(out), {a}, [a, s](Tape& t, const Mat& g) { t.grad(a) += g * s; });
}

Var add_row(Tape& t, Var a, Var row) {
    const Mat& r = t.value(row);
    if (r.rows() != 1 || r.cols() != t.value(a).cols()) {
        throw std::invalid_argument("add_row: shape mismatch");
    }
    Mat out = t.value(a).rowwise() + r.row(0);
    return t.push(std::move(out), {a, row}, [a, row](Tape& t, const Mat& g) {
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(row)) t.grad(row) += g.colwise().sum();
    });
}

Var mul_row(Tape& t, Var a, Var row) {
    const Mat& r = t.value(row);
    if (r.rows() != 1 || r.cols() != t.value(a).cols()) {
        throw std::invalid_argument("mul_row: shape mismatch");
    }
    Mat out = t.value(a).array().rowwise() * r.row(0).array();
    return t.push(std::move(out), {a, row}, [a, row](Tape& t, const Mat& g) {
        if (t.requires_grad(a)) t.grad(a).array() += g.array().rowwise() * t.value(row).row(0).array();
        if (t.requires_grad(row)) t.grad(row) += g.cwiseProduct(t.value(a)).colwise().sum();
    });
}

namespace {

// Id the next pushed node will receive; lets pointwise closures read their own output.
Var next_id(const Tape& t) { return Var{static_cast<int>(t.node_count())}; }

}  // namespace

Var tanh(Tape& t, Var a) {
    Mat out = t.value(a).array().tanh().matrix();
    const Var self = next_id(t);
    return t.push(std::move(out), {a}, [a, self](Tape& t, const Mat& g) {
        t.grad(a).array() += g.array() * (1.0 - t.value(self).array().square());
    });
}

Var silu(Tape& t, Var a) {
    const Mat& x = t.value(a);
    Mat sig = (1.0 / (1.0 + (-x.array()).exp())).matrix();
    Mat out = x.cwiseProduct(sig);
    return t.push(std::move(out), {a}, [a, sig = std::move(sig)](Tape& t, const Mat& g) {
        const auto& x = t.value(a).array();
        t.grad(a).array() += g.array() * (sig.array() * (1.0 + x * (1.0 - sig.array())));
    });
}

Var gelu(Tape& t, Var a) {
    static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    const Mat& x = t.value(a);
    Mat inner = (c * (x.array() + 0.044715 * x.array().cube())).matrix();
    Mat th = inner.array().tanh().matrix();
    Mat out = (0.5 * x.array() * (1.0 + th.array())).matrix();
    return t.push(std::move(out), {a}, [a, th = std::move(th)](Tape& t, const Mat& g) {
        const auto x = t.value(a).array();
        const auto sech2 = 1.0 - th.array().square();
        const auto d = 0.5 * (1.0 + th.array()) + 0.5 * x * sech2 * c * (1.0 + 3.0 * 0.044715 * x.square());
        t.grad(a).array() += g.array() * d;
    });
}

Var exp(Tape& t, Var a) {
    Mat out = t.value(a).array().exp().matrix();
    const Var self = next_id(t);
    return t.push(std::move(out), {a}, [a, self](Tape& t, const Mat& g) {
        t.grad(a) += g.cwiseProduct(t.value(self));
    });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const Eigen::Index rows = t.value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += t.value(p).cols();
    }
    Mat out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    for (Var p : parts) {
        const Mat& v = t.value(p);
        out.middleCols(off, v.cols()) = v;
        offsets.push_back(off);
        off += v.cols();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return t.push(std::move(out), parts, [ps, offsets](Tape& t, const Mat& g) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!t.requires_grad(ps[i])) continue;
            Mat& gi = t.grad(ps[i]);
            gi += g.middleCols(offsets[i], gi.cols());
        }
    });
}

Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
    const Mat& v = t.value(a);
    if (start < 0 || count < 0 || start + count > v.cols()) throw std::out_of_range("slice_cols");
    Mat out = v.middleCols(start, count);
    return t.push(std::move(out), {a}, [a, start, count](Tape& t, const Mat& g) {
        t.grad(a).middleCols(start, count) += g;
    });
}

Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
    const Mat& v = t.value(a);
    if (start < 0 || count < 0 || start + count > v.rows()) throw std::out_of_range("slice_rows");
    Mat out = v.middleRows(start, count);
    return t.push(std::move(out), {a}, [a, start, count](Tape& t, const Mat& g) {
        t.grad(a).middleRows(start, count) += g;
    });
}

Var gather_rows(Tape& t, Var table, std::vector<int> idx) {
    const Mat& tab = t.value(table);
    Mat out(static_cast<Eigen::Index>(idx.size()), tab.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= tab.rows()) throw std::out_of_range("gather_rows index");
        out.row(static_cast<Eigen::Index>(i)) = tab.row(idx[i]);
    }
    return t.push(std::move(out), {table}, [table, idx = std::move(idx)](Tape& t, const Mat& g) {
        Mat& gt = t.grad(table);
        for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var shift_rows(Tape& t, Var a, Eigen::Index d) {
    const Mat& v = t.value(a);
    Mat out = Mat::Zero(v.rows(), v.cols());
    if (d < v.rows()) out.bottomRows(v.rows() - d) = v.topRows(v.rows() - d);
    return t.push(std::move(out), {a}, [a, d](Tape& t, const Mat& g) {
        const Eigen::Index n = g.rows();
        if (d < n) t.grad(a).topRows(n - d) += g.bottomRows(n - d);
    });
}

Var layer_norm(Tape& t, Var a, double eps) {
    const Mat& x = t.value(a);
    const Eigen::Index n = x.cols();
    Mat out(x.rows(), n);
    Vec inv_std(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        out.row(i) = (x.row(i).array() - mean) * inv_std(i);
    }
    const Var self = next_id(t);
    return t.push(std::move(out), {a}, [a, self, inv_std = std::move(inv_std)](Tape& t, const Mat& g) {
        const Mat& y = t.value(self);
        Mat& ga = t.grad(a);
        const double n = static_cast<double>(y.cols());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            const double gm = g.row(i).sum() / n;
            const double gy = g.row(i).dot(y.row(i)) / n;
            ga.row(i).array() += inv_std(i) * (g.row(i).array() - gm - y.row(i).array() * gy);
        }
    });
}

Var softmax_rows(Tape& t, Var a, double scale, bool causal) {
    const Mat& x = t.value(a);
    Mat out = Mat::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Eigen::Index n = causal ? std::min<Eigen::Index>(i + 1, x.cols()) : x.cols();
        const double m = x.row(i).head(n).maxCoeff() * scale;
        double z = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double e = std::exp(x(i, j) * scale - m);
            out(i, j) = e;
            z += e;
        }
        out.row(i).head(n) /= z;
    }
    const Var self = next_id(t);
    return t.push(std::move(out), {a}, [a, self, scale](Tape& t, const Mat& g) {
        const Mat& p = t.value(self);
        Mat& ga = t.grad(a);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const double dot = p.row(i).dot(g.row(i));
            ga.row(i).array() += scale * p.row(i).array() * (g.row(i).array() - dot);
        }
    });
}

Var linear(Tape& t, Var x, const Param& w, const Param* b) {
    Var y = matmul(t, x, t.param(w));
    if (b) y = add_row(t, y, t.param(*b));
    return y;
}

Mat xavier(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng, double gain) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Mat m(in, out);
    for (Eigen::Index j = 0; j < out; ++j)
        for (Eigen::Index i = 0; i < in; ++i) m(i, j) = dist(rng);
    return m;
}

Mat normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
}

Adam::Adam(const ParamSet& params, AdamConfig cfg) : cfg_(cfg), m_(params), v_(params) {}

void Adam::step(ParamSet& params, const Grads& grads) {
    if (m_.size() != params.size()) {
        m_ = Grads(params);
        v_ = Grads(params);
    }
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0) {
        const double n = grads.norm();
        if (n > cfg_.clip_norm) clip = cfg_.clip_norm / n;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Mat g = grads[i] * clip;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        params[i].value.array() -=
            cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
}

}  // namespace beatflow::nn
