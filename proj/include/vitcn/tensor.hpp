#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vitcn/errors.hpp"
#include "vitcn/rng.hpp"

namespace vitcn {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until touched by backward
    bool requires_grad = false;
    bool produced_on_tape = false; // true for op outputs recorded on a tape
};

} // namespace detail

// Value-semantics handle to an n-dimensional row-major double array.
// Copying a Tensor aliases the underlying node; use clone() for a deep copy.
class Tensor {
  public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_data(Shape shape, std::vector<double> values);
    static Tensor scalar(double value) { return from_data({1}, {value}); }

    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }
    double item() const;              // numel()==1 accessor
    double at(int64_t r, int64_t c) const; // rank-2 accessor

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<double> grad();             // allocates zeros on first use
    std::span<const double> grad() const; // throws if absent
    void zero_grad() { node_->grad.clear(); }

    Tensor clone() const;

    bool is_leaf() const { return !node_->produced_on_tape; }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend class Tape;
};

// Reverse-mode tape. Ops executed inside a TapeScope append one entry each,
// in execution order (so inputs always precede their consumers). backward()
// replays entries once, in reverse.
class Tape {
  public:
    void backward(const Tensor& loss);

    size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }
    void clear();

  private:
    struct Entry {
        std::function<void()> backward;
        std::shared_ptr<detail::TensorNode> output;
    };
    std::vector<Entry> entries_;
    bool consumed_ = false;

    friend void record_entry(std::function<void()> fn, const Tensor& output);
};

// Binds a tape as the thread-local recording target for its lifetime.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* previous_;
};

Tape* active_tape();

// ---- forward/backward ops -------------------------------------------------
//
// Every op validates shapes, computes the forward value, and (when a tape is
// active and any input requires grad) records a backward rule. Reductions run
// left to right so reruns are bit-identical.

Tensor matmul(const Tensor& a, const Tensor& b); // [m,k] x [k,n] -> [m,n]
Tensor transpose(const Tensor& a);               // rank-2

Tensor add(const Tensor& a, const Tensor& b); // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b); // elementwise
Tensor scale(const Tensor& a, double c);

// [m,n] + row [1,n] (or [n]) broadcast over rows; grad of `row` is the
// column sum of the output grad.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor reshape(const Tensor& a, Shape shape); // copies; numel must match
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int64_t begin, int64_t count);
Tensor slice_cols(const Tensor& a, int64_t begin, int64_t count);
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& rows);
Tensor tile_rows(const Tensor& a, int64_t times);

// Pure reindexing: out.flat[i] = a.flat[map[i]]; backward scatter-adds.
Tensor reindex(const Tensor& a, const std::vector<int64_t>& map, Shape out_shape);

Tensor sum_rows(const Tensor& a);  // [m,n] -> [1,n]
Tensor mean_rows(const Tensor& a); // [m,n] -> [1,n]
Tensor sum_all(const Tensor& a);   // [..] -> [1]

Tensor softmax(const Tensor& a, int64_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);     // exact erf-based x * Phi(x)
Tensor softplus(const Tensor& x); // stable log(1 + e^x)
Tensor logsumexp(const Tensor& a);             // all elements -> [1]
Tensor pick(const Tensor& a, int64_t index);   // flat element -> [1]

// Per-feature batch normalization over the rows of x [B,F]. Training mode
// normalizes with batch statistics (biased variance) and folds them into the
// running buffers as a side effect outside the graph; eval mode uses the
// running buffers. gamma/beta are [1,F].
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        Tensor& running_mean, Tensor& running_var, double momentum,
                        double eps);
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, double eps);

// Fills for parameter initialization.
void fill_trunc_normal(Tensor& t, Rng& rng, double std_dev);

} // namespace vitcn
