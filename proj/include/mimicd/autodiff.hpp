#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mimicd::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  // Rank-2 view; rank-1 tensors read as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool all_finite() const;
  void fill(double v);

  // Bitwise comparison of shape and payload.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
};

// Named parameters in insertion order plus their AdamW state.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::span<Parameter> params() { return params_; }
  std::span<const Parameter> params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }

  void zero_grad();

  // Values, gradients and optimizer state compared bitwise.
  bool identical(const ParamStore& other, bool include_optimizer = true) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// One decoupled-weight-decay Adam update of every parameter in `stores`
// from their accumulated gradients. Counts as a single optimizer step.
void adamw_step(std::span<ParamStore* const> stores, const AdamWConfig& hyper);
void adamw_step(ParamStore& store, const AdamWConfig& hyper);

// Checkpoint: magic, version, JSON manifest, then raw doubles
// (values, first moments, second moments) in manifest order.
void write_store(std::ostream& out, const ParamStore& store);
ParamStore read_store(std::istream& in);

// Handle to a node on a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

// Define-by-run tape. Nodes are appended in evaluation order, so reverse
// creation order is a valid topological order for the backward sweep.
class Graph {
 public:
  explicit Graph(bool record = true, bool check_finite = false)
      : record_(record), check_finite_(check_finite) {}

  Var constant(Tensor value);
  Var param(Parameter& p);
  // Read-only parameter use; only valid on a graph built without recording.
  Var param(const Parameter& p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a [1 x n] row over every row of a
  Var gelu(Var a);
  Var layer_norm(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var mean_square(Var a);
  Var scale(Var a, double s);
  Var scale_rows(Var a, std::span<const double> s);  // constant per-row factors

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a single-element node. Parameter gradients are
  // accumulated into Parameter::grad.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    std::function<void(Graph&, Node&)> backward;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Graph&, Node&)> bw,
           const char* op);
  Node& node(Var v) { return nodes_.at(v.id); }
  bool needs(Var v) const { return nodes_.at(v.id).needs_grad; }
  Tensor& grad_buffer(Var v);

  bool record_;
  bool check_finite_;
  std::vector<Node> nodes_;
};

constexpr double kLayerNormEps = 1e-5;

}  // namespace mimicd::ad
