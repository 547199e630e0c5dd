#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace karma {

// Dense row-major float tensor.
struct Tensor {
  std::vector<int> dims;
  std::vector<float> values;

  Tensor() = default;
  Tensor(std::vector<int> dims, std::vector<float> values);

  static Tensor zeros(std::vector<int> dims);
  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return values.size(); }
  int rank() const { return static_cast<int>(dims.size()); }
  // Leading/trailing extents of a rank-2 view; rank-1 tensors are one row.
  int rows() const { return rank() == 2 ? dims[0] : 1; }
  int cols() const { return dims.empty() ? 1 : dims.back(); }

  float& operator[](std::size_t i) { return values[i]; }
  float operator[](std::size_t i) const { return values[i]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols() + c]; }

  bool all_finite() const;
  std::string shape_str() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t shape_numel(std::span<const int> dims);

// out[j] = in[j] - logsumexp(in[0..c)). Shared by the graph ops and the
// sampling path so both produce identical values.
void log_softmax_row(const float* in, float* out, int c);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named parameters with stable addresses. Copying a store deep-copies the
// parameters.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor init);

  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  // True when names, shapes and values match bitwise.
  bool same_values(const ParameterStore& other) const;

 private:
  std::deque<Parameter> params_;
};

// Handle to a node of a Graph.
struct Var {
  int id = -1;
};

// Tape of tensor operations with reverse-mode differentiation. Nodes are
// appended in evaluation order, so creation order is a topological order.
// Every operation validates shapes (Error kShapeMismatch naming the op and
// both shapes) and rejects non-finite results (Error kNonFinite).
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  // Leaf bound to a parameter; backward() accumulates into `p.grad`.
  Var param(Parameter& p);

  // Elementwise on equal shapes, or a [n] / [1,n] bias added to every row
  // of an [m,n] left operand.
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, float s);
  Var matmul(Var a, Var b);
  // Rows of `table` ([V,d]) selected by `ids` -> [ids.size(), d].
  Var embedding_gather(Var table, std::span<const int> ids);
  Var reshape(Var a, std::vector<int> dims);
  // Mean over `axis` of a rank-1 or rank-2 tensor (keeps the axis as 1).
  Var mean_pool(Var a, int axis);
  Var tanh(Var a);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var softmax(Var a, int axis);
  // Per-row log-probability of `targets[i]` under softmax(logits[i]).
  Var log_softmax_gather(Var logits, std::span<const int> targets);
  // Mean negative log-likelihood of `targets` -> scalar.
  Var cross_entropy_with_logits(Var logits, std::span<const int> targets);
  // Mean binary cross-entropy of sigmoid(logits) against 0/1 labels -> scalar.
  Var bce_with_logits(Var logits, std::span<const float> labels);
  Var concat(std::span<const Var> parts, int axis);
  Var sum(Var a);
  Var mean(Var a);
  // mean_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t), r_t = exp(new_t - old_t).
  Var clipped_surrogate(Var logp_new, std::span<const float> logp_old,
                        std::span<const float> advantages, float clip_epsilon);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() target; empty if none reached `v`.
  const Tensor& grad(Var v) const;

  // Reverse sweep from a scalar node. Throws Error(kNonScalarLoss) for a
  // non-scalar target.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    kConstant,
    kParam,
    kAdd,
    kAddBias,
    kMul,
    kScale,
    kMatmul,
    kGather,
    kReshape,
    kMeanPool,
    kTanh,
    kRelu,
    kSigmoid,
    kSoftmax,
    kLogSoftmaxGather,
    kCrossEntropy,
    kBce,
    kConcat,
    kSum,
    kMean,
    kSurrogate,
  };

  struct Node {
    Op op;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    int axis = 0;
    float scalar = 0.0f;
    std::vector<int> ids;
    std::vector<float> aux;
  };

  Var push(Op op, std::vector<int> inputs, Tensor value, const char* name);
  const Node& node(Var v) const;
  const Tensor& val(int id) const;
  Tensor& grad_buffer(int id);
  void backprop(Node& n);

  std::vector<Node> nodes_;
};

}  // namespace karma
