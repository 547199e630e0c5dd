#include "karma/tensor.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "karma/error.h"

namespace karma {

std::size_t shape_numel(std::span<const int> dims) {
  std::size_t n = 1;
  for (const int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

Tensor::Tensor(std::vector<int> d, std::vector<float> v) : dims(std::move(d)), values(std::move(v)) {
  for (const int x : dims) {
    if (x < 0) throw Error(ErrorCode::kShapeMismatch, "negative dimension in " + shape_str());
  }
  if (shape_numel(dims) != values.size()) {
    throw Error(ErrorCode::kShapeMismatch, "tensor " + shape_str() + " given " +
                                               std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<int> dims) {
  const std::size_t n = shape_numel(dims);
  return Tensor(std::move(dims), std::vector<float>(n, 0.0f));
}

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](float x) { return std::isfinite(x); });
}

std::string Tensor::shape_str() const {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out << ',';
    out << dims[i];
  }
  out << ']';
  return out.str();
}

Parameter& ParameterStore::add(std::string name, Tensor init) {
  if (find(name)) throw Error(ErrorCode::kInvalidConfig, "duplicate parameter '" + name + "'");
  Tensor grad = Tensor::zeros(init.dims);
  params_.push_back({std::move(name), std::move(init), std::move(grad)});
  return params_.back();
}

Parameter& ParameterStore::at(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw Error(ErrorCode::kIncompatibleCheckpoint, "missing parameter '" + std::string(name) + "'");
}

const Parameter& ParameterStore::at(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->at(name);
}

const Parameter* ParameterStore::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.values.begin(), p.grad.values.end(), 0.0f);
}

bool ParameterStore::same_values(const ParameterStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.dims != b.value.dims) return false;
    if (!std::equal(a.value.values.begin(), a.value.values.end(), b.value.values.begin(),
                    [](float x, float y) { return std::bit_cast<uint32_t>(x) == std::bit_cast<uint32_t>(y); })) {
      return false;
    }
  }
  return true;
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(ErrorCode::kShapeMismatch,
              std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const std::string& what) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + what + " for shape " + a.shape_str());
}

float stable_sigmoid(float x) {
  if (x >= 0.0f) {
    const float e = std::exp(-x);
    return 1.0f / (1.0f + e);
  }
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

void log_softmax_row(const float* in, float* out, int c) {
  float mx = in[0];
  for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
  double s = 0.0;
  for (int j = 0; j < c; ++j) s += std::exp(static_cast<double>(in[j] - mx));
  const float lse = mx + static_cast<float>(std::log(s));
  for (int j = 0; j < c; ++j) out[j] = in[j] - lse;
}

Var Graph::push(Op op, std::vector<int> inputs, Tensor value, const char* name) {
  if (!value.all_finite()) {
    throw Error(ErrorCode::kNonFinite, std::string(name) + " produced non-finite values");
  }
  Node n;
  n.op = op;
  n.requires_grad = false;
  for (const int i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "invalid graph handle");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor& Graph::value(Var v) const { return val(v.id); }

const Tensor& Graph::val(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.param ? n.param->value : n.value;
}
const Tensor& Graph::grad(Var v) const { return node(v).grad; }

Var Graph::constant(Tensor t) { return push(Op::kConstant, {}, std::move(t), "constant"); }

Var Graph::param(Parameter& p) {
  // The node reads the parameter in place instead of copying it.
  if (!p.value.all_finite()) {
    throw Error(ErrorCode::kNonFinite, "parameter '" + p.name + "' holds non-finite values");
  }
  Node n;
  n.op = Op::kParam;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::add(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.dims == y.dims) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[i];
    return push(Op::kAdd, {a.id, b.id}, std::move(out), "add");
  }
  const bool bias = x.rank() == 2 && y.numel() == static_cast<std::size_t>(x.cols()) &&
                    (y.rank() == 1 || (y.rank() == 2 && y.dims[0] == 1));
  if (!bias) shape_error("add", x, y);
  Tensor out = x;
  const int n = x.cols();
  for (int r = 0; r < x.rows(); ++r) {
    float* row = out.values.data() + static_cast<std::size_t>(r) * n;
    for (int j = 0; j < n; ++j) row[j] += y[j];
  }
  return push(Op::kAddBias, {a.id, b.id}, std::move(out), "add");
}

Var Graph::mul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.dims != y.dims) shape_error("mul", x, y);
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= y[i];
  return push(Op::kMul, {a.id, b.id}, std::move(out), "mul");
}

Var Graph::scale(Var a, float s) {
  Tensor out = value(a);
  for (auto& v : out.values) v *= s;
  Var r = push(Op::kScale, {a.id}, std::move(out), "scale");
  nodes_.back().scalar = s;
  return r;
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.rank() != 2 || y.rank() != 2 || x.dims[1] != y.dims[0]) shape_error("matmul", x, y);
  const int m = x.dims[0], k = x.dims[1], n = y.dims[1];
  Tensor out = Tensor::zeros({m, n});
  // Per output element the accumulation runs over k in ascending order, so
  // a row's result does not depend on how many rows are in the batch.
  for (int i = 0; i < m; ++i) {
    float* o = out.values.data() + static_cast<std::size_t>(i) * n;
    const float* xa = x.values.data() + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const float s = xa[kk];
      const float* yb = y.values.data() + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) o[j] += s * yb[j];
    }
  }
  return push(Op::kMatmul, {a.id, b.id}, std::move(out), "matmul");
}

Var Graph::embedding_gather(Var table, std::span<const int> ids) {
  const Tensor& t = value(table);
  if (t.rank() != 2) shape_error("embedding_gather", t, "table must be rank 2");
  const int v = t.dims[0], d = t.dims[1];
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) {
      throw Error(ErrorCode::kOutOfVocabulary, "embedding_gather: id " + std::to_string(ids[i]) +
                                                   " outside table " + t.shape_str());
    }
    std::copy_n(t.values.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.values.data() + i * d);
  }
  Var r = push(Op::kGather, {table.id}, std::move(out), "embedding_gather");
  nodes_.back().ids.assign(ids.begin(), ids.end());
  return r;
}

Var Graph::reshape(Var a, std::vector<int> dims) {
  const Tensor& x = value(a);
  if (shape_numel(dims) != x.numel()) {
    Tensor target;
    target.dims = dims;
    shape_error("reshape", x, target);
  }
  Tensor out(std::move(dims), x.values);
  return push(Op::kReshape, {a.id}, std::move(out), "reshape");
}

Var Graph::mean_pool(Var a, int axis) {
  const Tensor& x = value(a);
  if (x.numel() == 0) shape_error("mean_pool", x, "empty input");
  Tensor out;
  if (x.rank() == 1) {
    if (axis != 0) shape_error("mean_pool", x, "axis out of range");
    double s = 0.0;
    for (const float v : x.values) s += v;
    out = Tensor({1}, {static_cast<float>(s / static_cast<double>(x.numel()))});
  } else if (x.rank() == 2) {
    const int m = x.dims[0], n = x.dims[1];
    if (axis == 0) {
      out = Tensor::zeros({1, n});
      for (int i = 0; i < m; ++i) {
        const float* row = x.values.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) out[j] += row[j];
      }
      for (auto& v : out.values) v /= static_cast<float>(m);
    } else if (axis == 1) {
      out = Tensor::zeros({m, 1});
      for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += x.values[static_cast<std::size_t>(i) * n + j];
        out[i] = static_cast<float>(s / n);
      }
    } else {
      shape_error("mean_pool", x, "axis out of range");
    }
  } else {
    shape_error("mean_pool", x, "rank must be 1 or 2");
  }
  Var r = push(Op::kMeanPool, {a.id}, std::move(out), "mean_pool");
  nodes_.back().axis = axis;
  return r;
}

Var Graph::tanh(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values) v = std::tanh(v);
  return push(Op::kTanh, {a.id}, std::move(out), "tanh");
}

Var Graph::relu(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values) v = v > 0.0f ? v : 0.0f;
  return push(Op::kRelu, {a.id}, std::move(out), "relu");
}

Var Graph::sigmoid(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values) v = stable_sigmoid(v);
  return push(Op::kSigmoid, {a.id}, std::move(out), "sigmoid");
}

Var Graph::softmax(Var a, int axis) {
  const Tensor& x = value(a);
  if (x.rank() < 1 || x.rank() > 2 || axis < 0 || axis >= x.rank()) {
    shape_error("softmax", x, "axis out of range");
  }
  Tensor out = x;
  const int rows = x.rows(), cols = x.cols();
  // Normalize either each row (last axis) or each column (axis 0 of rank 2).
  const bool by_row = axis == x.rank() - 1;
  const int outer = by_row ? rows : cols;
  const int inner = by_row ? cols : rows;
  for (int o = 0; o < outer; ++o) {
    const auto idx = [&](int i) {
      return by_row ? static_cast<std::size_t>(o) * cols + i : static_cast<std::size_t>(i) * cols + o;
    };
    float mx = x[idx(0)];
    for (int i = 1; i < inner; ++i) mx = std::max(mx, x[idx(i)]);
    double s = 0.0;
    for (int i = 0; i < inner; ++i) s += std::exp(static_cast<double>(x[idx(i)] - mx));
    for (int i = 0; i < inner; ++i) {
      out[idx(i)] = static_cast<float>(std::exp(static_cast<double>(x[idx(i)] - mx)) / s);
    }
  }
  Var r = push(Op::kSoftmax, {a.id}, std::move(out), "softmax");
  nodes_.back().axis = axis;
  return r;
}

Var Graph::log_softmax_gather(Var logits, std::span<const int> targets) {
  const Tensor& x = value(logits);
  if (x.rank() < 1 || x.rank() > 2) shape_error("log_softmax_gather", x, "rank must be 1 or 2");
  const int n = x.rows(), c = x.cols();
  if (targets.size() != static_cast<std::size_t>(n)) {
    shape_error("log_softmax_gather", x, std::to_string(targets.size()) + " targets");
  }
  std::vector<float> logp(x.numel());
  Tensor out = Tensor::zeros({n});
  for (int i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= c) {
      throw Error(ErrorCode::kOutOfVocabulary,
                  "log_softmax_gather: target " + std::to_string(targets[i]) + " outside " +
                      x.shape_str());
    }
    log_softmax_row(x.values.data() + static_cast<std::size_t>(i) * c,
                    logp.data() + static_cast<std::size_t>(i) * c, c);
    out[i] = logp[static_cast<std::size_t>(i) * c + targets[i]];
  }
  Var r = push(Op::kLogSoftmaxGather, {logits.id}, std::move(out), "log_softmax_gather");
  nodes_.back().ids.assign(targets.begin(), targets.end());
  nodes_.back().aux = std::move(logp);
  return r;
}

Var Graph::cross_entropy_with_logits(Var logits, std::span<const int> targets) {
  const Tensor& x = value(logits);
  if (x.rank() < 1 || x.rank() > 2) shape_error("cross_entropy_with_logits", x, "rank must be 1 or 2");
  const int n = x.rows(), c = x.cols();
  if (targets.size() != static_cast<std::size_t>(n)) {
    shape_error("cross_entropy_with_logits", x, std::to_string(targets.size()) + " targets");
  }
  std::vector<float> logp(x.numel());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= c) {
      throw Error(ErrorCode::kOutOfVocabulary,
                  "cross_entropy_with_logits: target " + std::to_string(targets[i]) +
                      " outside " + x.shape_str());
    }
    log_softmax_row(x.values.data() + static_cast<std::size_t>(i) * c,
                    logp.data() + static_cast<std::size_t>(i) * c, c);
    total -= logp[static_cast<std::size_t>(i) * c + targets[i]];
  }
  Var r = push(Op::kCrossEntropy, {logits.id},
               Tensor::scalar(static_cast<float>(total / std::max(n, 1))), "cross_entropy_with_logits");
  nodes_.back().ids.assign(targets.begin(), targets.end());
  nodes_.back().aux = std::move(logp);
  return r;
}

Var Graph::bce_with_logits(Var logits, std::span<const float> labels) {
  const Tensor& x = value(logits);
  if (x.numel() != labels.size() || x.numel() == 0) {
    shape_error("bce_with_logits", x, std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double z = x[i];
    total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  Var r = push(Op::kBce, {logits.id},
               Tensor::scalar(static_cast<float>(total / static_cast<double>(x.numel()))),
               "bce_with_logits");
  nodes_.back().aux.assign(labels.begin(), labels.end());
  return r;
}

Var Graph::concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat: no inputs");
  const Tensor& first = value(parts[0]);
  std::vector<int> inputs;
  Tensor out;
  if (first.rank() == 1) {
    if (axis != 0) shape_error("concat", first, "axis out of range");
    std::vector<float> vals;
    for (const Var p : parts) {
      const Tensor& t = value(p);
      if (t.rank() != 1) shape_error("concat", first, t);
      vals.insert(vals.end(), t.values.begin(), t.values.end());
      inputs.push_back(p.id);
    }
    const int n = static_cast<int>(vals.size());
    out = Tensor({n}, std::move(vals));
  } else if (first.rank() == 2 && axis == 0) {
    const int c = first.dims[1];
    std::vector<float> vals;
    int rows = 0;
    for (const Var p : parts) {
      const Tensor& t = value(p);
      if (t.rank() != 2 || t.dims[1] != c) shape_error("concat", first, t);
      vals.insert(vals.end(), t.values.begin(), t.values.end());
      rows += t.dims[0];
      inputs.push_back(p.id);
    }
    out = Tensor({rows, c}, std::move(vals));
  } else if (first.rank() == 2 && axis == 1) {
    const int r = first.dims[0];
    int cols = 0;
    for (const Var p : parts) {
      const Tensor& t = value(p);
      if (t.rank() != 2 || t.dims[0] != r) shape_error("concat", first, t);
      cols += t.dims[1];
      inputs.push_back(p.id);
    }
    out = Tensor::zeros({r, cols});
    int off = 0;
    for (const Var p : parts) {
      const Tensor& t = value(p);
      const int c = t.dims[1];
      for (int i = 0; i < r; ++i) {
        std::copy_n(t.values.data() + static_cast<std::size_t>(i) * c, c,
                    out.values.data() + static_cast<std::size_t>(i) * cols + off);
      }
      off += c;
    }
  } else {
    shape_error("concat", first, "axis out of range");
  }
  Var r = push(Op::kConcat, std::move(inputs), std::move(out), "concat");
  nodes_.back().axis = axis;
  return r;
}

Var Graph::sum(Var a) {
  double s = 0.0;
  for (const float v : value(a).values) s += v;
  return push(Op::kSum, {a.id}, Tensor::scalar(static_cast<float>(s)), "sum");
}

Var Graph::mean(Var a) {
  const Tensor& x = value(a);
  if (x.numel() == 0) shape_error("mean", x, "empty input");
  double s = 0.0;
  for (const float v : x.values) s += v;
  return push(Op::kMean, {a.id}, Tensor::scalar(static_cast<float>(s / x.numel())), "mean");
}

Var Graph::clipped_surrogate(Var logp_new, std::span<const float> logp_old,
                             std::span<const float> advantages, float clip_epsilon) {
  const Tensor& x = value(logp_new);
  const std::size_t n = x.numel();
  if (logp_old.size() != n || advantages.size() != n || n == 0) {
    shape_error("clipped_surrogate", x,
                std::to_string(logp_old.size()) + " old logprobs / " +
                    std::to_string(advantages.size()) + " advantages");
  }
  // aux holds d(objective_t)/d(logp_new_t) before the 1/n mean factor.
  std::vector<float> dlogp(n);
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double ratio = std::exp(static_cast<double>(x[t]) - logp_old[t]);
    const double a = advantages[t];
    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    const double unclipped_term = ratio * a;
    const double clipped_term = clipped * a;
    if (unclipped_term <= clipped_term) {
      total += unclipped_term;
      dlogp[t] = static_cast<float>(unclipped_term);
    } else {
      total += clipped_term;
      dlogp[t] = 0.0f;
    }
  }
  Var r = push(Op::kSurrogate, {logp_new.id},
               Tensor::scalar(static_cast<float>(total / static_cast<double>(n))),
               "clipped_surrogate");
  nodes_.back().aux = std::move(dlogp);
  return r;
}

Tensor& Graph::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& v = val(id);
  if (n.grad.values.empty() && v.numel() > 0) n.grad = Tensor::zeros(v.dims);
  return n.grad;
}

void Graph::backward(Var loss) {
  node(loss);
  if (val(loss.id).numel() != 1) {
    throw Error(ErrorCode::kNonScalarLoss,
                "backward needs a scalar loss, got shape " + val(loss.id).shape_str());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id)[0] = 1.0f;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.values.empty()) continue;
    if (!n.grad.all_finite()) {
      throw Error(ErrorCode::kNonFinite, "non-finite gradient during backward");
    }
    backprop(n);
  }
}

void Graph::backprop(Node& n) {
  const Tensor& g = n.grad;
  const auto needs = [this](int id) { return nodes_[static_cast<std::size_t>(id)].requires_grad; };
  switch (n.op) {
    case Op::kConstant:
      break;
    case Op::kParam: {
      auto& pg = n.param->grad.values;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
      break;
    }
    case Op::kAdd: {
      for (const int in : n.inputs) {
        if (!needs(in)) continue;
        Tensor& gi = grad_buffer(in);
        for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
      }
      break;
    }
    case Op::kAddBias: {
      if (needs(n.inputs[0])) {
        Tensor& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (needs(n.inputs[1])) {
        Tensor& gb = grad_buffer(n.inputs[1]);
        const int cols = g.cols();
        for (int r = 0; r < g.rows(); ++r) {
          for (int j = 0; j < cols; ++j) gb[j] += g[static_cast<std::size_t>(r) * cols + j];
        }
      }
      break;
    }
    case Op::kMul: {
      const Tensor& a = val(n.inputs[0]);
      const Tensor& b = val(n.inputs[1]);
      if (needs(n.inputs[0])) {
        Tensor& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * b[i];
      }
      if (needs(n.inputs[1])) {
        Tensor& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }
    case Op::kScale: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.scalar;
      break;
    }
    case Op::kMatmul: {
      const Tensor& a = val(n.inputs[0]);
      const Tensor& b = val(n.inputs[1]);
      const int m = a.dims[0], k = a.dims[1], cols = b.dims[1];
      if (needs(n.inputs[0])) {
        Tensor& ga = grad_buffer(n.inputs[0]);
        // ga += g * b^T, accumulated row by row over a transposed copy of b so
        // the inner loop is a contiguous axpy.
        std::vector<float> bt(static_cast<std::size_t>(k) * cols);
        for (int kk = 0; kk < k; ++kk) {
          for (int j = 0; j < cols; ++j) {
            bt[static_cast<std::size_t>(j) * k + kk] = b.values[static_cast<std::size_t>(kk) * cols + j];
          }
        }
        for (int i = 0; i < m; ++i) {
          const float* gr = g.values.data() + static_cast<std::size_t>(i) * cols;
          float* gar = ga.values.data() + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < cols; ++j) {
            const float s = gr[j];
            if (s == 0.0f) continue;
            const float* btr = bt.data() + static_cast<std::size_t>(j) * k;
            for (int kk = 0; kk < k; ++kk) gar[kk] += s * btr[kk];
          }
        }
      }
      if (needs(n.inputs[1])) {
        Tensor& gb = grad_buffer(n.inputs[1]);
        for (int i = 0; i < m; ++i) {
          const float* gr = g.values.data() + static_cast<std::size_t>(i) * cols;
          const float* ar = a.values.data() + static_cast<std::size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const float s = ar[kk];
            if (s == 0.0f) continue;
            float* gbr = gb.values.data() + static_cast<std::size_t>(kk) * cols;
            for (int j = 0; j < cols; ++j) gbr[j] += s * gr[j];
          }
        }
      }
      break;
    }
    case Op::kGather: {
      Tensor& gt = grad_buffer(n.inputs[0]);
      const int d = g.cols();
      for (std::size_t i = 0; i < n.ids.size(); ++i) {
        float* dst = gt.values.data() + static_cast<std::size_t>(n.ids[i]) * d;
        const float* src = g.values.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
      break;
    }
    case Op::kReshape: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      break;
    }
    case Op::kMeanPool: {
      const Tensor& x = val(n.inputs[0]);
      Tensor& ga = grad_buffer(n.inputs[0]);
      if (x.rank() == 1) {
        const float s = g[0] / static_cast<float>(x.numel());
        for (auto& v : ga.values) v += s;
      } else {
        const int m = x.dims[0], cols = x.dims[1];
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < cols; ++j) {
            const float gv = n.axis == 0 ? g[j] / static_cast<float>(m) : g[i] / static_cast<float>(cols);
            ga[static_cast<std::size_t>(i) * cols + j] += gv;
          }
        }
      }
      break;
    }
    case Op::kTanh: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0f - n.value[i] * n.value[i]);
      break;
    }
    case Op::kRelu: {
      const Tensor& x = val(n.inputs[0]);
      Tensor& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (x[i] > 0.0f) ga[i] += g[i];
      }
      break;
    }
    case Op::kSigmoid: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.value[i] * (1.0f - n.value[i]);
      break;
    }
    case Op::kSoftmax: {
      const Tensor& y = n.value;
      Tensor& ga = grad_buffer(n.inputs[0]);
      const int rows = y.rows(), cols = y.cols();
      const bool by_row = n.axis == y.rank() - 1;
      const int outer = by_row ? rows : cols;
      const int inner = by_row ? cols : rows;
      for (int o = 0; o < outer; ++o) {
        const auto idx = [&](int i) {
          return by_row ? static_cast<std::size_t>(o) * cols + i : static_cast<std::size_t>(i) * cols + o;
        };
        double dot = 0.0;
        for (int i = 0; i < inner; ++i) dot += static_cast<double>(g[idx(i)]) * y[idx(i)];
        for (int i = 0; i < inner; ++i) {
          ga[idx(i)] += y[idx(i)] * static_cast<float>(g[idx(i)] - dot);
        }
      }
      break;
    }
    case Op::kLogSoftmaxGather: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      const int c = ga.cols();
      for (std::size_t i = 0; i < n.ids.size(); ++i) {
        const float gi = g[i];
        if (gi == 0.0f) continue;
        const float* lp = n.aux.data() + i * c;
        float* dst = ga.values.data() + i * c;
        for (int j = 0; j < c; ++j) dst[j] -= gi * std::exp(lp[j]);
        dst[n.ids[i]] += gi;
      }
      break;
    }
    case Op::kCrossEntropy: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      const int c = ga.cols();
      const float s = g[0] / static_cast<float>(n.ids.size());
      for (std::size_t i = 0; i < n.ids.size(); ++i) {
        const float* lp = n.aux.data() + i * c;
        float* dst = ga.values.data() + i * c;
        for (int j = 0; j < c; ++j) dst[j] += s * std::exp(lp[j]);
        dst[n.ids[i]] -= s;
      }
      break;
    }
    case Op::kBce: {
      const Tensor& x = val(n.inputs[0]);
      Tensor& ga = grad_buffer(n.inputs[0]);
      const float s = g[0] / static_cast<float>(x.numel());
      for (std::size_t i = 0; i < x.numel(); ++i) ga[i] += s * (stable_sigmoid(x[i]) - n.aux[i]);
      break;
    }
    case Op::kConcat: {
      if (n.value.rank() == 1 || n.axis == 0) {
        std::size_t off = 0;
        for (const int in : n.inputs) {
          const std::size_t len = val(in).numel();
          if (needs(in)) {
            Tensor& gi = grad_buffer(in);
            for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
          }
          off += len;
        }
      } else {
        const int r = n.value.dims[0], cols = n.value.dims[1];
        int off = 0;
        for (const int in : n.inputs) {
          const int c = val(in).dims[1];
          if (needs(in)) {
            Tensor& gi = grad_buffer(in);
            for (int i = 0; i < r; ++i) {
              for (int j = 0; j < c; ++j) {
                gi[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(i) * cols + off + j];
              }
            }
          }
          off += c;
        }
      }
      break;
    }
    case Op::kSum: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      for (auto& v : ga.values) v += g[0];
      break;
    }
    case Op::kMean: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      const float s = g[0] / static_cast<float>(ga.numel());
      for (auto& v : ga.values) v += s;
      break;
    }
    case Op::kSurrogate: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      const float s = g[0] / static_cast<float>(ga.numel());
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += s * n.aux[i];
      break;
    }
  }
}

}  // namespace karma
