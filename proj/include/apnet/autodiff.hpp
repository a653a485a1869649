#pragma once

// Minimal reverse-mode automatic differentiation over dense real tensors.
//
// A Graph records every forward op as a node in creation order, which is
// already a topological order. Trainable tensors live outside the graph as
// DiffTensor leaves; backward() accumulates into their grad arrays. A graph
// and the leaves it references must stay on one thread while in use.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "apnet/dsp.hpp"

namespace apnet::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct DiffTensor {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until the first backward pass touches it

  DiffTensor() = default;
  explicit DiffTensor(Shape s, T fill = T(0)) : shape(std::move(s)), values(element_count(shape), fill) {}
  DiffTensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
  void zero_grad() { grad.assign(values.size(), T(0)); }
};

enum class OpKind : std::uint8_t {
  Constant,
  Parameter,
  Conv1d,
  LeakyRelu,
  Add,
  Sub,
  Mul,
  Matmul,
  MeanAll,
  SumAll,
  Cos,
  Sin,
  Exp,
  Log,
  Reshape,
  Transpose,
  Slice,
  Concat,
  Square,
  Abs,
  Scale,
  AddScalar,
  Phase,
  Magnitude,
  ClampMin,
  Stft,
  Istft,
};

const char* op_name(OpKind kind);

struct Var {
  int id = -1;
};

template <typename T>
class Graph {
 public:
  struct Attrs {
    double scalar = 0.0;  // leaky slope, scale factor, additive constant or clamp floor
    int axis = 0;
    std::size_t start = 0;
    std::size_t length = 0;
    int dilation = 1;
    dsp::StftConfig stft;
  };

  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<int> inputs;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    Attrs attrs;
    DiffTensor<T>* leaf = nullptr;
    bool requires_grad = false;
    int time_axis = -1;  // which axis runs along time, -1 if none
    std::string label;
  };

  Var constant(Shape shape, std::vector<T> values, std::string label = {});
  Var constant(const DiffTensor<T>& t, std::string label = {});
  /// Binds a trainable leaf. The tensor must outlive the graph.
  Var parameter(DiffTensor<T>& t, std::string label = {});

  /// x (C_in, F), w (C_out, C_in, k), optional bias (C_out); zero "same" padding of (k-1)*dilation/2.
  Var conv1d(Var x, Var w, Var bias, int dilation = 1);
  Var conv1d(Var x, Var w, int dilation = 1);
  Var leaky_relu(Var x, double slope);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var mean_all(Var x);
  Var sum_all(Var x);
  Var cos(Var x);
  Var sin(Var x);
  Var exp(Var x);
  Var log(Var x);
  Var reshape(Var x, Shape shape);
  Var transpose(Var x);
  Var slice(Var x, int axis, std::size_t start, std::size_t length);
  Var concat(std::span<const Var> parts, int axis);
  Var square(Var x);
  Var abs(Var x);
  Var scale(Var x, double factor);
  Var add_scalar(Var x, double c);
  /// Elementwise phase formula of (re, im), in (-pi, pi].
  Var phase(Var re, Var im);
  Var magnitude(Var re, Var im);
  Var clamp_min(Var x, double floor);
  /// Waveform (T) -> (F, 2*bins): real parts in columns [0, bins), imaginary in [bins, 2*bins).
  Var stft(Var wave, const dsp::StftConfig& cfg);
  /// re, im (F, bins) -> waveform (out_len).
  Var istft(Var re, Var im, const dsp::StftConfig& cfg, std::size_t out_len);

  void backward(Var loss);

  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const std::vector<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).shape; }
  const std::vector<T>& grad(Var v) const { return node(v).grad; }
  T item(Var v) const;
  std::span<const Node> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  void mark_time_axis(Var v, int axis) { nodes_.at(static_cast<std::size_t>(v.id)).time_axis = axis; }

  /// One entry per element of every non-smooth op (leaky_relu/abs input sign, clamp side,
  /// phase branch). Two evaluations with equal signatures lie on the same smooth piece.
  std::vector<std::uint8_t> kink_signature() const;

 private:
  Var push(Node node);
  Node& at(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  void backward_node(std::size_t id);

  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace apnet::ad
