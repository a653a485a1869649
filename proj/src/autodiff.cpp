#include "apnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <sstream>

#include "apnet/error.hpp"
#include "apnet/fft.hpp"

namespace apnet::ad {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Matmul: return "matmul";
    case OpKind::MeanAll: return "mean_all";
    case OpKind::SumAll: return "sum_all";
    case OpKind::Cos: return "cos";
    case OpKind::Sin: return "sin";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Reshape: return "reshape";
    case OpKind::Transpose: return "transpose";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::Square: return "square";
    case OpKind::Abs: return "abs";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Phase: return "phase";
    case OpKind::Magnitude: return "magnitude";
    case OpKind::ClampMin: return "clamp_min";
    case OpKind::Stft: return "stft";
    case OpKind::Istft: return "istft";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  fail(ErrorKind::InvalidInput, std::string("graph: ") + op_name(kind) + ": " + detail);
}

// Splits `shape` around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[static_cast<std::size_t>(i)];
    else if (i == axis) s.extent = shape[static_cast<std::size_t>(i)];
    else s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

}  // namespace

template <typename T>
Var Graph<T>::push(Node node) {
  const std::size_t id = nodes_.size();
  for (std::size_t i = 0; i < node.value.size(); ++i) {
    if (!std::isfinite(static_cast<double>(node.value[i]))) {
      std::ostringstream os;
      os << "graph: non-finite value at element " << i << " of node " << id << " (" << op_name(node.kind);
      if (!node.label.empty()) os << " '" << node.label << "'";
      os << ")";
      fail(ErrorKind::Numeric, os.str());
    }
  }
  if (node.kind != OpKind::Parameter) {
    node.requires_grad = std::any_of(node.inputs.begin(), node.inputs.end(),
                                     [&](int in) { return nodes_[static_cast<std::size_t>(in)].requires_grad; });
  }
  if (node.time_axis == -1) {
    for (int in : node.inputs) {
      const Node& src = nodes_[static_cast<std::size_t>(in)];
      if (src.time_axis >= 0 && src.shape.size() == node.shape.size()) {
        node.time_axis = src.time_axis;
        break;
      }
    }
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(id)};
}

template <typename T>
T Graph<T>::item(Var v) const {
  const Node& n = node(v);
  require(n.value.size() == 1, ErrorKind::Usage, "graph: item() on a non-scalar node");
  return n.value[0];
}

template <typename T>
Var Graph<T>::constant(Shape shape, std::vector<T> values, std::string label) {
  if (element_count(shape) != values.size()) shape_error(OpKind::Constant, "value count does not match shape");
  Node n;
  n.kind = OpKind::Constant;
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.label = std::move(label);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::constant(const DiffTensor<T>& t, std::string label) {
  return constant(t.shape, t.values, std::move(label));
}

template <typename T>
Var Graph<T>::parameter(DiffTensor<T>& t, std::string label) {
  if (element_count(t.shape) != t.values.size()) shape_error(OpKind::Parameter, "value count does not match shape");
  Node n;
  n.kind = OpKind::Parameter;
  n.shape = t.shape;
  n.value = t.values;
  n.leaf = &t;
  n.requires_grad = true;
  n.label = std::move(label);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::conv1d(Var x, Var w, int dilation) {
  return conv1d(x, w, Var{}, dilation);
}

template <typename T>
Var Graph<T>::conv1d(Var x, Var w, Var bias, int dilation) {
  const Node& nx = node(x);
  const Node& nw = node(w);
  if (nx.shape.size() != 2 || nw.shape.size() != 3)
    shape_error(OpKind::Conv1d, "expects x (C_in, F) and w (C_out, C_in, k), got " + shape_string(nx.shape) +
                                    " and " + shape_string(nw.shape));
  const std::size_t cin = nx.shape[0], frames = nx.shape[1];
  const std::size_t cout = nw.shape[0], k = nw.shape[2];
  if (nw.shape[1] != cin) shape_error(OpKind::Conv1d, "weight C_in " + std::to_string(nw.shape[1]) + " != input " + std::to_string(cin));
  if (k % 2 == 0) shape_error(OpKind::Conv1d, "kernel size must be odd");
  if (dilation < 1) shape_error(OpKind::Conv1d, "dilation must be >= 1");
  if (bias.id >= 0 && node(bias).value.size() != cout) shape_error(OpKind::Conv1d, "bias length != C_out");

  Node n;
  n.kind = OpKind::Conv1d;
  n.inputs = {x.id, w.id};
  if (bias.id >= 0) n.inputs.push_back(bias.id);
  n.shape = {cout, frames};
  n.attrs.dilation = dilation;
  n.value.assign(cout * frames, T(0));
  n.time_axis = nx.time_axis >= 0 ? 1 : -1;

  const long pad = static_cast<long>((k - 1) * static_cast<std::size_t>(dilation) / 2);
  const long nf = static_cast<long>(frames);
  const T* xv = nx.value.data();
  const T* wv = nw.value.data();
  for (std::size_t o = 0; o < cout; ++o) {
    T* y = n.value.data() + o * frames;
    if (bias.id >= 0) std::fill(y, y + frames, node(bias).value[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const T* xr = xv + i * frames;
      for (std::size_t j = 0; j < k; ++j) {
        const T wt = wv[(o * cin + i) * k + j];
        const long shift = static_cast<long>(j) * dilation - pad;
        const long lo = std::max(0L, -shift), hi = std::min(nf, nf - shift);
        for (long t = lo; t < hi; ++t) y[t] += wt * xr[t + shift];
      }
    }
  }
  return push(std::move(n));
}

namespace {
template <typename T, typename F>
std::vector<T> map_values(const std::vector<T>& in, F f) {
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return out;
}
}  // namespace

#define APNET_UNARY(name, kind_, expr)          \
  template <typename T>                         \
  Var Graph<T>::name(Var x) {                   \
    Node n;                                     \
    n.kind = OpKind::kind_;                     \
    n.inputs = {x.id};                          \
    n.shape = node(x).shape;                    \
    n.value = map_values(node(x).value, expr);  \
    return push(std::move(n));                  \
  }

APNET_UNARY(cos, Cos, [](T v) { return std::cos(v); })
APNET_UNARY(sin, Sin, [](T v) { return std::sin(v); })
APNET_UNARY(exp, Exp, [](T v) { return std::exp(v); })
APNET_UNARY(log, Log, [](T v) { return std::log(v); })
APNET_UNARY(square, Square, [](T v) { return v * v; })
APNET_UNARY(abs, Abs, [](T v) { return std::abs(v); })
#undef APNET_UNARY

template <typename T>
Var Graph<T>::leaky_relu(Var x, double slope) {
  Node n;
  n.kind = OpKind::LeakyRelu;
  n.inputs = {x.id};
  n.shape = node(x).shape;
  n.attrs.scalar = slope;
  const T s = static_cast<T>(slope);
  n.value = map_values(node(x).value, [s](T v) { return v >= T(0) ? v : s * v; });
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::scale(Var x, double factor) {
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {x.id};
  n.shape = node(x).shape;
  n.attrs.scalar = factor;
  const T s = static_cast<T>(factor);
  n.value = map_values(node(x).value, [s](T v) { return s * v; });
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::add_scalar(Var x, double c) {
  Node n;
  n.kind = OpKind::AddScalar;
  n.inputs = {x.id};
  n.shape = node(x).shape;
  n.attrs.scalar = c;
  const T s = static_cast<T>(c);
  n.value = map_values(node(x).value, [s](T v) { return v + s; });
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::clamp_min(Var x, double floor) {
  Node n;
  n.kind = OpKind::ClampMin;
  n.inputs = {x.id};
  n.shape = node(x).shape;
  n.attrs.scalar = floor;
  const T f = static_cast<T>(floor);
  n.value = map_values(node(x).value, [f](T v) { return v > f ? v : f; });
  return push(std::move(n));
}

namespace {
template <typename T, typename F>
typename Graph<T>::Node binary(const Graph<T>& g, OpKind kind, Var a, Var b, F f) {
  const auto& na = g.node(a);
  const auto& nb = g.node(b);
  if (na.shape != nb.shape)
    shape_error(kind, "shape mismatch " + shape_string(na.shape) + " vs " + shape_string(nb.shape));
  typename Graph<T>::Node n;
  n.kind = kind;
  n.inputs = {a.id, b.id};
  n.shape = na.shape;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = f(na.value[i], nb.value[i]);
  return n;
}

template <typename T>
double phase_value(T re, T im) {
  return dsp::phase_formula(static_cast<double>(re), static_cast<double>(im));
}
}  // namespace

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  return push(binary<T>(*this, OpKind::Add, a, b, [](T x, T y) { return x + y; }));
}
template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  return push(binary<T>(*this, OpKind::Sub, a, b, [](T x, T y) { return x - y; }));
}
template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  return push(binary<T>(*this, OpKind::Mul, a, b, [](T x, T y) { return x * y; }));
}
template <typename T>
Var Graph<T>::phase(Var re, Var im) {
  auto n = binary<T>(*this, OpKind::Phase, re, im, [](T r, T i) {
    // Rounding to T can step outside (-pi, pi]; pull such values back toward zero.
    T p = static_cast<T>(phase_value(r, i));
    if (static_cast<double>(p) > dsp::kPi || static_cast<double>(p) <= -dsp::kPi) p = std::nextafter(p, T(0));
    return p;
  });
  return push(std::move(n));
}
template <typename T>
Var Graph<T>::magnitude(Var re, Var im) {
  return push(binary<T>(*this, OpKind::Magnitude, re, im, [](T r, T i) { return std::sqrt(r * r + i * i); }));
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0])
    shape_error(OpKind::Matmul, "incompatible " + shape_string(na.shape) + " x " + shape_string(nb.shape));
  const std::size_t m = na.shape[0], kk = na.shape[1], p = nb.shape[1];
  Node n;
  n.kind = OpKind::Matmul;
  n.inputs = {a.id, b.id};
  n.shape = {m, p};
  n.value.assign(m * p, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* out = n.value.data() + i * p;
    for (std::size_t k = 0; k < kk; ++k) {
      const T av = na.value[i * kk + k];
      if (av == T(0)) continue;
      const T* br = nb.value.data() + k * p;
      for (std::size_t j = 0; j < p; ++j) out[j] += av * br[j];
    }
  }
  if (na.time_axis == 0) n.time_axis = 0;
  else if (nb.time_axis == 1) n.time_axis = 1;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::mean_all(Var x) {
  const Node& nx = node(x);
  if (nx.value.empty()) shape_error(OpKind::MeanAll, "empty tensor");
  double acc = 0.0;
  for (T v : nx.value) acc += static_cast<double>(v);
  Node n;
  n.kind = OpKind::MeanAll;
  n.inputs = {x.id};
  n.shape = {};
  n.value = {static_cast<T>(acc / static_cast<double>(nx.value.size()))};
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::sum_all(Var x) {
  double acc = 0.0;
  for (T v : node(x).value) acc += static_cast<double>(v);
  Node n;
  n.kind = OpKind::SumAll;
  n.inputs = {x.id};
  n.shape = {};
  n.value = {static_cast<T>(acc)};
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::reshape(Var x, Shape shape) {
  const Node& nx = node(x);
  if (element_count(shape) != nx.value.size())
    shape_error(OpKind::Reshape, "cannot reshape " + shape_string(nx.shape) + " to " + shape_string(shape));
  Node n;
  n.kind = OpKind::Reshape;
  n.inputs = {x.id};
  n.shape = std::move(shape);
  n.value = nx.value;
  n.time_axis = n.shape == nx.shape ? nx.time_axis : -1;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::transpose(Var x) {
  const Node& nx = node(x);
  if (nx.shape.size() != 2) shape_error(OpKind::Transpose, "expects rank 2, got " + shape_string(nx.shape));
  const std::size_t r = nx.shape[0], c = nx.shape[1];
  Node n;
  n.kind = OpKind::Transpose;
  n.inputs = {x.id};
  n.shape = {c, r};
  n.value.resize(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) n.value[j * r + i] = nx.value[i * c + j];
  n.time_axis = nx.time_axis >= 0 ? 1 - nx.time_axis : -1;
  if (n.time_axis < 0) n.time_axis = -2;  // suppress inheritance in push()
  Var v = push(std::move(n));
  if (at(v).time_axis == -2) at(v).time_axis = -1;
  return v;
}

template <typename T>
Var Graph<T>::slice(Var x, int axis, std::size_t start, std::size_t length) {
  const Node& nx = node(x);
  if (axis < 0 || axis >= static_cast<int>(nx.shape.size())) shape_error(OpKind::Slice, "axis out of range");
  const AxisSplit s = split_axis(nx.shape, axis);
  if (start + length > s.extent) shape_error(OpKind::Slice, "range exceeds axis extent");
  Node n;
  n.kind = OpKind::Slice;
  n.inputs = {x.id};
  n.shape = nx.shape;
  n.shape[static_cast<std::size_t>(axis)] = length;
  n.attrs.axis = axis;
  n.attrs.start = start;
  n.attrs.length = length;
  n.value.resize(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(nx.value.begin() + static_cast<long>((o * s.extent + start) * s.inner), length * s.inner,
                n.value.begin() + static_cast<long>(o * length * s.inner));
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) shape_error(OpKind::Concat, "no inputs");
  const Shape& first = node(parts[0]).shape;
  if (axis < 0 || axis >= static_cast<int>(first.size())) shape_error(OpKind::Concat, "axis out of range");
  Shape shape = first;
  shape[static_cast<std::size_t>(axis)] = 0;
  for (Var p : parts) {
    const Shape& ps = node(p).shape;
    if (ps.size() != first.size()) shape_error(OpKind::Concat, "rank mismatch");
    for (std::size_t d = 0; d < ps.size(); ++d)
      if (static_cast<int>(d) != axis && ps[d] != first[d]) shape_error(OpKind::Concat, "non-axis extent mismatch");
    shape[static_cast<std::size_t>(axis)] += ps[static_cast<std::size_t>(axis)];
  }
  Node n;
  n.kind = OpKind::Concat;
  n.attrs.axis = axis;
  n.shape = shape;
  n.value.resize(element_count(shape));
  const AxisSplit out = split_axis(shape, axis);
  std::size_t offset = 0;
  for (Var p : parts) {
    n.inputs.push_back(p.id);
    const Node& np = node(p);
    const AxisSplit s = split_axis(np.shape, axis);
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(np.value.begin() + static_cast<long>(o * s.extent * s.inner), s.extent * s.inner,
                  n.value.begin() + static_cast<long>((o * out.extent + offset) * out.inner));
    offset += s.extent;
  }
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::stft(Var wave, const dsp::StftConfig& cfg) {
  const Node& nw = node(wave);
  if (nw.shape.size() != 1 || nw.value.empty()) shape_error(OpKind::Stft, "expects a non-empty rank-1 waveform");
  const std::size_t len = nw.value.size();
  const std::size_t frames = cfg.num_frames(len);
  const std::size_t bins = static_cast<std::size_t>(cfg.num_bins());
  const auto w = dsp::make_window(cfg.window, cfg.frame_length);

  Node n;
  n.kind = OpKind::Stft;
  n.inputs = {wave.id};
  n.shape = {frames, 2 * bins};
  n.attrs.stft = cfg;
  n.value.resize(frames * 2 * bins);
  n.time_axis = 0;
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size));
  std::vector<std::complex<double>> spec(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const long start = static_cast<long>(f) * cfg.frame_shift - cfg.frame_offset();
    for (int i = 0; i < cfg.frame_length; ++i) {
      const long t = start + i;
      if (t >= 0 && t < static_cast<long>(len))
        buf[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] * static_cast<double>(nw.value[static_cast<std::size_t>(t)]);
    }
    dsp::rfft(buf, spec);
    T* row = n.value.data() + f * 2 * bins;
    for (std::size_t k = 0; k < bins; ++k) {
      row[k] = static_cast<T>(spec[k].real());
      row[bins + k] = static_cast<T>(spec[k].imag());
    }
  }
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::istft(Var re, Var im, const dsp::StftConfig& cfg, std::size_t out_len) {
  const Node& nr = node(re);
  const Node& ni = node(im);
  const std::size_t bins = static_cast<std::size_t>(cfg.num_bins());
  if (nr.shape != ni.shape || nr.shape.size() != 2 || nr.shape[1] != bins)
    shape_error(OpKind::Istft, "expects re/im of shape (F, " + std::to_string(bins) + "), got " +
                                   shape_string(nr.shape) + " and " + shape_string(ni.shape));
  const std::size_t frames = nr.shape[0];
  if (out_len > frames * static_cast<std::size_t>(cfg.frame_shift)) shape_error(OpKind::Istft, "out_len exceeds F * frame_shift");

  Node n;
  n.kind = OpKind::Istft;
  n.inputs = {re.id, im.id};
  n.shape = {out_len};
  n.attrs.stft = cfg;
  n.attrs.length = out_len;
  n.time_axis = 0;

  const auto w = dsp::make_window(cfg.window, cfg.frame_length);
  const auto energy = dsp::window_energy(cfg, frames, out_len);
  const double inv_n = 1.0 / cfg.fft_size;
  std::vector<double> acc(out_len, 0.0);
  std::vector<std::complex<double>> spec(bins);
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size));
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < bins; ++k)
      spec[k] = {static_cast<double>(nr.value[f * bins + k]), static_cast<double>(ni.value[f * bins + k])};
    dsp::irfft_unnormalized(spec, buf);
    const long start = static_cast<long>(f) * cfg.frame_shift - cfg.frame_offset();
    for (int i = 0; i < cfg.frame_length; ++i) {
      const long t = start + i;
      if (t >= 0 && t < static_cast<long>(out_len))
        acc[static_cast<std::size_t>(t)] += w[static_cast<std::size_t>(i)] * buf[static_cast<std::size_t>(i)] * inv_n;
    }
  }
  n.value.resize(out_len);
  for (std::size_t t = 0; t < out_len; ++t) n.value[t] = static_cast<T>(energy[t] > 1e-10 ? acc[t] / energy[t] : 0.0);
  return push(std::move(n));
}

template <typename T>
std::vector<std::uint8_t> Graph<T>::kink_signature() const {
  std::vector<std::uint8_t> sig;
  for (const Node& n : nodes_) {
    switch (n.kind) {
      case OpKind::LeakyRelu:
      case OpKind::Abs:
        for (T v : nodes_[static_cast<std::size_t>(n.inputs[0])].value) sig.push_back(v >= T(0) ? 1 : 0);
        break;
      case OpKind::ClampMin: {
        const T f = static_cast<T>(n.attrs.scalar);
        for (T v : nodes_[static_cast<std::size_t>(n.inputs[0])].value) sig.push_back(v > f ? 1 : 0);
        break;
      }
      case OpKind::Phase: {
        const auto& re = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const auto& im = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        for (std::size_t i = 0; i < re.size(); ++i) sig.push_back(re[i] < T(0) ? (im[i] < T(0) ? 2 : 1) : 0);
        break;
      }
      default:
        break;
    }
  }
  return sig;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  const Node& nl = node(loss);
  require(nl.shape.empty() && nl.value.size() == 1, ErrorKind::Usage,
          "backward: loss must be a scalar, got shape " + shape_string(nl.shape));
  for (Node& n : nodes_) n.grad.clear();
  if (!nl.requires_grad) return;
  at(loss).grad.assign(1, T(1));
  for (std::size_t id = static_cast<std::size_t>(loss.id) + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    backward_node(id);
  }
}

template <typename T>
void Graph<T>::backward_node(std::size_t id) {
  Node& n = nodes_[id];
  const std::vector<T>& g = n.grad;

  // Gradient buffer of input slot `slot`, or nullptr when that input needs none.
  auto gin = [&](std::size_t slot) -> T* {
    Node& src = nodes_[static_cast<std::size_t>(n.inputs[slot])];
    if (!src.requires_grad) return nullptr;
    if (src.grad.empty()) src.grad.assign(src.value.size(), T(0));
    return src.grad.data();
  };
  auto val = [&](std::size_t slot) -> const std::vector<T>& {
    return nodes_[static_cast<std::size_t>(n.inputs[slot])].value;
  };

  switch (n.kind) {
    case OpKind::Constant:
      break;
    case OpKind::Parameter: {
      n.leaf->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) n.leaf->grad[i] += g[i];
      break;
    }
    case OpKind::Conv1d: {
      const Node& nx = nodes_[static_cast<std::size_t>(n.inputs[0])];
      const Node& nw = nodes_[static_cast<std::size_t>(n.inputs[1])];
      const std::size_t cin = nx.shape[0], frames = nx.shape[1], cout = nw.shape[0], k = nw.shape[2];
      const long pad = static_cast<long>((k - 1) * static_cast<std::size_t>(n.attrs.dilation) / 2);
      const long nf = static_cast<long>(frames);
      T* gx = gin(0);
      T* gw = gin(1);
      T* gb = n.inputs.size() > 2 ? gin(2) : nullptr;
      for (std::size_t o = 0; o < cout; ++o) {
        const T* gy = g.data() + o * frames;
        if (gb) {
          T acc = T(0);
          for (std::size_t t = 0; t < frames; ++t) acc += gy[t];
          gb[o] += acc;
        }
        for (std::size_t i = 0; i < cin; ++i) {
          const T* xr = nx.value.data() + i * frames;
          T* gxr = gx ? gx + i * frames : nullptr;
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t widx = (o * cin + i) * k + j;
            const long shift = static_cast<long>(j) * n.attrs.dilation - pad;
            const long lo = std::max(0L, -shift), hi = std::min(nf, nf - shift);
            if (gw) {
              T acc = T(0);
              for (long t = lo; t < hi; ++t) acc += gy[t] * xr[t + shift];
              gw[widx] += acc;
            }
            if (gxr) {
              const T wt = nw.value[widx];
              for (long t = lo; t < hi; ++t) gxr[t + shift] += wt * gy[t];
            }
          }
        }
      }
      break;
    }
    case OpKind::LeakyRelu: {
      if (T* gx = gin(0)) {
        const auto& x = val(0);
        const T s = static_cast<T>(n.attrs.scalar);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += x[i] >= T(0) ? g[i] : s * g[i];
      }
      break;
    }
    case OpKind::Add:
      if (T* ga = gin(0)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (T* gb = gin(1)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      break;
    case OpKind::Sub:
      if (T* ga = gin(0)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (T* gb = gin(1)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      break;
    case OpKind::Mul: {
      const auto& a = val(0);
      const auto& b = val(1);
      if (T* ga = gin(0)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      if (T* gb = gin(1)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      break;
    }
    case OpKind::Matmul: {
      const Node& na = nodes_[static_cast<std::size_t>(n.inputs[0])];
      const Node& nb = nodes_[static_cast<std::size_t>(n.inputs[1])];
      const std::size_t m = na.shape[0], kk = na.shape[1], p = nb.shape[1];
      if (T* ga = gin(0)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < kk; ++k) {
            T acc = T(0);
            const T* gr = g.data() + i * p;
            const T* br = nb.value.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) acc += gr[j] * br[j];
            ga[i * kk + k] += acc;
          }
      }
      if (T* gb = gin(1)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < kk; ++k) {
            const T av = na.value[i * kk + k];
            if (av == T(0)) continue;
            const T* gr = g.data() + i * p;
            T* gbr = gb + k * p;
            for (std::size_t j = 0; j < p; ++j) gbr[j] += av * gr[j];
          }
      }
      break;
    }
    case OpKind::MeanAll:
      if (T* gx = gin(0)) {
        const T s = g[0] / static_cast<T>(val(0).size());
        for (std::size_t i = 0; i < val(0).size(); ++i) gx[i] += s;
      }
      break;
    case OpKind::SumAll:
      if (T* gx = gin(0)) for (std::size_t i = 0; i < val(0).size(); ++i) gx[i] += g[0];
      break;
    case OpKind::Cos:
      if (T* gx = gin(0)) for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i] * std::sin(val(0)[i]);
      break;
    case OpKind::Sin:
      if (T* gx = gin(0)) for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * std::cos(val(0)[i]);
      break;
    case OpKind::Exp:
      if (T* gx = gin(0)) for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i];
      break;
    case OpKind::Log:
      if (T* gx = gin(0)) for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / val(0)[i];
      break;
    case OpKind::Square:
      if (T* gx = gin(0)) for (std::size_t i = 0; i < g.size(); ++i) gx[i] += T(2) * g[i] * val(0)[i];
      break;
    case OpKind::Abs:
      if (T* gx = gin(0)) {
        const auto& x = val(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += x[i] > T(0) ? g[i] : (x[i] < T(0) ? -g[i] : T(0));
      }
      break;
    case OpKind::Scale:
      if (T* gx = gin(0)) {
        const T s = static_cast<T>(n.attrs.scalar);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
      }
      break;
    case OpKind::AddScalar:
    case OpKind::Reshape:
      if (T* gx = gin(0)) for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      break;
    case OpKind::ClampMin:
      if (T* gx = gin(0)) {
        const T f = static_cast<T>(n.attrs.scalar);
        const auto& x = val(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > f) gx[i] += g[i];
      }
      break;
    case OpKind::Transpose:
      if (T* gx = gin(0)) {
        const std::size_t r = n.shape[1], c = n.shape[0];  // input was (r, c)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
      }
      break;
    case OpKind::Slice:
      if (T* gx = gin(0)) {
        const auto& in_shape = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
        const AxisSplit s = split_axis(in_shape, n.attrs.axis);
        const std::size_t len = n.attrs.length;
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* src = g.data() + o * len * s.inner;
          T* dst = gx + (o * s.extent + n.attrs.start) * s.inner;
          for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
        }
      }
      break;
    case OpKind::Concat: {
      const AxisSplit out = split_axis(n.shape, n.attrs.axis);
      std::size_t offset = 0;
      for (std::size_t slot = 0; slot < n.inputs.size(); ++slot) {
        const AxisSplit s = split_axis(nodes_[static_cast<std::size_t>(n.inputs[slot])].shape, n.attrs.axis);
        if (T* gx = gin(slot)) {
          for (std::size_t o = 0; o < s.outer; ++o) {
            const T* src = g.data() + (o * out.extent + offset) * out.inner;
            T* dst = gx + o * s.extent * s.inner;
            for (std::size_t i = 0; i < s.extent * s.inner; ++i) dst[i] += src[i];
          }
        }
        offset += s.extent;
      }
      break;
    }
    case OpKind::Phase: {
      const auto& re = val(0);
      const auto& im = val(1);
      T* gr = gin(0);
      T* gi = gin(1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T r2 = re[i] * re[i] + im[i] * im[i];
        if (r2 == T(0)) continue;
        if (gr) gr[i] -= g[i] * im[i] / r2;
        if (gi) gi[i] += g[i] * re[i] / r2;
      }
      break;
    }
    case OpKind::Magnitude: {
      const auto& re = val(0);
      const auto& im = val(1);
      T* gr = gin(0);
      T* gi = gin(1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T m = n.value[i];
        if (m == T(0)) continue;
        if (gr) gr[i] += g[i] * re[i] / m;
        if (gi) gi[i] += g[i] * im[i] / m;
      }
      break;
    }
    case OpKind::Stft: {
      T* gx = gin(0);
      if (!gx) break;
      const dsp::StftConfig& cfg = n.attrs.stft;
      const std::size_t frames = n.shape[0], bins = n.shape[1] / 2;
      const std::size_t len = val(0).size();
      const std::size_t half = static_cast<std::size_t>(cfg.fft_size / 2);
      const auto w = dsp::make_window(cfg.window, cfg.frame_length);
      std::vector<std::complex<double>> spec(bins);
      std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size));
      for (std::size_t f = 0; f < frames; ++f) {
        const T* row = g.data() + f * 2 * bins;
        for (std::size_t k = 0; k < bins; ++k) {
          // d(sum_k gR cos - gI sin)/dx via the Hermitian inverse: interior bins appear twice there.
          const double c = (k == 0 || k == half) ? 1.0 : 0.5;
          spec[k] = {c * static_cast<double>(row[k]), c * static_cast<double>(row[bins + k])};
        }
        dsp::irfft_unnormalized(spec, buf);
        const long start = static_cast<long>(f) * cfg.frame_shift - cfg.frame_offset();
        for (int i = 0; i < cfg.frame_length; ++i) {
          const long t = start + i;
          if (t >= 0 && t < static_cast<long>(len))
            gx[t] += static_cast<T>(w[static_cast<std::size_t>(i)] * buf[static_cast<std::size_t>(i)]);
        }
      }
      break;
    }
    case OpKind::Istft: {
      T* gre = gin(0);
      T* gim = gin(1);
      if (!gre && !gim) break;
      const dsp::StftConfig& cfg = n.attrs.stft;
      const std::size_t out_len = n.shape[0];
      const auto& in_shape = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
      const std::size_t frames = in_shape[0], bins = in_shape[1];
      const std::size_t half = static_cast<std::size_t>(cfg.fft_size / 2);
      const auto w = dsp::make_window(cfg.window, cfg.frame_length);
      const auto energy = dsp::window_energy(cfg, frames, out_len);
      const double inv_n = 1.0 / cfg.fft_size;
      std::vector<double> gacc(out_len, 0.0);
      for (std::size_t t = 0; t < out_len; ++t)
        gacc[t] = energy[t] > 1e-10 ? static_cast<double>(g[t]) / energy[t] : 0.0;
      std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size));
      std::vector<std::complex<double>> spec(bins);
      for (std::size_t f = 0; f < frames; ++f) {
        std::fill(buf.begin(), buf.end(), 0.0);
        const long start = static_cast<long>(f) * cfg.frame_shift - cfg.frame_offset();
        for (int i = 0; i < cfg.frame_length; ++i) {
          const long t = start + i;
          if (t >= 0 && t < static_cast<long>(out_len))
            buf[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] * gacc[static_cast<std::size_t>(t)];
        }
        dsp::rfft(buf, spec);
        for (std::size_t k = 0; k < bins; ++k) {
          const double c = ((k == 0 || k == half) ? 1.0 : 2.0) * inv_n;
          if (gre) gre[f * bins + k] += static_cast<T>(c * spec[k].real());
          if (gim && k != 0 && k != half) gim[f * bins + k] += static_cast<T>(c * spec[k].imag());
        }
      }
      break;
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace apnet::ad
