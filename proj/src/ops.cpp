#include "ct/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ct::ops {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Grad accumulator of input `i`, or nullptr when it does not track gradients.
float* input_grad(Node& out, std::size_t i) {
  Node& in = *out.inputs[i];
  return in.requires_grad ? in.grad_buffer() : nullptr;
}

const std::vector<float>& input_value(Node& out, std::size_t i) { return out.inputs[i]->value; }

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

int normalize_axis(const char* op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

// outer * len * inner decomposition around `axis`.
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.len = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Number of times b repeats inside a under suffix broadcasting.
std::int64_t broadcast_reps(const char* op, const Shape& a, const Shape& b) {
  if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) shape_fail(op, a, b);
  return numel_of(a) / std::max<std::int64_t>(numel_of(b), 1);
}

void check_map(const char* op, const Tensor& x) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected [B,H,W,C], got " + to_string(x.shape()));
}

template <typename Fwd, typename Bwd>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Bwd dfdx) {
  const auto& av = a.values();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return record(op, a.shape(), std::move(out), {a}, [dfdx](Node& o) {
    float* ga = input_grad(o, 0);
    if (!ga) return;
    const auto& x = input_value(o, 0);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += o.grad[i] * dfdx(x[i], o.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const auto reps = broadcast_reps("add", a.shape(), b.shape());
  const auto nb = b.numel();
  std::vector<float> out(a.values().begin(), a.values().end());
  const auto& bv = b.values();
  for (std::int64_t r = 0; r < reps; ++r)
    for (std::int64_t j = 0; j < nb; ++j) out[r * nb + j] += bv[j];
  return record("add", a.shape(), std::move(out), {a, b}, [reps, nb](Node& o) {
    if (float* ga = input_grad(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    if (float* gb = input_grad(o, 1))
      for (std::int64_t r = 0; r < reps; ++r)
        for (std::int64_t j = 0; j < nb; ++j) gb[j] += o.grad[r * nb + j];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto reps = broadcast_reps("sub", a.shape(), b.shape());
  const auto nb = b.numel();
  std::vector<float> out(a.values().begin(), a.values().end());
  const auto& bv = b.values();
  for (std::int64_t r = 0; r < reps; ++r)
    for (std::int64_t j = 0; j < nb; ++j) out[r * nb + j] -= bv[j];
  return record("sub", a.shape(), std::move(out), {a, b}, [reps, nb](Node& o) {
    if (float* ga = input_grad(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    if (float* gb = input_grad(o, 1))
      for (std::int64_t r = 0; r < reps; ++r)
        for (std::int64_t j = 0; j < nb; ++j) gb[j] -= o.grad[r * nb + j];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto reps = broadcast_reps("mul", a.shape(), b.shape());
  const auto nb = b.numel();
  std::vector<float> out(a.values().begin(), a.values().end());
  const auto& bv = b.values();
  for (std::int64_t r = 0; r < reps; ++r)
    for (std::int64_t j = 0; j < nb; ++j) out[r * nb + j] *= bv[j];
  return record("mul", a.shape(), std::move(out), {a, b}, [reps, nb](Node& o) {
    const auto& av = input_value(o, 0);
    const auto& bv = input_value(o, 1);
    if (float* ga = input_grad(o, 0))
      for (std::int64_t r = 0; r < reps; ++r)
        for (std::int64_t j = 0; j < nb; ++j) ga[r * nb + j] += o.grad[r * nb + j] * bv[j];
    if (float* gb = input_grad(o, 1))
      for (std::int64_t r = 0; r < reps; ++r)
        for (std::int64_t j = 0; j < nb; ++j) gb[j] += o.grad[r * nb + j] * av[r * nb + j];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  const auto reps = broadcast_reps("div", a.shape(), b.shape());
  const auto nb = b.numel();
  std::vector<float> out(a.values().begin(), a.values().end());
  const auto& bv = b.values();
  for (std::int64_t r = 0; r < reps; ++r)
    for (std::int64_t j = 0; j < nb; ++j) out[r * nb + j] /= bv[j];
  return record("div", a.shape(), std::move(out), {a, b}, [reps, nb](Node& o) {
    const auto& bv = input_value(o, 1);
    if (float* ga = input_grad(o, 0))
      for (std::int64_t r = 0; r < reps; ++r)
        for (std::int64_t j = 0; j < nb; ++j) ga[r * nb + j] += o.grad[r * nb + j] / bv[j];
    if (float* gb = input_grad(o, 1))
      for (std::int64_t r = 0; r < reps; ++r)
        for (std::int64_t j = 0; j < nb; ++j) gb[j] -= o.grad[r * nb + j] * o.value[r * nb + j] / bv[j];
  });
}

Tensor scale(const Tensor& a, float s) {
  return unary("scale", a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Tensor add_scalar(const Tensor& a, float s) {
  return unary("add_scalar", a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Tensor gelu(const Tensor& a) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  constexpr float kInvSqrt2Pi = 0.39894228040143268f;
  return unary(
      "gelu", a, [](float x) { return 0.5f * x * (1.0f + std::erf(x * kInvSqrt2)); },
      [](float x, float) { return 0.5f * (1.0f + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5f * x * x); });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  return unary(
      "clamp", a, [lo, hi](float x) { return std::clamp(x, lo, hi); },
      [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: input must have a channel axis");
  const auto c = x.dim(-1);
  if (gamma.shape() != Shape{c}) shape_fail("layer_norm", x.shape(), gamma.shape());
  if (beta.shape() != Shape{c}) shape_fail("layer_norm", x.shape(), beta.shape());
  const auto rows = x.numel() / c;
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<float> out(xv.size());
  auto xhat = std::make_shared<std::vector<float>>(xv.size());
  auto rstd = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = xv.data() + r * c;
    double mu = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t j = 0; j < c; ++j) {
      const float h = static_cast<float>(xr[j] - mu) * rs;
      (*xhat)[static_cast<std::size_t>(r * c + j)] = h;
      out[static_cast<std::size_t>(r * c + j)] = h * gv[j] + bv[j];
    }
  }
  return record("layer_norm", x.shape(), std::move(out), {x, gamma, beta}, [=](Node& o) {
    const auto& g = input_value(o, 1);
    float* gx = input_grad(o, 0);
    float* gg = input_grad(o, 1);
    float* gb = input_grad(o, 2);
    std::vector<float> dxhat(static_cast<std::size_t>(c));
    for (std::int64_t r = 0; r < rows; ++r) {
      const float* dy = o.grad.data() + r * c;
      const float* h = xhat->data() + r * c;
      if (gg)
        for (std::int64_t j = 0; j < c; ++j) gg[j] += dy[j] * h[j];
      if (gb)
        for (std::int64_t j = 0; j < c; ++j) gb[j] += dy[j];
      if (!gx) continue;
      double m1 = 0.0, m2 = 0.0;
      for (std::int64_t j = 0; j < c; ++j) {
        dxhat[j] = dy[j] * g[j];
        m1 += dxhat[j];
        m2 += dxhat[j] * h[j];
      }
      m1 /= static_cast<double>(c);
      m2 /= static_cast<double>(c);
      const float rs = (*rstd)[static_cast<std::size_t>(r)];
      for (std::int64_t j = 0; j < c; ++j)
        gx[r * c + j] += rs * static_cast<float>(dxhat[j] - m1 - h[j] * m2);
    }
  });
}

Tensor l2_normalize(const Tensor& x, float eps) {
  if (x.rank() < 1) throw ShapeError("l2_normalize: input must have a vector axis");
  const auto c = x.dim(-1);
  const auto rows = c == 0 ? 0 : x.numel() / c;
  const auto& xv = x.values();
  std::vector<float> out(xv.size());
  auto denom = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows));
  auto clamped = std::make_shared<std::vector<char>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::int64_t j = 0; j < c; ++j) ss += static_cast<double>(xv[r * c + j]) * xv[r * c + j];
    const double n = std::sqrt(ss);
    const bool small = n <= eps;
    const float d = small ? eps : static_cast<float>(n);
    (*denom)[static_cast<std::size_t>(r)] = d;
    (*clamped)[static_cast<std::size_t>(r)] = small;
    for (std::int64_t j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] / d;
  }
  return record("l2_normalize", x.shape(), std::move(out), {x}, [=](Node& o) {
    float* gx = input_grad(o, 0);
    if (!gx) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const float d = (*denom)[static_cast<std::size_t>(r)];
      const float* dy = o.grad.data() + r * c;
      const float* y = o.value.data() + r * c;
      double dot = 0.0;
      if (!(*clamped)[static_cast<std::size_t>(r)])
        for (std::int64_t j = 0; j < c; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (std::int64_t j = 0; j < c; ++j) gx[r * c + j] += (dy[j] - static_cast<float>(dot) * y[j]) / d;
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis("softmax", axis, x.rank());
  const auto s = split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<float> out(xv.size());
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = o * s.len * s.inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t k = 0; k < s.len; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::int64_t k = 0; k < s.len; ++k) {
        const float e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      const float inv = static_cast<float>(1.0 / z);
      for (std::int64_t k = 0; k < s.len; ++k) out[base + k * s.inner] *= inv;
    }
  return record("softmax", x.shape(), std::move(out), {x}, [s](Node& nd) {
    float* gx = input_grad(nd, 0);
    if (!gx) return;
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const std::int64_t base = o * s.len * s.inner + i;
        double dot = 0.0;
        for (std::int64_t k = 0; k < s.len; ++k)
          dot += static_cast<double>(nd.grad[base + k * s.inner]) * nd.value[base + k * s.inner];
        for (std::int64_t k = 0; k < s.len; ++k) {
          const auto idx = base + k * s.inner;
          gx[idx] += nd.value[idx] * (nd.grad[idx] - static_cast<float>(dot));
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  axis = normalize_axis("log_softmax", axis, x.rank());
  const auto s = split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<float> out(xv.size());
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = o * s.len * s.inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t k = 0; k < s.len; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::int64_t k = 0; k < s.len; ++k) z += std::exp(static_cast<double>(xv[base + k * s.inner] - mx));
      const float lse = mx + static_cast<float>(std::log(z));
      for (std::int64_t k = 0; k < s.len; ++k) out[base + k * s.inner] = xv[base + k * s.inner] - lse;
    }
  return record("log_softmax", x.shape(), std::move(out), {x}, [s](Node& nd) {
    float* gx = input_grad(nd, 0);
    if (!gx) return;
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const std::int64_t base = o * s.len * s.inner + i;
        double gsum = 0.0;
        for (std::int64_t k = 0; k < s.len; ++k) gsum += nd.grad[base + k * s.inner];
        for (std::int64_t k = 0; k < s.len; ++k) {
          const auto idx = base + k * s.inner;
          gx[idx] += nd.grad[idx] - std::exp(nd.value[idx]) * static_cast<float>(gsum);
        }
      }
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  return record("sum", {}, {static_cast<float>(acc)}, {x}, [](Node& o) {
    float* gx = input_grad(o, 0);
    if (!gx) return;
    const std::size_t n = o.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty input " + to_string(x.shape()));
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor sum(const Tensor& x, int axis) {
  axis = normalize_axis("sum", axis, x.rank());
  const auto s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  const auto& xv = x.values();
  std::vector<float> out(static_cast<std::size_t>(s.outer * s.inner), 0.0f);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t k = 0; k < s.len; ++k)
      for (std::int64_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.len + k) * s.inner + i];
  return record("sum_axis", std::move(out_shape), std::move(out), {x}, [s](Node& nd) {
    float* gx = input_grad(nd, 0);
    if (!gx) return;
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t k = 0; k < s.len; ++k)
        for (std::int64_t i = 0; i < s.inner; ++i) gx[(o * s.len + k) * s.inner + i] += nd.grad[o * s.inner + i];
  });
}

Tensor mean(const Tensor& x, int axis) {
  const int a = normalize_axis("mean", axis, x.rank());
  const auto len = x.dim(a);
  if (len == 0) throw ShapeError("mean: empty axis in " + to_string(x.shape()));
  return scale(sum(x, a), 1.0f / static_cast<float>(len));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
  std::vector<float> out(x.values().begin(), x.values().end());
  return record("reshape", std::move(shape), std::move(out), {x}, [](Node& o) {
    float* gx = input_grad(o, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) throw ShapeError("permute: order length does not match " + to_string(x.shape()));
  std::vector<int> seen(static_cast<std::size_t>(r), 0);
  for (int a : order) {
    if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)]++) throw ShapeError("permute: invalid axis order");
  }
  const Shape& in_shape = x.shape();
  std::vector<std::int64_t> in_stride(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> src_stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[order[i]];
    src_stride[i] = in_stride[order[i]];
  }
  // map[out_flat] = in_flat
  const auto n = x.numel();
  auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t src = 0;
  for (std::int64_t f = 0; f < n; ++f) {
    (*map)[static_cast<std::size_t>(f)] = src;
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  const auto& xv = x.values();
  std::vector<float> out(static_cast<std::size_t>(n));
  for (std::int64_t f = 0; f < n; ++f) out[f] = xv[(*map)[f]];
  return record("permute", std::move(out_shape), std::move(out), {x}, [map](Node& o) {
    float* gx = input_grad(o, 0);
    if (!gx) return;
    for (std::size_t f = 0; f < map->size(); ++f) gx[(*map)[f]] += o.grad[f];
  });
}

Tensor transpose(const Tensor& x) {
  const int r = x.rank();
  if (r < 2) throw ShapeError("transpose: need rank >= 2, got " + to_string(x.shape()));
  std::vector<int> order(static_cast<std::size_t>(r));
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[r - 1], order[r - 2]);
  return permute(x, order);
}

Tensor slice(const Tensor& x, int axis, std::int64_t begin, std::int64_t end) {
  axis = normalize_axis("slice", axis, x.rank());
  const auto s = split_axis(x.shape(), axis);
  if (begin < 0 || end > s.len || begin > end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     to_string(x.shape()));
  }
  const auto len = end - begin;
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  const auto& xv = x.values();
  std::vector<float> out(static_cast<std::size_t>(s.outer * len * s.inner));
  for (std::int64_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.begin() + (o * s.len + begin) * s.inner, len * s.inner, out.begin() + o * len * s.inner);
  return record("slice", std::move(out_shape), std::move(out), {x}, [s, begin, len](Node& nd) {
    float* gx = input_grad(nd, 0);
    if (!gx) return;
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t j = 0; j < len * s.inner; ++j) gx[(o * s.len + begin) * s.inner + j] += nd.grad[o * len * s.inner + j];
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  axis = normalize_axis("concat", axis, xs[0].rank());
  Shape out_shape = xs[0].shape();
  std::int64_t total = 0;
  for (const auto& t : xs) {
    Shape a = t.shape(), b = xs[0].shape();
    if (a.size() != b.size()) shape_fail("concat", b, a);
    a[static_cast<std::size_t>(axis)] = b[static_cast<std::size_t>(axis)] = 0;
    if (a != b) shape_fail("concat", xs[0].shape(), t.shape());
    total += t.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  const auto s = split_axis(out_shape, axis);
  auto lens = std::make_shared<std::vector<std::int64_t>>();
  for (const auto& t : xs) lens->push_back(t.dim(axis));
  std::vector<float> out(static_cast<std::size_t>(numel_of(out_shape)));
  std::int64_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto len = (*lens)[t];
    const auto& v = xs[t].values();
    for (std::int64_t o = 0; o < s.outer; ++o)
      std::copy_n(v.begin() + o * len * s.inner, len * s.inner, out.begin() + (o * s.len + offset) * s.inner);
    offset += len;
  }
  return record("concat", std::move(out_shape), std::move(out), xs, [s, lens](Node& nd) {
    std::int64_t off = 0;
    for (std::size_t t = 0; t < lens->size(); ++t) {
      const auto len = (*lens)[t];
      if (float* g = input_grad(nd, t))
        for (std::int64_t o = 0; o < s.outer; ++o)
          for (std::int64_t j = 0; j < len * s.inner; ++j) g[o * len * s.inner + j] += nd.grad[(o * s.len + off) * s.inner + j];
      off += len;
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
  if (x.rank() < 1) throw ShapeError("gather_rows: input must have a row axis");
  const auto n = x.dim(0);
  const auto width = n == 0 ? 0 : x.numel() / n;
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  const auto& xv = x.values();
  std::vector<float> out(rows.size() * static_cast<std::size_t>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " + to_string(x.shape()));
    }
    std::copy_n(xv.begin() + rows[i] * width, width, out.begin() + static_cast<std::int64_t>(i) * width);
  }
  auto idx = std::make_shared<std::vector<std::int64_t>>(rows);
  return record("gather_rows", std::move(out_shape), std::move(out), {x}, [idx, width](Node& o) {
    float* gx = input_grad(o, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < idx->size(); ++i)
      for (std::int64_t j = 0; j < width; ++j) gx[(*idx)[i] * width + j] += o.grad[static_cast<std::int64_t>(i) * width + j];
  });
}

namespace {

// C (+)= op(A) * op(B) with A stored [ar, ac] and B stored [br, bc], row-major.
void gemm(const float* a, std::int64_t ar, std::int64_t ac, bool ta, const float* b, std::int64_t br, std::int64_t bc,
          bool tb, float* c) {
  ConstMap A(a, ar, ac);
  ConstMap B(b, br, bc);
  const auto m = ta ? ac : ar;
  const auto n = tb ? br : bc;
  MutMap C(c, m, n);
  if (!ta && !tb) C.noalias() += A * B;
  else if (ta && !tb) C.noalias() += A.transpose() * B;
  else if (!ta && tb) C.noalias() += A * B.transpose();
  else C.noalias() += A.transpose() * B.transpose();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() == 3 && b.rank() == 3) {
    const auto g = a.dim(0);
    const auto ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
    const auto m = trans_a ? ac : ar, k = trans_a ? ar : ac;
    const auto kb = trans_b ? bc : br, n = trans_b ? br : bc;
    if (b.dim(0) != g || k != kb) shape_fail("matmul", a.shape(), b.shape());
    std::vector<float> out(static_cast<std::size_t>(g * m * n), 0.0f);
    for (std::int64_t i = 0; i < g; ++i)
      gemm(a.values().data() + i * ar * ac, ar, ac, trans_a, b.values().data() + i * br * bc, br, bc, trans_b,
           out.data() + i * m * n);
    return record("matmul", {g, m, n}, std::move(out), {a, b}, [=](Node& o) {
      const auto& av = input_value(o, 0);
      const auto& bv = input_value(o, 1);
      float* ga = input_grad(o, 0);
      float* gb = input_grad(o, 1);
      for (std::int64_t i = 0; i < g; ++i) {
        const float* dc = o.grad.data() + i * m * n;
        const float* ai = av.data() + i * ar * ac;
        const float* bi = bv.data() + i * br * bc;
        // dA = dC op(B)^T, stored transposed when A is.
        if (ga) {
          if (!trans_a) gemm(dc, m, n, false, bi, br, bc, !trans_b, ga + i * ar * ac);
          else gemm(bi, br, bc, trans_b, dc, m, n, true, ga + i * ar * ac);
        }
        if (gb) {
          if (!trans_b) gemm(ai, ar, ac, !trans_a, dc, m, n, false, gb + i * br * bc);
          else gemm(dc, m, n, true, ai, ar, ac, trans_a, gb + i * br * bc);
        }
      }
    });
  }
  if (a.rank() < 2 || b.rank() != 2 || (trans_a && a.rank() != 2)) shape_fail("matmul", a.shape(), b.shape());
  const auto ac = a.dim(-1);
  const auto ar = a.numel() / std::max<std::int64_t>(ac, 1);
  const auto br = b.dim(0), bc = b.dim(1);
  const auto m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const auto kb = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != kb) shape_fail("matmul", a.shape(), b.shape());
  Shape out_shape;
  if (trans_a) out_shape = {m, n};
  else {
    out_shape.assign(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
  }
  std::vector<float> out(static_cast<std::size_t>(m * n), 0.0f);
  gemm(a.values().data(), ar, ac, trans_a, b.values().data(), br, bc, trans_b, out.data());
  return record("matmul", std::move(out_shape), std::move(out), {a, b}, [=](Node& o) {
    const float* dc = o.grad.data();
    if (float* ga = input_grad(o, 0)) {
      const float* bv = input_value(o, 1).data();
      if (!trans_a) gemm(dc, m, n, false, bv, br, bc, !trans_b, ga);
      else gemm(bv, br, bc, trans_b, dc, m, n, true, ga);
    }
    if (float* gb = input_grad(o, 1)) {
      const float* av = input_value(o, 0).data();
      if (!trans_b) gemm(av, ar, ac, !trans_a, dc, m, n, false, gb);
      else gemm(dc, m, n, true, av, ar, ac, trans_a, gb);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) { return add(matmul(x, weight), bias); }

Tensor avg_pool2x2(const Tensor& x) {
  check_map("avg_pool2x2", x);
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("avg_pool2x2: odd spatial extent in " + to_string(x.shape()));
  const auto h = H / 2, w = W / 2;
  const auto& xv = x.values();
  std::vector<float> out(static_cast<std::size_t>(B * h * w * C), 0.0f);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j)
        for (std::int64_t c = 0; c < C; ++c)
          out[((b * h + i / 2) * w + j / 2) * C + c] += 0.25f * xv[((b * H + i) * W + j) * C + c];
  return record("avg_pool2x2", {B, h, w, C}, std::move(out), {x}, [=](Node& o) {
    float* gx = input_grad(o, 0);
    if (!gx) return;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
          for (std::int64_t c = 0; c < C; ++c)
            gx[((b * H + i) * W + j) * C + c] += 0.25f * o.grad[((b * h + i / 2) * w + j / 2) * C + c];
  });
}

Tensor avg_pool3x3(const Tensor& x) {
  check_map("avg_pool3x3", x);
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const auto& xv = x.values();
  std::vector<float> out(xv.size(), 0.0f);
  auto inv_count = [H, W](std::int64_t i, std::int64_t j) {
    const auto rows = std::min(i + 1, H - 1) - std::max<std::int64_t>(i - 1, 0) + 1;
    const auto cols = std::min(j + 1, W - 1) - std::max<std::int64_t>(j - 1, 0) + 1;
    return 1.0f / static_cast<float>(rows * cols);
  };
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) {
        float* dst = out.data() + ((b * H + i) * W + j) * C;
        const float s = inv_count(i, j);
        for (auto ii = std::max<std::int64_t>(i - 1, 0); ii <= std::min(i + 1, H - 1); ++ii)
          for (auto jj = std::max<std::int64_t>(j - 1, 0); jj <= std::min(j + 1, W - 1); ++jj) {
            const float* src = xv.data() + ((b * H + ii) * W + jj) * C;
            for (std::int64_t c = 0; c < C; ++c) dst[c] += s * src[c];
          }
      }
  return record("avg_pool3x3", x.shape(), std::move(out), {x}, [=](Node& o) {
    float* gx = input_grad(o, 0);
    if (!gx) return;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          const float* dy = o.grad.data() + ((b * H + i) * W + j) * C;
          const float s = inv_count(i, j);
          for (auto ii = std::max<std::int64_t>(i - 1, 0); ii <= std::min(i + 1, H - 1); ++ii)
            for (auto jj = std::max<std::int64_t>(j - 1, 0); jj <= std::min(j + 1, W - 1); ++jj) {
              float* dst = gx + ((b * H + ii) * W + jj) * C;
              for (std::int64_t c = 0; c < C; ++c) dst[c] += s * dy[c];
            }
        }
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  check_map("upsample_nearest", x);
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const auto B = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
  const auto H = h * factor, W = w * factor;
  const auto& xv = x.values();
  std::vector<float> out(static_cast<std::size_t>(B * H * W * C));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j)
        std::copy_n(xv.begin() + ((b * h + i / factor) * w + j / factor) * C, C, out.begin() + ((b * H + i) * W + j) * C);
  return record("upsample_nearest", {B, H, W, C}, std::move(out), {x}, [=](Node& o) {
    float* gx = input_grad(o, 0);
    if (!gx) return;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          float* dst = gx + ((b * h + i / factor) * w + j / factor) * C;
          const float* src = o.grad.data() + ((b * H + i) * W + j) * C;
          for (std::int64_t c = 0; c < C; ++c) dst[c] += src[c];
        }
  });
}

Tensor space_to_depth(const Tensor& x, int factor) {
  check_map("space_to_depth", x);
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (factor < 1 || H % factor || W % factor) {
    throw ShapeError("space_to_depth: factor " + std::to_string(factor) + " does not divide " + to_string(x.shape()));
  }
  const auto h = H / factor, w = W / factor, D = C * factor * factor;
  const auto& xv = x.values();
  std::vector<float> out(xv.size());
  auto dst_of = [=](std::int64_t b, std::int64_t i, std::int64_t j) {
    return ((b * h + i / factor) * w + j / factor) * D + ((i % factor) * factor + j % factor) * C;
  };
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j)
        std::copy_n(xv.begin() + ((b * H + i) * W + j) * C, C, out.begin() + dst_of(b, i, j));
  return record("space_to_depth", {B, h, w, D}, std::move(out), {x}, [=](Node& o) {
    float* gx = input_grad(o, 0);
    if (!gx) return;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          float* dst = gx + ((b * H + i) * W + j) * C;
          const float* src = o.grad.data() + dst_of(b, i, j);
          for (std::int64_t c = 0; c < C; ++c) dst[c] += src[c];
        }
  });
}

}  // namespace ct::ops
