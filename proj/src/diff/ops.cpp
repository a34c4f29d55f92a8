#include "cmet/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "cmet/error.hpp"
#include "kernels.hpp"

namespace cmet::diff {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::ShapeMismatch, op + ": " + shape_string(a) + " vs " + shape_string(b));
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw Error(ErrorKind::ShapeMismatch,
                op + ": expected rank " + std::to_string(rank) + ", got " + shape_string(t.shape));
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// Elementwise map with derivative expressed through input x and output y.
template <class F, class D>
Var unary(Var a, F f, D dydx) {
  const Tensor& x = a.value();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = f(x.data[i]);
  Tape& tape = a.tape();
  return tape.record(std::move(y), {a}, [a, dydx](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(a);
    const Tensor& yv = t.value(self);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * dydx(xv.data[i], yv.data[i]);
  });
}

// (outer, axis, inner) view of a shape around `axis`.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("matmul", av, 2);
  require_rank("matmul", bv, 2);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) shape_error("matmul", av.shape, bv.shape);
  Tensor out({m, n});
  kernels::gemm_nn(m, k, n, av.data.data(), bv.data.data(), out.data.data(), false);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) {
      kernels::gemm_nt(m, n, k, g.data.data(), t.value(b).data.data(), t.grad(a).data.data(), true);
    }
    if (t.needs_grad(b)) {
      kernels::gemm_tn(m, k, n, t.value(a).data.data(), g.data.data(), t.grad(b).data.data(), true);
    }
  });
}

Var bmm(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("bmm", av, 3);
  require_rank("bmm", bv, 3);
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  if (bv.dim(0) != batch || bv.dim(1) != k) shape_error("bmm", av.shape, bv.shape);
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm_nn(m, k, n, av.data.data() + i * m * k, bv.data.data() + i * k * n,
                     out.data.data() + i * m * n, false);
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, batch, m, k, n](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const bool ga = t.needs_grad(a), gb = t.needs_grad(b);
    for (std::size_t i = 0; i < batch; ++i) {
      const double* gi = g.data.data() + i * m * n;
      if (ga) {
        kernels::gemm_nt(m, n, k, gi, t.value(b).data.data() + i * k * n,
                         t.grad(a).data.data() + i * m * k, true);
      }
      if (gb) {
        kernels::gemm_tn(m, k, n, t.value(a).data.data() + i * m * k, gi,
                         t.grad(b).data.data() + i * k * n, true);
      }
    }
  });
}

Var bmm_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("bmm_nt", av, 3);
  require_rank("bmm_nt", bv, 3);
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(1);
  if (bv.dim(0) != batch || bv.dim(2) != k) shape_error("bmm_nt", av.shape, bv.shape);
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm_nt(m, k, n, av.data.data() + i * m * k, bv.data.data() + i * n * k,
                     out.data.data() + i * m * n, false);
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, batch, m, k, n](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const bool ga = t.needs_grad(a), gb = t.needs_grad(b);
    for (std::size_t i = 0; i < batch; ++i) {
      const double* gi = g.data.data() + i * m * n;
      if (ga) {
        kernels::gemm_nn(m, n, k, gi, t.value(b).data.data() + i * n * k,
                         t.grad(a).data.data() + i * m * k, true);
      }
      if (gb) {
        kernels::gemm_tn(m, n, k, gi, t.value(a).data.data() + i * m * k,
                         t.grad(b).data.data() + i * n * k, true);
      }
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank("linear", wv, 2);
  const std::size_t in = wv.dim(0), out_dim = wv.dim(1);
  if (xv.rank() == 0 || xv.last_dim() != in) shape_error("linear", xv.shape, wv.shape);
  if (bias.value().shape != Shape{out_dim}) shape_error("linear bias", bias.value().shape, wv.shape);
  const std::size_t rows = xv.rows();
  Shape out_shape = xv.shape;
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + r * out_dim);
  }
  kernels::gemm_nn(rows, in, out_dim, xv.data.data(), wv.data.data(), out.data.data(), true);
  return x.tape().record(std::move(out), {x, weight, bias},
                         [x, weight, bias, rows, in, out_dim](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(x)) {
      kernels::gemm_nt(rows, out_dim, in, g.data.data(), t.value(weight).data.data(),
                       t.grad(x).data.data(), true);
    }
    if (t.needs_grad(weight)) {
      kernels::gemm_tn(rows, in, out_dim, t.value(x).data.data(), g.data.data(),
                       t.grad(weight).data.data(), true);
    }
    if (t.needs_grad(bias)) {
      Tensor& gb = t.grad(bias);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < out_dim; ++j) gb.data[j] += g.data[r * out_dim + j];
      }
    }
  });
}

Var add(Var a, Var b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Tensor out = a.value();
  accumulate(out, b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) accumulate(t.grad(a), g);
    if (t.needs_grad(b)) accumulate(t.grad(b), g);
  });
}

Var sub(Var a, Var b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) accumulate(t.grad(a), g);
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
    }
  });
}

Var mul(Var a, Var b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      const Tensor& bv2 = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * bv2.data[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      const Tensor& av2 = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * av2.data[i];
    }
  });
}

Var add_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  const std::size_t d = bv.size();
  if (d == 0 || av.size() % d != 0) shape_error("add_bias", av.shape, bv.shape);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i % d];
  return a.tape().record(std::move(out), {a, bias}, [a, bias, d](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) accumulate(t.grad(a), g);
    if (t.needs_grad(bias)) {
      Tensor& gb = t.grad(bias);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i % d] += g.data[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data) v *= factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * factor;
  });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var gelu(Var a) {
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double k = 0.044715;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double th = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * k * x * x);
      });
}

Var softmax(Var a) {
  const Tensor& av = a.value();
  const std::size_t d = av.last_dim(), rows = av.rows();
  Tensor out(av.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data.data() + r * d;
    double* y = out.data.data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < d; ++j) y[j] /= z;
  }
  return a.tape().record(std::move(out), {a}, [a, d, rows](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g.data[o + j] * y.data[o + j];
      for (std::size_t j = 0; j < d; ++j) ga.data[o + j] += y.data[o + j] * (g.data[o + j] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& av = a.value();
  const std::size_t d = av.last_dim(), rows = av.rows();
  Tensor out(av.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data.data() + r * d;
    double* y = out.data.data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(x[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < d; ++j) y[j] = x[j] - lz;
  }
  return a.tape().record(std::move(out), {a}, [a, d, rows](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * d;
      double gs = 0.0;
      for (std::size_t j = 0; j < d; ++j) gs += g.data[o + j];
      for (std::size_t j = 0; j < d; ++j) ga.data[o + j] += g.data[o + j] - std::exp(y.data[o + j]) * gs;
    }
  });
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  const Tensor& av = a.value();
  const std::size_t d = av.last_dim(), rows = av.rows();
  if (gamma.value().shape != Shape{d} || beta.value().shape != Shape{d}) {
    shape_error("layer_norm", av.shape, gamma.value().shape);
  }
  auto xhat = std::make_shared<std::vector<double>>(av.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(av.shape);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out.data[r * d + j] = h * gv.data[j] + bv.data[j];
    }
  }
  return a.tape().record(std::move(out), {a, gamma, beta},
                         [a, gamma, beta, d, rows, xhat, inv_std](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& gv2 = t.value(gamma);
    if (t.needs_grad(gamma)) {
      Tensor& gg = t.grad(gamma);
      for (std::size_t i = 0; i < g.size(); ++i) gg.data[i % d] += g.data[i] * (*xhat)[i];
    }
    if (t.needs_grad(beta)) {
      Tensor& gb = t.grad(beta);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i % d] += g.data[i];
    }
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * d;
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g.data[o + j] * gv2.data[j];
          m1 += dh;
          m2 += dh * (*xhat)[o + j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g.data[o + j] * gv2.data[j];
          ga.data[o + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[o + j] * m2);
        }
      }
    }
  });
}

Var embedding(Var table, std::span<const std::uint32_t> indices) {
  const Tensor& tv = table.value();
  require_rank("embedding", tv, 2);
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  auto idx = std::make_shared<std::vector<std::uint32_t>>(indices.begin(), indices.end());
  Tensor out({idx->size(), d});
  for (std::size_t r = 0; r < idx->size(); ++r) {
    const std::size_t v = (*idx)[r];
    if (v >= vocab) {
      throw Error(ErrorKind::ShapeMismatch,
                  "embedding index " + std::to_string(v) + " out of range " + std::to_string(vocab));
    }
    std::copy_n(tv.data.begin() + v * d, d, out.data.begin() + r * d);
  }
  return table.tape().record(std::move(out), {table}, [table, idx, d](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad(table);
    for (std::size_t r = 0; r < idx->size(); ++r) {
      const std::size_t v = (*idx)[r];
      for (std::size_t j = 0; j < d; ++j) gt.data[v * d + j] += g.data[r * d + j];
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorKind::InvalidArgument, "concat of nothing");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw Error(ErrorKind::ShapeMismatch, "concat axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_error("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) shape_error("concat", s0, s);
    }
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& pv = p.value();
    const std::size_t chunk = pv.shape[axis] * ov.inner;
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy_n(pv.data.begin() + o * chunk, chunk,
                  out.data.begin() + o * ov.extent * ov.inner + off * ov.inner);
    }
    off += pv.shape[axis];
  }
  return parts[0].tape().record(std::move(out), parts, [parts, offsets, ov, axis](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!t.needs_grad(parts[k])) continue;
      Tensor& gp = t.grad(parts[k]);
      const std::size_t chunk = gp.shape[axis] * ov.inner;
      for (std::size_t o = 0; o < ov.outer; ++o) {
        const double* src = g.data.data() + o * ov.extent * ov.inner + offsets[k] * ov.inner;
        double* dst = gp.data.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  const Tensor& av = a.value();
  if (axis >= av.rank() || start + length > av.shape[axis]) {
    throw Error(ErrorKind::ShapeMismatch, "slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                                              ") on axis " + std::to_string(axis) + " of " +
                                              shape_string(av.shape));
  }
  const AxisView v = axis_view(av.shape, axis);
  Shape out_shape = av.shape;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t chunk = length * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(av.data.begin() + o * v.extent * v.inner + start * v.inner, chunk,
                out.data.begin() + o * chunk);
  }
  return a.tape().record(std::move(out), {a}, [a, v, start, chunk](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (std::size_t o = 0; o < v.outer; ++o) {
      double* dst = ga.data.data() + o * v.extent * v.inner + start * v.inner;
      const double* src = g.data.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) shape_error("reshape", a.shape(), shape);
  Tensor out(std::move(shape), a.value().data);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
    accumulate(t.grad(a), t.grad(self));
  });
}

Var permute(Var a, const std::vector<std::size_t>& axes) {
  const Tensor& av = a.value();
  const std::size_t r = av.rank();
  if (axes.size() != r) throw Error(ErrorKind::ShapeMismatch, "permute rank mismatch");
  std::vector<bool> seen(r, false);
  for (std::size_t ax : axes) {
    if (ax >= r || seen[ax]) throw Error(ErrorKind::ShapeMismatch, "permute axes are not a permutation");
    seen[ax] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * av.shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = av.shape[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  // map[o] = input offset of output element o
  auto map = std::make_shared<std::vector<std::size_t>>(av.size());
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < av.size(); ++o) {
    (*map)[o] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) {
        src += src_stride[i];
        break;
      }
      src -= src_stride[i] * (out_shape[i] - 1);
      counter[i] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < map->size(); ++o) out.data[o] = av.data[(*map)[o]];
  return a.tape().record(std::move(out), {a}, [a, map](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (std::size_t o = 0; o < map->size(); ++o) ga.data[(*map)[o]] += g.data[o];
  });
}

Var masked_fill(Var a, std::shared_ptr<const std::vector<std::uint8_t>> mask, double value) {
  const Tensor& av = a.value();
  const std::size_t period = mask->size();
  if (period == 0 || av.size() % period != 0) {
    throw Error(ErrorKind::ShapeMismatch, "mask of " + std::to_string(period) + " entries does not tile " +
                                              shape_string(av.shape));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if ((*mask)[i % period] != 0) out.data[i] = value;
  }
  return a.tape().record(std::move(out), {a}, [a, mask, period](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if ((*mask)[i % period] == 0) ga.data[i] += g.data[i];
    }
  });
}

Var gather_log_prob(Var a, std::span<const std::uint32_t> index) {
  const Tensor& av = a.value();
  require_rank("gather_log_prob", av, 2);
  const std::size_t rows = av.dim(0), vocab = av.dim(1);
  if (index.size() != rows) {
    throw Error(ErrorKind::ShapeMismatch, "gather_log_prob: " + std::to_string(index.size()) +
                                              " indices for " + std::to_string(rows) + " rows");
  }
  auto idx = std::make_shared<std::vector<std::uint32_t>>(index.begin(), index.end());
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if ((*idx)[r] >= vocab) throw Error(ErrorKind::ShapeMismatch, "gather index out of range");
    out.data[r] = av.data[r * vocab + (*idx)[r]];
  }
  return a.tape().record(std::move(out), {a}, [a, idx, vocab](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < idx->size(); ++r) ga.data[r * vocab + (*idx)[r]] += g.data[r];
  });
}

Var weighted_sum(Var a, std::shared_ptr<const Tensor> weights) {
  const Tensor& av = a.value();
  if (weights->size() != av.size()) shape_error("weighted_sum", av.shape, weights->shape);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double w = weights->data[i];
    if (w != 0.0) s += w * av.data[i];
  }
  return a.tape().record(Tensor::scalar(s), {a}, [a, weights](Tape& t, std::uint32_t self) {
    const double g = t.grad(self).data[0];
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += g * weights->data[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, std::uint32_t self) {
    const double g = t.grad(self).data[0];
    for (double& v : t.grad(a).data) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw Error(ErrorKind::ShapeMismatch, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

}  // namespace cmet::diff
