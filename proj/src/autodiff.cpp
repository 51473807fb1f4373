#include "neurodyn/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace neurodyn {

namespace {

// numpy-style broadcast: align ranks on the right, dims must match or be 1.
struct BcastPlan {
  std::vector<int64_t> out_dims;
  std::vector<int64_t> a_stride;
  std::vector<int64_t> b_stride;
  int64_t numel = 1;
};

std::vector<int64_t> row_major_strides(const std::vector<int64_t>& dims) {
  std::vector<int64_t> s(dims.size(), 1);
  for (int i = static_cast<int>(dims.size()) - 2; i >= 0; --i)
    s[static_cast<size_t>(i)] = s[static_cast<size_t>(i + 1)] * dims[static_cast<size_t>(i + 1)];
  return s;
}

BcastPlan make_bcast_plan(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  size_t r = std::max(a.size(), b.size());
  BcastPlan p;
  p.out_dims.resize(r);
  p.a_stride.assign(r, 0);
  p.b_stride.assign(r, 0);
  auto astr = row_major_strides(a);
  auto bstr = row_major_strides(b);
  for (size_t i = 0; i < r; ++i) {
    size_t ia = i + a.size() - r;  // valid only when i >= r - a.size()
    size_t ib = i + b.size() - r;
    int64_t da = (i >= r - a.size()) ? a[ia] : 1;
    int64_t db = (i >= r - b.size()) ? b[ib] : 1;
    if (da != db && da != 1 && db != 1)
      throw DimensionError("broadcast mismatch between dims");
    p.out_dims[i] = std::max(da, db);
    if (i >= r - a.size() && da != 1) p.a_stride[i] = astr[ia];
    if (i >= r - b.size() && db != 1) p.b_stride[i] = bstr[ib];
    p.numel *= p.out_dims[i];
  }
  return p;
}

// Calls f(out_flat, a_flat, b_flat) over the whole broadcast space.
template <class F>
void bcast_for_each(const BcastPlan& p, F&& f) {
  size_t r = p.out_dims.size();
  if (r == 0) {
    f(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  std::vector<int64_t> idx(r, 0);
  int64_t ai = 0, bi = 0;
  for (int64_t i = 0;; ++i) {
    f(i, ai, bi);
    int ax = static_cast<int>(r) - 1;
    for (;;) {
      if (ax < 0) return;
      size_t u = static_cast<size_t>(ax);
      ++idx[u];
      ai += p.a_stride[u];
      bi += p.b_stride[u];
      if (idx[u] < p.out_dims[u]) break;
      ai -= p.a_stride[u] * p.out_dims[u];
      bi -= p.b_stride[u] * p.out_dims[u];
      idx[u] = 0;
      --ax;
    }
  }
}

template <class F>
Tensor bcast_binary(const Tensor& a, const Tensor& b, F&& f) {
  if (a.same_dims(b)) {  // fast path
    Tensor out(a.dims());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  BcastPlan p = make_bcast_plan(a.dims(), b.dims());
  Tensor out(p.out_dims);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  bcast_for_each(p, [&](int64_t o, int64_t ia, int64_t ib) { po[o] = f(pa[ia], pb[ib]); });
  return out;
}

// Accumulates per-element gradient contributions back onto both operands of a
// broadcast binary op.  fa/fb give d(out)/d(a) and d(out)/d(b) per element.
template <class FA, class FB>
void bcast_binary_backward(const Tensor& a, const Tensor& b, const Tensor& g, Tensor& ga,
                           Tensor& gb, FA&& fa, FB&& fb) {
  if (a.same_dims(b)) {
    const double* pa = a.data();
    const double* pb = b.data();
    const double* pg = g.data();
    double* pga = ga.data();
    double* pgb = gb.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
      pga[i] += pg[i] * fa(pa[i], pb[i]);
      pgb[i] += pg[i] * fb(pa[i], pb[i]);
    }
    return;
  }
  BcastPlan p = make_bcast_plan(a.dims(), b.dims());
  const double* pa = a.data();
  const double* pb = b.data();
  const double* pg = g.data();
  double* pga = ga.data();
  double* pgb = gb.data();
  bcast_for_each(p, [&](int64_t o, int64_t ia, int64_t ib) {
    pga[ia] += pg[o] * fa(pa[ia], pb[ib]);
    pgb[ib] += pg[o] * fb(pa[ia], pb[ib]);
  });
}

// View of a tensor reshaped as (outer, n, inner) around `axis`.
struct AxisSplit {
  int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const std::vector<int64_t>& dims, int axis) {
  if (axis < 0 || axis >= static_cast<int>(dims.size()))
    throw ParameterError("axis out of range");
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= dims[static_cast<size_t>(i)];
  s.n = dims[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < dims.size(); ++i) s.inner *= dims[i];
  return s;
}

void check_rank(const Tensor& t, int64_t lo, int64_t hi, const char* what) {
  if (t.rank() < lo || t.rank() > hi)
    throw DimensionError(std::string(what) + ": unsupported rank " + std::to_string(t.rank()));
}

Tensor matmul_eval(const Tensor& a, const Tensor& b) {
  auto mm2 = [](const double* pa, const double* pb, double* po, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
      double* out_row = po + i * n;
      std::fill(out_row, out_row + n, 0.0);
      for (int64_t kk = 0; kk < k; ++kk) {
        double av = pa[i * k + kk];
        const double* b_row = pb + kk * n;
        for (int64_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
      }
    }
  };
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.dim(1) != b.dim(0)) throw DimensionError("matmul: inner dims differ");
    Tensor out({a.dim(0), b.dim(1)});
    mm2(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
    return out;
  }
  if (a.rank() == 3 && b.rank() == 3) {
    if (a.dim(0) != b.dim(0)) throw DimensionError("matmul: batch dims differ");
    if (a.dim(2) != b.dim(1)) throw DimensionError("matmul: inner dims differ");
    Tensor out({a.dim(0), a.dim(1), b.dim(2)});
    int64_t sa = a.dim(1) * a.dim(2), sb = b.dim(1) * b.dim(2), so = a.dim(1) * b.dim(2);
    for (int64_t bt = 0; bt < a.dim(0); ++bt)
      mm2(a.data() + bt * sa, b.data() + bt * sb, out.data() + bt * so, a.dim(1), a.dim(2),
          b.dim(2));
    return out;
  }
  if (a.rank() == 3 && b.rank() == 2) {
    if (a.dim(2) != b.dim(0)) throw DimensionError("matmul: inner dims differ");
    Tensor out({a.dim(0), a.dim(1), b.dim(1)});
    int64_t sa = a.dim(1) * a.dim(2), so = a.dim(1) * b.dim(1);
    for (int64_t bt = 0; bt < a.dim(0); ++bt)
      mm2(a.data() + bt * sa, b.data(), out.data() + bt * so, a.dim(1), a.dim(2), b.dim(1));
    return out;
  }
  throw DimensionError("matmul: supported ranks are 2x2, 3x3, 3x2");
}

Tensor transpose_eval(const Tensor& a) {
  if (a.rank() == 2) {
    Tensor out({a.dim(1), a.dim(0)});
    for (int64_t i = 0; i < a.dim(0); ++i)
      for (int64_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
    return out;
  }
  if (a.rank() == 3) {
    Tensor out({a.dim(0), a.dim(2), a.dim(1)});
    for (int64_t b = 0; b < a.dim(0); ++b)
      for (int64_t i = 0; i < a.dim(1); ++i)
        for (int64_t j = 0; j < a.dim(2); ++j) out.at(b, j, i) = a.at(b, i, j);
    return out;
  }
  throw DimensionError("transpose: rank must be 2 or 3");
}

struct ConvDims {
  int64_t batch, cin, t, cout, k, tout;
  bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int pad) {
  if (pad < 0) throw ParameterError("conv1d: pad must be >= 0");
  check_rank(w, 3, 3, "conv1d weight");
  ConvDims d{};
  d.batched = x.rank() == 3;
  if (!d.batched) check_rank(x, 2, 2, "conv1d input");
  d.batch = d.batched ? x.dim(0) : 1;
  d.cin = d.batched ? x.dim(1) : x.dim(0);
  d.t = d.batched ? x.dim(2) : x.dim(1);
  d.cout = w.dim(0);
  d.k = w.dim(2);
  if (w.dim(1) != d.cin) throw DimensionError("conv1d: channel mismatch");
  d.tout = d.t + 2 * pad - d.k + 1;
  if (d.tout < 1) throw DimensionError("conv1d: kernel longer than padded input");
  return d;
}

Tensor conv1d_eval(const Tensor& x, const Tensor& w, int pad) {
  ConvDims d = conv_dims(x, w, pad);
  Tensor out(d.batched ? std::vector<int64_t>{d.batch, d.cout, d.tout}
                       : std::vector<int64_t>{d.cout, d.tout});
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();
  for (int64_t b = 0; b < d.batch; ++b) {
    const double* xb = px + b * d.cin * d.t;
    double* ob = po + b * d.cout * d.tout;
    for (int64_t co = 0; co < d.cout; ++co) {
      double* orow = ob + co * d.tout;
      for (int64_t ci = 0; ci < d.cin; ++ci) {
        const double* xrow = xb + ci * d.t;
        const double* wrow = pw + (co * d.cin + ci) * d.k;
        for (int64_t k = 0; k < d.k; ++k) {
          double wv = wrow[k];
          if (wv == 0.0) continue;
          int64_t lo = std::max<int64_t>(0, pad - k);
          int64_t hi = std::min<int64_t>(d.tout, d.t + pad - k);
          const double* xs = xrow + k - pad;
          for (int64_t t = lo; t < hi; ++t) orow[t] += wv * xs[t];
        }
      }
    }
  }
  return out;
}

void conv1d_backward(const Tensor& x, const Tensor& w, int pad, const Tensor& g, Tensor& gx,
                     Tensor& gw) {
  ConvDims d = conv_dims(x, w, pad);
  const double* px = x.data();
  const double* pw = w.data();
  const double* pg = g.data();
  double* pgx = gx.data();
  double* pgw = gw.data();
  for (int64_t b = 0; b < d.batch; ++b) {
    const double* xb = px + b * d.cin * d.t;
    const double* gb = pg + b * d.cout * d.tout;
    double* gxb = pgx + b * d.cin * d.t;
    for (int64_t co = 0; co < d.cout; ++co) {
      const double* grow = gb + co * d.tout;
      for (int64_t ci = 0; ci < d.cin; ++ci) {
        const double* xrow = xb + ci * d.t;
        double* gxrow = gxb + ci * d.t;
        const double* wrow = pw + (co * d.cin + ci) * d.k;
        double* gwrow = pgw + (co * d.cin + ci) * d.k;
        for (int64_t k = 0; k < d.k; ++k) {
          int64_t lo = std::max<int64_t>(0, pad - k);
          int64_t hi = std::min<int64_t>(d.tout, d.t + pad - k);
          double wv = wrow[k];
          double acc = 0.0;
          const double* xs = xrow + k - pad;
          double* gxs = gxrow + k - pad;
          for (int64_t t = lo; t < hi; ++t) {
            acc += grow[t] * xs[t];
            gxs[t] += grow[t] * wv;
          }
          gwrow[k] += acc;
        }
      }
    }
  }
}

}  // namespace

const Tensor& Val::value() const {
  if (!tape) throw ContractError("Val is not bound to a tape");
  return tape->value(id);
}

Val Tape::leaf(Tensor t) {
  nodes_.push_back({Op::leaf, {}, {}, std::move(t)});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::eval(Op op, const std::vector<int>& inputs, const OpAttrs& attrs) {
  auto in = [&](size_t i) -> const Tensor& { return nodes_[static_cast<size_t>(inputs[i])].value; };
  switch (op) {
    case Op::leaf:
      throw ContractError("leaf nodes carry their own value");
    case Op::add:
      return bcast_binary(in(0), in(1), [](double a, double b) { return a + b; });
    case Op::sub:
      return bcast_binary(in(0), in(1), [](double a, double b) { return a - b; });
    case Op::mul:
      return bcast_binary(in(0), in(1), [](double a, double b) { return a * b; });
    case Op::max_:
      return bcast_binary(in(0), in(1), [](double a, double b) { return a >= b ? a : b; });
    case Op::scalar_mul: {
      Tensor out = in(0);
      for (double& v : out.vec()) v *= attrs.scalar;
      return out;
    }
    case Op::matmul:
      return matmul_eval(in(0), in(1));
    case Op::conv1d:
      return conv1d_eval(in(0), in(1), attrs.pad);
    case Op::transpose:
      return transpose_eval(in(0));
    case Op::relu: {
      Tensor out = in(0);
      for (double& v : out.vec()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case Op::sigmoid: {
      Tensor out = in(0);
      for (double& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
      return out;
    }
    case Op::exp_: {
      Tensor out = in(0);
      for (double& v : out.vec()) v = std::exp(v);
      return out;
    }
    case Op::log_: {
      Tensor out = in(0);
      for (double& v : out.vec()) {
        if (v <= 0.0) throw DomainError("log: input must be positive");
        v = std::log(v);
      }
      return out;
    }
    case Op::square: {
      Tensor out = in(0);
      for (double& v : out.vec()) v = v * v;
      return out;
    }
    case Op::sqrt_: {
      Tensor out = in(0);
      for (double& v : out.vec()) {
        if (v < 0.0) throw DomainError("sqrt: input must be non-negative");
        v = std::sqrt(v);
      }
      return out;
    }
    case Op::abs_: {
      Tensor out = in(0);
      for (double& v : out.vec()) v = std::abs(v);
      return out;
    }
    case Op::softmax: {
      const Tensor& x = in(0);
      AxisSplit s = split_axis(x.dims(), attrs.axis);
      Tensor out(x.dims());
      const double* px = x.data();
      double* po = out.data();
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
          int64_t base = o * s.n * s.inner + i;
          double mx = px[base];
          for (int64_t j = 1; j < s.n; ++j) mx = std::max(mx, px[base + j * s.inner]);
          double z = 0.0;
          for (int64_t j = 0; j < s.n; ++j) {
            double e = std::exp(px[base + j * s.inner] - mx);
            po[base + j * s.inner] = e;
            z += e;
          }
          for (int64_t j = 0; j < s.n; ++j) po[base + j * s.inner] /= z;
        }
      return out;
    }
    case Op::layer_norm: {
      const Tensor& x = in(0);
      AxisSplit s = split_axis(x.dims(), attrs.axis);
      Tensor out(x.dims());
      const double* px = x.data();
      double* po = out.data();
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
          int64_t base = o * s.n * s.inner + i;
          double mu = 0.0;
          for (int64_t j = 0; j < s.n; ++j) mu += px[base + j * s.inner];
          mu /= static_cast<double>(s.n);
          double var = 0.0;
          for (int64_t j = 0; j < s.n; ++j) {
            double dv = px[base + j * s.inner] - mu;
            var += dv * dv;
          }
          var /= static_cast<double>(s.n);
          double rstd = 1.0 / std::sqrt(var + attrs.eps);
          for (int64_t j = 0; j < s.n; ++j)
            po[base + j * s.inner] = (px[base + j * s.inner] - mu) * rstd;
        }
      return out;
    }
    case Op::mean:
    case Op::sum: {
      const Tensor& x = in(0);
      bool is_mean = op == Op::mean;
      if (attrs.axis == -1) {
        double acc = 0.0;
        for (double v : x.vec()) acc += v;
        if (is_mean) acc /= static_cast<double>(x.numel());
        return Tensor::scalar(acc);
      }
      AxisSplit s = split_axis(x.dims(), attrs.axis);
      std::vector<int64_t> od = x.dims();
      od.erase(od.begin() + attrs.axis);
      Tensor out(od);
      const double* px = x.data();
      double* po = out.data();
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
          int64_t base = o * s.n * s.inner + i;
          double acc = 0.0;
          for (int64_t j = 0; j < s.n; ++j) acc += px[base + j * s.inner];
          if (is_mean) acc /= static_cast<double>(s.n);
          po[o * s.inner + i] = acc;
        }
      return out;
    }
    case Op::l2_normalize: {
      const Tensor& x = in(0);
      AxisSplit s = split_axis(x.dims(), attrs.axis);
      Tensor out(x.dims());
      const double* px = x.data();
      double* po = out.data();
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
          int64_t base = o * s.n * s.inner + i;
          double r2 = 0.0;
          for (int64_t j = 0; j < s.n; ++j) {
            double v = px[base + j * s.inner];
            r2 += v * v;
          }
          if (r2 == 0.0) {
            ++l2_zero_flags_;  // zero slice stays zero, flagged
            for (int64_t j = 0; j < s.n; ++j) po[base + j * s.inner] = 0.0;
          } else {
            double r = std::sqrt(r2);
            for (int64_t j = 0; j < s.n; ++j) po[base + j * s.inner] = px[base + j * s.inner] / r;
          }
        }
      return out;
    }
    case Op::slice: {
      const Tensor& x = in(0);
      AxisSplit s = split_axis(x.dims(), attrs.axis);
      if (attrs.start < 0 || attrs.stop > s.n || attrs.start >= attrs.stop)
        throw ParameterError("slice: bad range");
      std::vector<int64_t> od = x.dims();
      od[static_cast<size_t>(attrs.axis)] = attrs.stop - attrs.start;
      Tensor out(od);
      int64_t m = attrs.stop - attrs.start;
      const double* px = x.data();
      double* po = out.data();
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t j = 0; j < m; ++j) {
          const double* src = px + (o * s.n + attrs.start + j) * s.inner;
          double* dst = po + (o * m + j) * s.inner;
          std::copy(src, src + s.inner, dst);
        }
      return out;
    }
    case Op::concat: {
      if (inputs.empty()) throw ParameterError("concat: needs at least one input");
      const Tensor& first = in(0);
      AxisSplit s0 = split_axis(first.dims(), attrs.axis);
      int64_t total = 0;
      for (size_t p = 0; p < inputs.size(); ++p) {
        const Tensor& t = in(p);
        if (t.rank() != first.rank()) throw DimensionError("concat: rank mismatch");
        for (int64_t ax = 0; ax < first.rank(); ++ax)
          if (ax != attrs.axis && t.dim(static_cast<int>(ax)) != first.dim(static_cast<int>(ax)))
            throw DimensionError("concat: dims differ off the concat axis");
        total += t.dim(attrs.axis);
      }
      std::vector<int64_t> od = first.dims();
      od[static_cast<size_t>(attrs.axis)] = total;
      Tensor out(od);
      double* po = out.data();
      int64_t offset = 0;
      for (size_t p = 0; p < inputs.size(); ++p) {
        const Tensor& t = in(p);
        int64_t n = t.dim(attrs.axis);
        const double* pt = t.data();
        for (int64_t o = 0; o < s0.outer; ++o)
          for (int64_t j = 0; j < n; ++j) {
            const double* src = pt + (o * n + j) * s0.inner;
            double* dst = po + (o * total + offset + j) * s0.inner;
            std::copy(src, src + s0.inner, dst);
          }
        offset += n;
      }
      return out;
    }
  }
  throw ContractError("unknown op");
}

Val Tape::apply(Op op, const std::vector<int>& inputs, const OpAttrs& attrs) {
  for (int id : inputs)
    if (id < 0 || id >= size()) throw ContractError("apply: input id not on this tape");
  Tensor value = eval(op, inputs, attrs);
  if (!value.all_finite()) throw DomainError("op produced a non-finite value");
  nodes_.push_back({op, inputs, attrs, std::move(value)});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> vals(nodes_.size());
  Tape scratch;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::leaf) {
      vals[i] = n.value;
      scratch.nodes_.push_back({Op::leaf, {}, {}, n.value});
    } else {
      Tensor v = scratch.eval(n.op, n.inputs, n.attrs);
      vals[i] = v;
      scratch.nodes_.push_back({n.op, n.inputs, n.attrs, std::move(v)});
    }
  }
  return vals;
}

std::vector<Tensor> Tape::backward(const Val& root) const {
  if (root.tape != this || root.id < 0 || root.id >= size())
    throw ContractError("backward: root is not on this tape");
  if (nodes_[static_cast<size_t>(root.id)].value.numel() != 1)
    throw ContractError("backward: root must be scalar");

  std::vector<Tensor> grads(nodes_.size());
  std::vector<char> reached(nodes_.size(), 0);
  for (size_t i = 0; i < nodes_.size(); ++i) grads[i] = Tensor(nodes_[i].value.dims());
  grads[static_cast<size_t>(root.id)].vec()[0] = 1.0;
  reached[static_cast<size_t>(root.id)] = 1;

  for (int id = root.id; id >= 0; --id) {
    if (!reached[static_cast<size_t>(id)]) continue;
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.op == Op::leaf) continue;
    const Tensor& g = grads[static_cast<size_t>(id)];
    const Tensor& y = n.value;
    auto in = [&](size_t i) -> const Tensor& {
      return nodes_[static_cast<size_t>(n.inputs[i])].value;
    };
    auto gin = [&](size_t i) -> Tensor& {
      reached[static_cast<size_t>(n.inputs[i])] = 1;
      return grads[static_cast<size_t>(n.inputs[i])];
    };
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add:
        bcast_binary_backward(
            in(0), in(1), g, gin(0), gin(1), [](double, double) { return 1.0; },
            [](double, double) { return 1.0; });
        break;
      case Op::sub:
        bcast_binary_backward(
            in(0), in(1), g, gin(0), gin(1), [](double, double) { return 1.0; },
            [](double, double) { return -1.0; });
        break;
      case Op::mul:
        bcast_binary_backward(
            in(0), in(1), g, gin(0), gin(1), [](double, double b) { return b; },
            [](double a, double) { return a; });
        break;
      case Op::max_:
        // Ties route the gradient to the first operand.
        bcast_binary_backward(
            in(0), in(1), g, gin(0), gin(1),
            [](double a, double b) { return a >= b ? 1.0 : 0.0; },
            [](double a, double b) { return a >= b ? 0.0 : 1.0; });
        break;
      case Op::scalar_mul: {
        Tensor& ga = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += n.attrs.scalar * g[i];
        break;
      }
      case Op::matmul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        Tensor& ga = gin(0);
        Tensor& gb = gin(1);
        auto acc2 = [](Tensor& dst, const Tensor& src) {
          for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
        };
        if (a.rank() == 2 && b.rank() == 2) {
          acc2(ga, matmul_eval(g, transpose_eval(b)));
          acc2(gb, matmul_eval(transpose_eval(a), g));
        } else if (a.rank() == 3 && b.rank() == 3) {
          acc2(ga, matmul_eval(g, transpose_eval(b)));
          acc2(gb, matmul_eval(transpose_eval(a), g));
        } else {  // 3D x 2D: weight grad sums over the batch
          acc2(ga, matmul_eval(g, transpose_eval(b)));
          Tensor at = transpose_eval(a);
          int64_t bt = a.dim(0), k = a.dim(2), m = a.dim(1), nn = b.dim(1);
          for (int64_t bb = 0; bb < bt; ++bb) {
            const double* pat = at.data() + bb * k * m;
            const double* pg = g.data() + bb * m * nn;
            for (int64_t i = 0; i < k; ++i)
              for (int64_t j = 0; j < m; ++j) {
                double av = pat[i * m + j];
                if (av == 0.0) continue;
                const double* grow = pg + j * nn;
                double* out_row = gb.data() + i * nn;
                for (int64_t c = 0; c < nn; ++c) out_row[c] += av * grow[c];
              }
          }
        }
        break;
      }
      case Op::conv1d:
        conv1d_backward(in(0), in(1), n.attrs.pad, g, gin(0), gin(1));
        break;
      case Op::transpose: {
        Tensor gt = transpose_eval(g);
        Tensor& ga = gin(0);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gt[i];
        break;
      }
      case Op::relu: {
        const Tensor& x = in(0);
        Tensor& ga = gin(0);
        for (int64_t i = 0; i < x.numel(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
        break;
      }
      case Op::sigmoid: {
        Tensor& ga = gin(0);
        for (int64_t i = 0; i < y.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::exp_: {
        Tensor& ga = gin(0);
        for (int64_t i = 0; i < y.numel(); ++i) ga[i] += g[i] * y[i];
        break;
      }
      case Op::log_: {
        const Tensor& x = in(0);
        Tensor& ga = gin(0);
        for (int64_t i = 0; i < x.numel(); ++i) ga[i] += g[i] / x[i];
        break;
      }
      case Op::square: {
        const Tensor& x = in(0);
        Tensor& ga = gin(0);
        for (int64_t i = 0; i < x.numel(); ++i) ga[i] += 2.0 * x[i] * g[i];
        break;
      }
      case Op::sqrt_: {
        const Tensor& x = in(0);
        Tensor& ga = gin(0);
        // Subgradient 0 at x == 0 keeps the error state out of silent bins.
        for (int64_t i = 0; i < x.numel(); ++i)
          if (x[i] > 0.0) ga[i] += g[i] * 0.5 / y[i];
        break;
      }
      case Op::abs_: {
        const Tensor& x = in(0);
        Tensor& ga = gin(0);
        for (int64_t i = 0; i < x.numel(); ++i)
          ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
        break;
      }
      case Op::softmax: {
        AxisSplit s = split_axis(y.dims(), n.attrs.axis);
        Tensor& ga = gin(0);
        const double* ps = y.data();
        const double* pg = g.data();
        double* pa = ga.data();
        for (int64_t o = 0; o < s.outer; ++o)
          for (int64_t i = 0; i < s.inner; ++i) {
            int64_t base = o * s.n * s.inner + i;
            double dot = 0.0;
            for (int64_t j = 0; j < s.n; ++j)
              dot += pg[base + j * s.inner] * ps[base + j * s.inner];
            for (int64_t j = 0; j < s.n; ++j)
              pa[base + j * s.inner] +=
                  ps[base + j * s.inner] * (pg[base + j * s.inner] - dot);
          }
        break;
      }
      case Op::layer_norm: {
        const Tensor& x = in(0);
        AxisSplit s = split_axis(x.dims(), n.attrs.axis);
        Tensor& ga = gin(0);
        const double* px = x.data();
        const double* py = y.data();
        const double* pg = g.data();
        double* pa = ga.data();
        double dn = static_cast<double>(s.n);
        for (int64_t o = 0; o < s.outer; ++o)
          for (int64_t i = 0; i < s.inner; ++i) {
            int64_t base = o * s.n * s.inner + i;
            double mu = 0.0;
            for (int64_t j = 0; j < s.n; ++j) mu += px[base + j * s.inner];
            mu /= dn;
            double var = 0.0;
            for (int64_t j = 0; j < s.n; ++j) {
              double dv = px[base + j * s.inner] - mu;
              var += dv * dv;
            }
            var /= dn;
            double rstd = 1.0 / std::sqrt(var + n.attrs.eps);
            double gmean = 0.0, gymean = 0.0;
            for (int64_t j = 0; j < s.n; ++j) {
              gmean += pg[base + j * s.inner];
              gymean += pg[base + j * s.inner] * py[base + j * s.inner];
            }
            gmean /= dn;
            gymean /= dn;
            for (int64_t j = 0; j < s.n; ++j)
              pa[base + j * s.inner] +=
                  rstd * (pg[base + j * s.inner] - gmean - py[base + j * s.inner] * gymean);
          }
        break;
      }
      case Op::mean:
      case Op::sum: {
        const Tensor& x = in(0);
        bool is_mean = n.op == Op::mean;
        Tensor& ga = gin(0);
        if (n.attrs.axis == -1) {
          double gv = g.vec()[0];
          if (is_mean) gv /= static_cast<double>(x.numel());
          for (int64_t i = 0; i < x.numel(); ++i) ga[i] += gv;
        } else {
          AxisSplit s = split_axis(x.dims(), n.attrs.axis);
          double scale = is_mean ? 1.0 / static_cast<double>(s.n) : 1.0;
          const double* pg = g.data();
          double* pa = ga.data();
          for (int64_t o = 0; o < s.outer; ++o)
            for (int64_t i = 0; i < s.inner; ++i) {
              double gv = pg[o * s.inner + i] * scale;
              int64_t base = o * s.n * s.inner + i;
              for (int64_t j = 0; j < s.n; ++j) pa[base + j * s.inner] += gv;
            }
        }
        break;
      }
      case Op::l2_normalize: {
        const Tensor& x = in(0);
        AxisSplit s = split_axis(x.dims(), n.attrs.axis);
        Tensor& ga = gin(0);
        const double* px = x.data();
        const double* py = y.data();
        const double* pg = g.data();
        double* pa = ga.data();
        for (int64_t o = 0; o < s.outer; ++o)
          for (int64_t i = 0; i < s.inner; ++i) {
            int64_t base = o * s.n * s.inner + i;
            double r2 = 0.0;
            for (int64_t j = 0; j < s.n; ++j) {
              double v = px[base + j * s.inner];
              r2 += v * v;
            }
            if (r2 == 0.0) continue;  // zero slice is constant zero output
            double r = std::sqrt(r2);
            double dot = 0.0;
            for (int64_t j = 0; j < s.n; ++j)
              dot += py[base + j * s.inner] * pg[base + j * s.inner];
            for (int64_t j = 0; j < s.n; ++j)
              pa[base + j * s.inner] +=
                  (pg[base + j * s.inner] - py[base + j * s.inner] * dot) / r;
          }
        break;
      }
      case Op::slice: {
        const Tensor& x = in(0);
        AxisSplit s = split_axis(x.dims(), n.attrs.axis);
        Tensor& ga = gin(0);
        int64_t m = n.attrs.stop - n.attrs.start;
        const double* pg = g.data();
        double* pa = ga.data();
        for (int64_t o = 0; o < s.outer; ++o)
          for (int64_t j = 0; j < m; ++j) {
            const double* src = pg + (o * m + j) * s.inner;
            double* dst = pa + (o * s.n + n.attrs.start + j) * s.inner;
            for (int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
          }
        break;
      }
      case Op::concat: {
        const Tensor& first = in(0);
        AxisSplit s0 = split_axis(first.dims(), n.attrs.axis);
        int64_t total = y.dim(n.attrs.axis);
        const double* pg = g.data();
        int64_t offset = 0;
        for (size_t p = 0; p < n.inputs.size(); ++p) {
          const Tensor& t = in(p);
          Tensor& gp = gin(p);
          int64_t nn = t.dim(n.attrs.axis);
          double* pa = gp.data();
          for (int64_t o = 0; o < s0.outer; ++o)
            for (int64_t j = 0; j < nn; ++j) {
              const double* src = pg + (o * total + offset + j) * s0.inner;
              double* dst = pa + (o * nn + j) * s0.inner;
              for (int64_t i = 0; i < s0.inner; ++i) dst[i] += src[i];
            }
          offset += nn;
        }
        break;
      }
    }
  }
  return grads;
}

namespace {

Val unary(Val a, Op op, OpAttrs attrs = {}) {
  if (!a.tape) throw ContractError("op on unbound Val");
  return a.tape->apply(op, {a.id}, attrs);
}

Val binary(Val a, Val b, Op op, OpAttrs attrs = {}) {
  if (!a.tape || a.tape != b.tape) throw ContractError("operands must share a tape");
  return a.tape->apply(op, {a.id, b.id}, attrs);
}

}  // namespace

Val add(Val a, Val b) { return binary(a, b, Op::add); }
Val sub(Val a, Val b) { return binary(a, b, Op::sub); }
Val mul(Val a, Val b) { return binary(a, b, Op::mul); }
Val max(Val a, Val b) { return binary(a, b, Op::max_); }
Val matmul(Val a, Val b) { return binary(a, b, Op::matmul); }

Val scalar_mul(Val a, double c) {
  OpAttrs at;
  at.scalar = c;
  return unary(a, Op::scalar_mul, at);
}

Val conv1d(Val x, Val w, int pad) {
  OpAttrs at;
  at.pad = pad;
  return binary(x, w, Op::conv1d, at);
}

Val transpose(Val a) { return unary(a, Op::transpose); }
Val relu(Val a) { return unary(a, Op::relu); }
Val sigmoid(Val a) { return unary(a, Op::sigmoid); }
Val exp(Val a) { return unary(a, Op::exp_); }
Val log(Val a) { return unary(a, Op::log_); }
Val square(Val a) { return unary(a, Op::square); }
Val sqrt(Val a) { return unary(a, Op::sqrt_); }
Val abs(Val a) { return unary(a, Op::abs_); }

Val softmax(Val a, int axis) {
  OpAttrs at;
  at.axis = axis;
  return unary(a, Op::softmax, at);
}

Val layer_norm(Val a, int axis, double eps) {
  OpAttrs at;
  at.axis = axis;
  at.eps = eps;
  return unary(a, Op::layer_norm, at);
}

Val mean(Val a, int axis) {
  OpAttrs at;
  at.axis = axis;
  return unary(a, Op::mean, at);
}

Val sum(Val a, int axis) {
  OpAttrs at;
  at.axis = axis;
  return unary(a, Op::sum, at);
}

Val l2_normalize(Val a, int axis) {
  OpAttrs at;
  at.axis = axis;
  return unary(a, Op::l2_normalize, at);
}

Val slice(Val a, int axis, int64_t start, int64_t stop) {
  OpAttrs at;
  at.axis = axis;
  at.start = start;
  at.stop = stop;
  return unary(a, Op::slice, at);
}

Val concat(const std::vector<Val>& parts, int axis) {
  if (parts.empty()) throw ParameterError("concat: needs at least one input");
  Tape* tape = parts[0].tape;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Val& v : parts) {
    if (v.tape != tape) throw ContractError("operands must share a tape");
    ids.push_back(v.id);
  }
  OpAttrs at;
  at.axis = axis;
  return tape->apply(Op::concat, ids, at);
}

double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step) {
  if (step <= 0.0) throw ParameterError("grad_check: step must be positive");
  Tape tape;
  std::vector<Val> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  Val root = f(tape, leaves);
  if (root.value().numel() != 1) throw ContractError("grad_check: f must produce a scalar");
  std::vector<Tensor> grads = tape.backward(root);

  auto eval_at = [&](const std::vector<Tensor>& xs) {
    Tape t2;
    std::vector<Val> ls;
    ls.reserve(xs.size());
    for (const Tensor& t : xs) ls.push_back(t2.leaf(t));
    double v = f(t2, ls).value().item();
    if (!std::isfinite(v)) throw DomainError("grad_check: non-finite function value");
    return v;
  };

  double worst = 0.0;
  std::vector<Tensor> xs = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& ga = grads[static_cast<size_t>(leaves[i].id)];
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      double orig = xs[i][j];
      xs[i][j] = orig + step;
      double fp = eval_at(xs);
      xs[i][j] = orig - step;
      double fm = eval_at(xs);
      xs[i][j] = orig;
      double fd = (fp - fm) / (2.0 * step);
      double rel = std::abs(ga[j] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace neurodyn
