#include "bhfl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bhfl {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace ops {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                              const BasicTensor<T>* bias, int pad) {
  require(x.rank() == 4 && w.rank() == 4, "conv2d expects 4-d input and weights");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int oc = w.dim(0), k = w.dim(2);
  require(w.dim(1) == c, "conv2d channel mismatch: input " + shape_str(x.shape()) +
                             " weights " + shape_str(w.shape()));
  const int oh = h + 2 * pad - k + 1, ow = wd + 2 * pad - k + 1;
  require(oh > 0 && ow > 0, "conv2d output would be empty");
  BasicTensor<T> y({n, oc, oh, ow});
  const T* xp = x.data();
  const T* wp = w.data();
  T* yp = y.data();
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < oc; ++o) {
      T* yplane = yp + (static_cast<std::size_t>(b) * oc + o) * oh * ow;
      if (bias) std::fill(yplane, yplane + oh * ow, (*bias)[o]);
      for (int i = 0; i < c; ++i) {
        const T* xplane = xp + (static_cast<std::size_t>(b) * c + i) * h * wd;
        const T* wk = wp + (static_cast<std::size_t>(o) * c + i) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int y0 = std::max(0, pad - ky), y1 = std::min(oh, h + pad - ky);
          for (int kx = 0; kx < k; ++kx) {
            const T wv = wk[ky * k + kx];
            if (wv == T(0)) continue;
            const int x0 = std::max(0, pad - kx), x1 = std::min(ow, wd + pad - kx);
            for (int oy = y0; oy < y1; ++oy) {
              T* yrow = yplane + oy * ow;
              const T* xrow = xplane + (oy + ky - pad) * wd + (kx - pad);
              for (int ox = x0; ox < x1; ++ox) yrow[ox] += wv * xrow[ox];
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                     int pad, BasicTensor<T>* dx, BasicTensor<T>& dw, BasicTensor<T>* db) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int oc = w.dim(0), k = w.dim(2);
  const int oh = dy.dim(2), ow = dy.dim(3);
  require(dw.same_shape(w), "conv2d_backward: dw shape mismatch");
  if (dx) *dx = BasicTensor<T>(x.shape());
  const T* xp = x.data();
  const T* wp = w.data();
  const T* dyp = dy.data();
  T* dwp = dw.data();
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < oc; ++o) {
      const T* dyplane = dyp + (static_cast<std::size_t>(b) * oc + o) * oh * ow;
      if (db) {
        T s = 0;
        for (int j = 0; j < oh * ow; ++j) s += dyplane[j];
        (*db)[o] += s;
      }
      for (int i = 0; i < c; ++i) {
        const T* xplane = xp + (static_cast<std::size_t>(b) * c + i) * h * wd;
        T* dxplane = dx ? dx->data() + (static_cast<std::size_t>(b) * c + i) * h * wd : nullptr;
        const std::size_t wbase = (static_cast<std::size_t>(o) * c + i) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int y0 = std::max(0, pad - ky), y1 = std::min(oh, h + pad - ky);
          for (int kx = 0; kx < k; ++kx) {
            const int x0 = std::max(0, pad - kx), x1 = std::min(ow, wd + pad - kx);
            const T wv = wp[wbase + ky * k + kx];
            T acc = 0;
            for (int oy = y0; oy < y1; ++oy) {
              const T* dyrow = dyplane + oy * ow;
              const int off = (oy + ky - pad) * wd + (kx - pad);
              const T* xrow = xplane + off;
              for (int ox = x0; ox < x1; ++ox) acc += dyrow[ox] * xrow[ox];
              if (dxplane && wv != T(0)) {
                T* dxrow = dxplane + off;
                for (int ox = x0; ox < x1; ++ox) dxrow[ox] += wv * dyrow[ox];
              }
            }
            dwp[wbase + ky * k + kx] += acc;
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                             const BasicTensor<T>* bias) {
  require(w.rank() == 2, "dense expects 2-d weights");
  const int n = x.dim(0);
  const int in = static_cast<int>(x.size() / n), out = w.dim(0);
  require(w.dim(1) == in, "dense feature mismatch: input " + shape_str(x.shape()) +
                              " weights " + shape_str(w.shape()));
  BasicTensor<T> y({n, out});
  for (int b = 0; b < n; ++b) {
    const T* xr = x.data() + static_cast<std::size_t>(b) * in;
    for (int o = 0; o < out; ++o) {
      const T* wr = w.data() + static_cast<std::size_t>(o) * in;
      T s = bias ? (*bias)[o] : T(0);
      for (int i = 0; i < in; ++i) s += wr[i] * xr[i];
      y[static_cast<std::size_t>(b) * out + o] = s;
    }
  }
  return y;
}

template <typename T>
void dense_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                    BasicTensor<T>* dx, BasicTensor<T>& dw, BasicTensor<T>* db) {
  const int n = x.dim(0);
  const int in = static_cast<int>(x.size() / n), out = w.dim(0);
  if (dx) *dx = BasicTensor<T>(x.shape());
  for (int b = 0; b < n; ++b) {
    const T* xr = x.data() + static_cast<std::size_t>(b) * in;
    T* dxr = dx ? dx->data() + static_cast<std::size_t>(b) * in : nullptr;
    for (int o = 0; o < out; ++o) {
      const T g = dy[static_cast<std::size_t>(b) * out + o];
      if (db) (*db)[o] += g;
      if (g == T(0)) continue;
      T* dwr = dw.data() + static_cast<std::size_t>(o) * in;
      const T* wr = w.data() + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) dwr[i] += g * xr[i];
      if (dxr) {
        for (int i = 0; i < in; ++i) dxr[i] += g * wr[i];
      }
    }
  }
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
BasicTensor<T> maxpool2_forward(const BasicTensor<T>& x, std::vector<int>& argmax) {
  require(x.rank() == 4, "maxpool expects 4-d input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h / 2, ow = w / 2;
  require(oh > 0 && ow > 0, "maxpool input too small: " + shape_str(x.shape()));
  BasicTensor<T> y({n, c, oh, ow});
  argmax.assign(y.size(), 0);
  std::size_t out = 0;
  for (int p = 0; p < n * c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++out) {
        std::size_t best = base + (2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[out] = x[best];
        argmax[out] = static_cast<int>(best);
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> maxpool2_backward(const BasicTensor<T>& dy, const std::vector<int>& argmax,
                                 const Shape& input_shape) {
  BasicTensor<T> dx(input_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits) {
  const int n = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> p(logits.shape());
  for (int b = 0; b < n; ++b) {
    const T* z = logits.data() + static_cast<std::size_t>(b) * k;
    T* pr = p.data() + static_cast<std::size_t>(b) * k;
    const T m = *std::max_element(z, z + k);
    double s = 0;
    for (int j = 0; j < k; ++j) {
      pr[j] = static_cast<T>(std::exp(static_cast<double>(z[j] - m)));
      s += pr[j];
    }
    for (int j = 0; j < k; ++j) pr[j] = static_cast<T>(pr[j] / s);
  }
  return p;
}

template <typename T>
std::pair<double, BasicTensor<T>> softmax_cross_entropy(const BasicTensor<T>& logits,
                                                        const std::vector<int>& labels) {
  const int n = logits.dim(0), k = logits.dim(1);
  require(static_cast<int>(labels.size()) == n, "label count does not match batch size");
  BasicTensor<T> grad = softmax_rows(logits);
  double loss = 0;
  for (int b = 0; b < n; ++b) {
    const int y = labels[b];
    require(y >= 0 && y < k, "label out of range");
    const std::size_t row = static_cast<std::size_t>(b) * k;
    loss -= std::log(std::max(static_cast<double>(grad[row + y]),
                              std::numeric_limits<double>::min()));
    grad[row + y] -= T(1);
  }
  for (auto& g : grad.values()) g /= static_cast<T>(n);
  return {loss / n, std::move(grad)};
}

#define BHFL_INSTANTIATE(T)                                                                     \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                         const BasicTensor<T>*, int);                           \
  template void conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                const BasicTensor<T>&, int, BasicTensor<T>*, BasicTensor<T>&,   \
                                BasicTensor<T>*);                                               \
  template BasicTensor<T> dense_forward(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                        const BasicTensor<T>*);                                 \
  template void dense_backward(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                               const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>&,         \
                               BasicTensor<T>*);                                                \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> maxpool2_forward(const BasicTensor<T>&, std::vector<int>&);           \
  template BasicTensor<T> maxpool2_backward(const BasicTensor<T>&, const std::vector<int>&,     \
                                            const Shape&);                                      \
  template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                                  \
  template std::pair<double, BasicTensor<T>> softmax_cross_entropy(const BasicTensor<T>&,       \
                                                                   const std::vector<int>&);

BHFL_INSTANTIATE(float)
BHFL_INSTANTIATE(double)
#undef BHFL_INSTANTIATE

}  // namespace ops
}  // namespace bhfl
