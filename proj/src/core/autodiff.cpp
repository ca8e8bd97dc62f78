#include "core/autodiff.hpp"

#include <Eigen/Core>

#include <cmath>
#include <unordered_set>

#include "core/error.hpp"

namespace stainkit::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->parents = std::move(parents);
  for (const auto& p : node->parents) {
    if (p->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) node->backprop = std::move(backprop);
  return node;
}

void topo_sort(const Var& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace

void backward(const Var& root) {
  if (root->value.size() != 1) fail(ErrorCode::InvalidArgument, "backward root must be scalar");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  topo_sort(root, order);
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
}

void zero_grad(const Var& param) {
  if (!param->grad.empty()) param->grad.fill(0.0);
}

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) fail(ErrorCode::ShapeMismatch, "add: shape mismatch");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = n.parents[k];
      if (!p->requires_grad) continue;
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
  return make_op(std::move(out), {a}, [s](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
  });
}

Var relu(const Var& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] > 0.0 ? x->value[i] : 0.0;
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    const Tensor& v = n.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (v[i] > 0.0) g[i] += n.grad[i];
    }
  });
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x->value[i] > 0.0 ? x->value[i] : slope * x->value[i];
  }
  return make_op(std::move(out), {x}, [slope](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    const Tensor& v = n.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += n.grad[i] * (v[i] > 0.0 ? 1.0 : slope);
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x->value[i]));
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double y = n.value[i];
      g[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    fail(ErrorCode::ShapeMismatch, "concat_channels: incompatible shapes");
  }
  int n = sa[0], ca = sa[1], cb = sb[1], h = sa[2], w = sa[3];
  std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({n, ca + cb, h, w});
  for (int s = 0; s < n; ++s) {
    double* dst = out.data() + static_cast<std::size_t>(s) * (ca + cb) * plane;
    const double* pa = a->value.data() + static_cast<std::size_t>(s) * ca * plane;
    const double* pb = b->value.data() + static_cast<std::size_t>(s) * cb * plane;
    std::copy(pa, pa + ca * plane, dst);
    std::copy(pb, pb + cb * plane, dst + ca * plane);
  }
  return make_op(std::move(out), {a, b}, [n, ca, cb, plane](Node& node) {
    for (int s = 0; s < n; ++s) {
      const double* src = node.grad.data() + static_cast<std::size_t>(s) * (ca + cb) * plane;
      if (node.parents[0]->requires_grad) {
        double* ga = node.parents[0]->ensure_grad().data() + static_cast<std::size_t>(s) * ca * plane;
        for (std::size_t i = 0; i < ca * plane; ++i) ga[i] += src[i];
      }
      if (node.parents[1]->requires_grad) {
        double* gb = node.parents[1]->ensure_grad().data() + static_cast<std::size_t>(s) * cb * plane;
        for (std::size_t i = 0; i < cb * plane; ++i) gb[i] += src[ca * plane + i];
      }
    }
  });
}

Var luma_gray3(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 4 || s[1] != 3) fail(ErrorCode::ShapeMismatch, "luma_gray3 expects NCHW with C=3");
  static constexpr double kW[3] = {0.299, 0.587, 0.114};
  int n = s[0], h = s[2], w = s[3];
  std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out(s);
  for (int b = 0; b < n; ++b) {
    const double* in = x->value.data() + static_cast<std::size_t>(b) * 3 * plane;
    double* o = out.data() + static_cast<std::size_t>(b) * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double l = kW[0] * in[i] + kW[1] * in[plane + i] + kW[2] * in[2 * plane + i];
      o[i] = l;
      o[plane + i] = l;
      o[2 * plane + i] = l;
    }
  }
  return make_op(std::move(out), {x}, [n, plane](Node& node) {
    Tensor& g = node.parents[0]->ensure_grad();
    for (int b = 0; b < n; ++b) {
      const double* go = node.grad.data() + static_cast<std::size_t>(b) * 3 * plane;
      double* gi = g.data() + static_cast<std::size_t>(b) * 3 * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        double sum = go[i] + go[plane + i] + go[2 * plane + i];
        gi[i] += kW[0] * sum;
        gi[plane + i] += kW[1] * sum;
        gi[2 * plane + i] += kW[2] * sum;
      }
    }
  });
}

void im2col(const double* img, int channels, int img_h, int img_w, int kh, int kw,
            int stride, int pad, int out_h, int out_w, double* col) {
  std::size_t positions = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        double* row = col + ((static_cast<std::size_t>(c) * kh + i) * kw + j) * positions;
        for (int oy = 0; oy < out_h; ++oy) {
          int y = oy * stride + i - pad;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (y < 0 || y >= img_h) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = img + (static_cast<std::size_t>(c) * img_h + y) * img_w;
          for (int ox = 0; ox < out_w; ++ox) {
            int x = ox * stride + j - pad;
            dst[ox] = (x >= 0 && x < img_w) ? src[x] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, int img_h, int img_w, int kh, int kw,
            int stride, int pad, int out_h, int out_w, double* img) {
  std::size_t positions = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const double* row = col + ((static_cast<std::size_t>(c) * kh + i) * kw + j) * positions;
        for (int oy = 0; oy < out_h; ++oy) {
          int y = oy * stride + i - pad;
          if (y < 0 || y >= img_h) continue;
          double* dst = img + (static_cast<std::size_t>(c) * img_h + y) * img_w;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            int x = ox * stride + j - pad;
            if (x >= 0 && x < img_w) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

namespace {

struct ConvDims {
  int n, cin, h, w, cout, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1]) {
    fail(ErrorCode::ShapeMismatch, "conv2d: bad input/weight shapes");
  }
  ConvDims d{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0};
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.oh < 1 || d.ow < 1) fail(ErrorCode::ShapeMismatch, "conv2d: output collapses to zero");
  return d;
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      int stride, int pad) {
  ConvDims d = conv_dims(x, weight, stride, pad);
  int k = d.cin * d.kh * d.kw;
  std::size_t positions = static_cast<std::size_t>(d.oh) * d.ow;
  Tensor out({d.n, d.cout, d.oh, d.ow});
  std::vector<double> col(static_cast<std::size_t>(k) * positions);
  ConstMapMat wmat(weight.data(), d.cout, k);
  for (int b = 0; b < d.n; ++b) {
    im2col(x.data() + static_cast<std::size_t>(b) * d.cin * d.h * d.w, d.cin, d.h, d.w,
           d.kh, d.kw, stride, pad, d.oh, d.ow, col.data());
    ConstMapMat cmat(col.data(), k, static_cast<Eigen::Index>(positions));
    MapMat omat(out.data() + static_cast<std::size_t>(b) * d.cout * positions, d.cout,
                static_cast<Eigen::Index>(positions));
    omat.noalias() = wmat * cmat;
    for (int c = 0; c < d.cout; ++c) omat.row(c).array() += bias[static_cast<std::size_t>(c)];
  }
  return out;
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  Tensor out = conv2d_forward(x->value, weight->value, bias->value, stride, pad);
  ConvDims d = conv_dims(x->value, weight->value, stride, pad);
  return make_op(std::move(out), {x, weight, bias}, [d, stride, pad](Node& node) {
    const Tensor& xv = node.parents[0]->value;
    const Tensor& wv = node.parents[1]->value;
    int k = d.cin * d.kh * d.kw;
    std::size_t positions = static_cast<std::size_t>(d.oh) * d.ow;
    std::vector<double> col(static_cast<std::size_t>(k) * positions);
    bool need_x = node.parents[0]->requires_grad;
    bool need_w = node.parents[1]->requires_grad;
    bool need_b = node.parents[2]->requires_grad;
    for (int b = 0; b < d.n; ++b) {
      ConstMapMat gout(node.grad.data() + static_cast<std::size_t>(b) * d.cout * positions,
                       d.cout, static_cast<Eigen::Index>(positions));
      if (need_w || need_x) {
        ConstMapMat wmat(wv.data(), d.cout, k);
        if (need_w) {
          im2col(xv.data() + static_cast<std::size_t>(b) * d.cin * d.h * d.w, d.cin, d.h,
                 d.w, d.kh, d.kw, stride, pad, d.oh, d.ow, col.data());
          ConstMapMat cmat(col.data(), k, static_cast<Eigen::Index>(positions));
          MapMat gw(node.parents[1]->ensure_grad().data(), d.cout, k);
          gw.noalias() += gout * cmat.transpose();
        }
        if (need_x) {
          RowMat gcol = wmat.transpose() * gout;  // k x positions
          col2im(gcol.data(), d.cin, d.h, d.w, d.kh, d.kw, stride, pad, d.oh, d.ow,
                 node.parents[0]->ensure_grad().data() +
                     static_cast<std::size_t>(b) * d.cin * d.h * d.w);
        }
      }
      if (need_b) {
        Tensor& gb = node.parents[2]->ensure_grad();
        for (int c = 0; c < d.cout; ++c) gb[static_cast<std::size_t>(c)] += gout.row(c).sum();
      }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const auto& xs = x->value.shape();
  const auto& ws = weight->value.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0]) {
    fail(ErrorCode::ShapeMismatch, "conv_transpose2d: bad input/weight shapes");
  }
  int n = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  int cout = ws[1], kh = ws[2], kw = ws[3];
  int oh = (h - 1) * stride + kh - 2 * pad;
  int ow = (w - 1) * stride + kw - 2 * pad;
  if (oh < 1 || ow < 1) fail(ErrorCode::ShapeMismatch, "conv_transpose2d: empty output");

  int k = cout * kh * kw;
  std::size_t in_positions = static_cast<std::size_t>(h) * w;
  std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  Tensor out({n, cout, oh, ow});
  ConstMapMat wmat(weight->value.data(), cin, k);
  std::vector<double> col(static_cast<std::size_t>(k) * in_positions);
  for (int b = 0; b < n; ++b) {
    ConstMapMat xmat(x->value.data() + static_cast<std::size_t>(b) * cin * in_positions,
                     cin, static_cast<Eigen::Index>(in_positions));
    MapMat cmat(col.data(), k, static_cast<Eigen::Index>(in_positions));
    cmat.noalias() = wmat.transpose() * xmat;
    double* img = out.data() + static_cast<std::size_t>(b) * cout * out_plane;
    col2im(col.data(), cout, oh, ow, kh, kw, stride, pad, h, w, img);
    for (int c = 0; c < cout; ++c) {
      double bv = bias->value[static_cast<std::size_t>(c)];
      double* plane = img + static_cast<std::size_t>(c) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) plane[i] += bv;
    }
  }

  return make_op(std::move(out), {x, weight, bias},
                 [n, cin, h, w, cout, kh, kw, oh, ow, stride, pad](Node& node) {
    int k = cout * kh * kw;
    std::size_t in_positions = static_cast<std::size_t>(h) * w;
    std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    const Tensor& xv = node.parents[0]->value;
    const Tensor& wv = node.parents[1]->value;
    bool need_x = node.parents[0]->requires_grad;
    bool need_w = node.parents[1]->requires_grad;
    bool need_b = node.parents[2]->requires_grad;
    std::vector<double> col(static_cast<std::size_t>(k) * in_positions);
    for (int b = 0; b < n; ++b) {
      const double* gimg = node.grad.data() + static_cast<std::size_t>(b) * cout * out_plane;
      if (need_x || need_w) {
        im2col(gimg, cout, oh, ow, kh, kw, stride, pad, h, w, col.data());
        ConstMapMat cmat(col.data(), k, static_cast<Eigen::Index>(in_positions));
        if (need_x) {
          ConstMapMat wmat(wv.data(), cin, k);
          MapMat gx(node.parents[0]->ensure_grad().data() +
                        static_cast<std::size_t>(b) * cin * in_positions,
                    cin, static_cast<Eigen::Index>(in_positions));
          gx.noalias() += wmat * cmat;
        }
        if (need_w) {
          ConstMapMat xmat(xv.data() + static_cast<std::size_t>(b) * cin * in_positions,
                           cin, static_cast<Eigen::Index>(in_positions));
          MapMat gw(node.parents[1]->ensure_grad().data(), cin, k);
          gw.noalias() += xmat * cmat.transpose();
        }
      }
      if (need_b) {
        Tensor& gb = node.parents[2]->ensure_grad();
        for (int c = 0; c < cout; ++c) {
          const double* plane = gimg + static_cast<std::size_t>(c) * out_plane;
          double s = 0.0;
          for (std::size_t i = 0; i < out_plane; ++i) s += plane[i];
          gb[static_cast<std::size_t>(c)] += s;
        }
      }
    }
  });
}

Var instance_norm(const Var& x, double eps) {
  const auto& s = x->value.shape();
  if (s.size() != 4) fail(ErrorCode::ShapeMismatch, "instance_norm expects NCHW");
  int n = s[0], c = s[1];
  std::size_t m = static_cast<std::size_t>(s[2]) * s[3];
  Tensor out(s);
  Tensor inv_std({n, c});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* in = x->value.data() + (static_cast<std::size_t>(b) * c + ch) * m;
      double* o = out.data() + (static_cast<std::size_t>(b) * c + ch) * m;
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += in[i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double d = in[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      double inv = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(b) * c + ch] = inv;
      for (std::size_t i = 0; i < m; ++i) o[i] = (in[i] - mean) * inv;
    }
  }
  auto node = make_op(std::move(out), {x}, nullptr);
  if (node->requires_grad) {
    Tensor inv_copy = std::move(inv_std);
    node->backprop = [n, c, m, inv = std::move(inv_copy)](Node& nd) {
      Tensor& gx = nd.parents[0]->ensure_grad();
      for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
          std::size_t off = (static_cast<std::size_t>(b) * c + ch) * m;
          const double* y = nd.value.data() + off;
          const double* gy = nd.grad.data() + off;
          double* g = gx.data() + off;
          double mean_gy = 0.0, mean_gyy = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            mean_gy += gy[i];
            mean_gyy += gy[i] * y[i];
          }
          mean_gy /= static_cast<double>(m);
          mean_gyy /= static_cast<double>(m);
          double is = inv[static_cast<std::size_t>(b) * c + ch];
          for (std::size_t i = 0; i < m; ++i) {
            g[i] += is * (gy[i] - mean_gy - y[i] * mean_gyy);
          }
        }
      }
    };
  }
  return node;
}

Var spectral_scale(const Var& weight, const Tensor& u, const Tensor& v) {
  const auto& ws = weight->value.shape();
  if (ws.empty()) fail(ErrorCode::ShapeMismatch, "spectral_scale: weight has no shape");
  int rows = ws[0];
  int cols = static_cast<int>(weight->value.size()) / rows;
  if (static_cast<int>(u.size()) != rows || static_cast<int>(v.size()) != cols) {
    fail(ErrorCode::ShapeMismatch, "spectral_scale: u/v size mismatch");
  }
  ConstMapMat wmat(weight->value.data(), rows, cols);
  Eigen::Map<const Eigen::VectorXd> uv(u.data(), rows);
  Eigen::Map<const Eigen::VectorXd> vv(v.data(), cols);
  double sigma = uv.dot(wmat * vv);
  if (sigma < 1e-12) sigma = 1e-12;

  Tensor out(ws);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = weight->value[i] / sigma;
  Tensor u_copy = u, v_copy = v;
  return make_op(std::move(out), {weight},
                 [rows, cols, sigma, uc = std::move(u_copy), vc = std::move(v_copy)](Node& nd) {
    Tensor& gw = nd.parents[0]->ensure_grad();
    double dot = 0.0;
    for (std::size_t i = 0; i < nd.grad.size(); ++i) dot += nd.grad[i] * nd.value[i];
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        std::size_t i = static_cast<std::size_t>(r) * cols + c;
        gw[i] += (nd.grad[i] - dot * uc[static_cast<std::size_t>(r)] * vc[static_cast<std::size_t>(c)]) / sigma;
      }
    }
  });
}

Var mean_abs_diff(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) fail(ErrorCode::ShapeMismatch, "mean_abs_diff: shape mismatch");
  std::size_t n = a->value.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::abs(a->value[i] - b->value[i]);
  Tensor out({1});
  out[0] = sum / static_cast<double>(n);
  return make_op(std::move(out), {a, b}, [n](Node& nd) {
    double g = nd.grad[0] / static_cast<double>(n);
    const Tensor& av = nd.parents[0]->value;
    const Tensor& bv = nd.parents[1]->value;
    for (int k = 0; k < 2; ++k) {
      if (!nd.parents[k]->requires_grad) continue;
      Tensor& gp = nd.parents[k]->ensure_grad();
      double sign_mul = k == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        double d = av[i] - bv[i];
        double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        gp[i] += g * s * sign_mul;
      }
    }
  });
}

Var mean_square_to(const Var& x, double target) {
  std::size_t n = x->value.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = x->value[i] - target;
    sum += d * d;
  }
  Tensor out({1});
  out[0] = sum / static_cast<double>(n);
  return make_op(std::move(out), {x}, [n, target](Node& nd) {
    double g = nd.grad[0] * 2.0 / static_cast<double>(n);
    const Tensor& xv = nd.parents[0]->value;
    Tensor& gp = nd.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) gp[i] += g * (xv[i] - target);
  });
}

}  // namespace stainkit::ad
