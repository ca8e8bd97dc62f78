#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "core/tensor.hpp"

namespace stainkit::ad {

// Define-by-run reverse-mode tape. Every operation allocates a Node holding
// its value and a closure that scatters the incoming gradient to the
// parents. backward() walks the graph in reverse topological order.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on demand, same shape as value
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  bool requires_grad = false;

  Tensor& ensure_grad();
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad = false);

// Accumulates gradients of a scalar root into every reachable node with
// requires_grad set. Gradients are added; call zero_grad between steps.
void backward(const Var& root);
void zero_grad(const Var& param);

// --- elementwise ---
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);

// --- structure ---
Var concat_channels(const Var& a, const Var& b);

// Per-pixel luma replicated over three channels; the differentiable H'
// (grayscale) used inside the cycle.
Var luma_gray3(const Var& x);

// --- convolution (NCHW) ---
// conv2d: weight {Cout, Cin, kh, kw}, bias {Cout}.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// conv_transpose2d: weight {Cin, Cout, kh, kw}, bias {Cout}.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

// Instance normalization over each (sample, channel) plane, no affine.
Var instance_norm(const Var& x, double eps = 1e-5);

// Weight divided by the spectral-norm estimate sigma = u^T W~ v, where W~
// is the weight unfolded to rows = leading dimension. u and v are treated
// as constants of the graph; power iteration updates them out-of-band.
Var spectral_scale(const Var& weight, const Tensor& u, const Tensor& v);

// --- scalar reductions (result shape {1}) ---
Var mean_abs_diff(const Var& a, const Var& b);
Var mean_square_to(const Var& x, double target);  // mean((x - target)^2)

// --- plain-tensor helpers shared with inference paths ---
void im2col(const double* img, int channels, int img_h, int img_w, int kh, int kw,
            int stride, int pad, int out_h, int out_w, double* col);
void col2im(const double* col, int channels, int img_h, int img_w, int kh, int kw,
            int stride, int pad, int out_h, int out_w, double* img);
Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      int stride, int pad);

}  // namespace stainkit::ad
