#pragma once

#include <span>
#include <vector>

#include "nadjust/tensor.hpp"

namespace nadjust {

// Direct NCHW kernels, OpenMP-parallel over independent output slices.
// Every kernel keeps a fixed per-output accumulation order, so results are
// bit-identical for any thread count and to the serial reference in
// nadjust::ref.

/// Odd kernel, symmetric (k-1)/2 padding: out = ceil(in / stride).
/// w shape: (c_out, c_in, k, k); y must be preallocated.
void conv2d_forward(const Tensor4& x, const Tensor4& w, Tensor4& y, int stride);
void conv2d_backward_input(const Tensor4& dy, const Tensor4& w, Tensor4& dx, int stride);
void conv2d_backward_weights(const Tensor4& x, const Tensor4& dy, Tensor4& dw, int stride);

/// Batch statistics over (n, h, w) per channel; y = gamma * x_hat + beta.
void batchnorm_forward_train(const Tensor4& x, std::span<const double> gamma,
                             std::span<const double> beta, Tensor4& y,
                             std::vector<double>& batch_mean, std::vector<double>& batch_var,
                             double eps);
void batchnorm_forward_eval(const Tensor4& x, std::span<const double> gamma,
                            std::span<const double> beta, std::span<const double> running_mean,
                            std::span<const double> running_var, Tensor4& y, double eps);
void batchnorm_backward(const Tensor4& x, const Tensor4& dy, std::span<const double> gamma,
                        const std::vector<double>& batch_mean, const std::vector<double>& batch_var,
                        Tensor4& dx, std::vector<double>& dgamma, std::vector<double>& dbeta,
                        double eps);

void relu_forward(const Tensor4& x, Tensor4& y);
/// dx = dy where the forward input was > 0.
void relu_backward(const Tensor4& x, const Tensor4& dy, Tensor4& dx);

/// Average pooling, valid padding; kernel == 0 means global average.
void avgpool_forward(const Tensor4& x, Tensor4& y, int kernel, int stride);
void avgpool_backward(const Tensor4& dy, Tensor4& dx, int kernel, int stride);

/// Fully connected over the flattened (c*h*w) input. w is row-major
/// (out, in); y has shape (n, out, 1, 1).
void fc_forward(const Tensor4& x, std::span<const double> w, std::span<const double> b, Tensor4& y);
void fc_backward(const Tensor4& x, std::span<const double> w, const Tensor4& dy, Tensor4& dx,
                 std::vector<double>& dw, std::vector<double>& db);

/// Elementwise add with channel zero padding: out width = max of inputs,
/// the narrower input contributes zeros beyond its width.
void add_forward_padded(const Tensor4& a, const Tensor4& b, Tensor4& y);
/// Gradient slices for the two inputs (channels beyond an input's width are
/// dropped).
void add_backward_padded(const Tensor4& dy, Tensor4& da, Tensor4& db);

void concat_forward(const std::vector<const Tensor4*>& inputs, Tensor4& y);
void concat_backward(const Tensor4& dy, const std::vector<Tensor4*>& grads);

/// Multiply every (n, c) plane by mask[n * c_count + c]; in place.
void apply_channel_mask(Tensor4& x, std::span<const double> mask);

/// Softmax cross-entropy over scores (n, classes, 1, 1). Returns mean loss
/// and writes dscores (already divided by n).
double softmax_xent(const Tensor4& scores, std::span<const int> labels, Tensor4& dscores);

void sgd_momentum_update(std::span<double> param, std::span<const double> grad,
                         std::span<double> velocity, double lr, double momentum);

namespace ref {

// Serial reference implementations used as the test oracle and as the
// baseline in the kernel benchmark. Same contracts as above.

void conv2d_forward(const Tensor4& x, const Tensor4& w, Tensor4& y, int stride);
void conv2d_backward_input(const Tensor4& dy, const Tensor4& w, Tensor4& dx, int stride);
void conv2d_backward_weights(const Tensor4& x, const Tensor4& dy, Tensor4& dw, int stride);
void batchnorm_forward_train(const Tensor4& x, std::span<const double> gamma,
                             std::span<const double> beta, Tensor4& y,
                             std::vector<double>& batch_mean, std::vector<double>& batch_var,
                             double eps);
void avgpool_forward(const Tensor4& x, Tensor4& y, int kernel, int stride);
void fc_forward(const Tensor4& x, std::span<const double> w, std::span<const double> b, Tensor4& y);

}  // namespace ref

}  // namespace nadjust
