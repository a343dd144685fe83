#ifndef STEIN_CV_DIFFNET_HPP_
#define STEIN_CV_DIFFNET_HPP_

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace steincv {

class Rng;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixRef = Eigen::Ref<const Eigen::MatrixXd>;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

enum class Activation { kIdentity, kRelu, kTanh };

const char* ActivationName(Activation activation);
Activation ParseActivation(const std::string& name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

// Output of the forward-over-reverse pass. All "grad" quantities are
// gradients of upstream^T * net(x); "dir" quantities are their directional
// derivatives along the input tangent.
struct NetJvp {
  Matrix output;            // d_out x N
  Matrix output_tangent;    // d_out x N
  Matrix input_grad;        // d_in x N
  Matrix dir_input_grad;    // d_in x N
  Vector param_grad;        // p, summed over the batch
  Vector dir_param_grad;    // p, summed over the batch
};

// Feed-forward stack of affine layers, each followed by its activation.
//
// Inputs are column-major batches: every column of an input matrix is one
// sample, so a single Eigen::VectorXd is a batch of one. Parameter gradients
// are summed over the batch columns.
//
// Flattening order ("dense-rowmajor-v1"): layers in order; within a layer the
// weight matrix row by row, followed by the bias vector.
//
// ReLU uses subgradient 0 at the kink and second derivative 0 everywhere.
class DenseNet {
 public:
  static constexpr const char* kFlatteningVersion = "dense-rowmajor-v1";

  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  // Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static DenseNet Create(int input_dim, std::span<const int> hidden,
                         int output_dim, Activation hidden_activation,
                         Activation output_activation, Rng& rng);

  int input_dim() const;
  int output_dim() const;
  int num_params() const { return num_params_; }
  bool empty() const { return layers_.empty(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }

  Vector Flatten() const;
  void Unflatten(const VectorRef& params);
  DenseNet WithParams(const VectorRef& params) const;

  Matrix Forward(const MatrixRef& inputs) const;
  // Pre-activation values of every layer, for callers that need to stay
  // away from ReLU kinks.
  std::vector<Matrix> PreActivations(const MatrixRef& inputs) const;

  Vector ParamGrad(const MatrixRef& inputs, const MatrixRef& upstream) const;
  Matrix InputGrad(const MatrixRef& inputs, const MatrixRef& upstream) const;

  // Directional derivative along `tangent` (input space) of both InputGrad
  // and ParamGrad. `upstream_tangent`, when non-empty, is the directional
  // derivative of the upstream itself, for composing nets.
  NetJvp Jvp(const MatrixRef& inputs, const MatrixRef& tangent,
             const MatrixRef& upstream,
             const Matrix& upstream_tangent = Matrix()) const;

  bool operator==(const DenseNet& other) const;

 private:
  struct Trace;
  Trace Run(const MatrixRef& inputs) const;
  void CheckInput(const MatrixRef& inputs, const char* what) const;
  void CheckUpstream(const MatrixRef& inputs, const MatrixRef& upstream) const;

  std::vector<DenseLayer> layers_;
  int num_params_ = 0;
};

// Two-stage network over a split input (x_lead, x_trail): the encoder maps
// x_lead to a hidden code, and the head maps [code; x_trail] to the output.
// Used for the state-action baseline where the state is encoded first and the
// action joins at the second hidden layer.
//
// Flattening order: encoder parameters, then head parameters.
class ConcatNet {
 public:
  ConcatNet() = default;
  ConcatNet(DenseNet encoder, DenseNet head);

  static ConcatNet Create(int lead_dim, int trail_dim, int hidden,
                          Activation activation, Rng& rng);

  int lead_dim() const { return encoder_.input_dim(); }
  int trail_dim() const { return trail_dim_; }
  int output_dim() const { return head_.output_dim(); }
  int num_params() const { return encoder_.num_params() + head_.num_params(); }
  const DenseNet& encoder() const { return encoder_; }
  const DenseNet& head() const { return head_; }

  Vector Flatten() const;
  void Unflatten(const VectorRef& params);

  Matrix Forward(const MatrixRef& lead, const MatrixRef& trail) const;
  Vector ParamGrad(const MatrixRef& lead, const MatrixRef& trail,
                   const MatrixRef& upstream) const;
  // Returns {d/d lead, d/d trail}.
  std::pair<Matrix, Matrix> InputGrad(const MatrixRef& lead,
                                      const MatrixRef& trail,
                                      const MatrixRef& upstream) const;

  struct SplitJvp {
    Matrix output;
    Matrix lead_grad, trail_grad;
    Matrix dir_lead_grad, dir_trail_grad;
    Vector param_grad, dir_param_grad;
  };
  SplitJvp Jvp(const MatrixRef& lead, const MatrixRef& trail,
               const MatrixRef& lead_tangent, const MatrixRef& trail_tangent,
               const MatrixRef& upstream,
               const Matrix& upstream_tangent = Matrix()) const;

  bool operator==(const ConcatNet& other) const;

 private:
  DenseNet encoder_;
  DenseNet head_;
  int trail_dim_ = 0;
};

}  // namespace steincv

#endif  // STEIN_CV_DIFFNET_HPP_
