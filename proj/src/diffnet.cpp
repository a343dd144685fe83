#include "stein_cv/diffnet.hpp"

#include <cmath>
#include <string>

#include "stein_cv/error.hpp"
#include "stein_cv/rng.hpp"

namespace steincv {

namespace {

using RowMajorMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Matrix Activate(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::kIdentity: return z;
    case Activation::kRelu: return z.cwiseMax(0.0);
    // Vectorized through exp; within a few ulp of std::tanh.
    case Activation::kTanh: return (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
  }
  return z;
}

// First derivative given pre-activation z and activation output h.
Matrix FirstDerivative(Activation a, const Matrix& z, const Matrix& h) {
  switch (a) {
    case Activation::kIdentity: return Matrix::Ones(z.rows(), z.cols());
    case Activation::kRelu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::kTanh: return (1.0 - h.array().square()).matrix();
  }
  return Matrix();
}

Matrix SecondDerivative(Activation a, const Matrix& z, const Matrix& h) {
  switch (a) {
    case Activation::kIdentity:
    case Activation::kRelu: return Matrix::Zero(z.rows(), z.cols());
    case Activation::kTanh:
      return (-2.0 * h.array() * (1.0 - h.array().square())).matrix();
  }
  return Matrix();
}

void WriteLayerGrad(const Matrix& dw, const Matrix& gz, double* out) {
  RowMajorMap(out, dw.rows(), dw.cols()) = dw;
  Eigen::Map<Vector>(out + dw.size(), gz.rows()) = gz.rowwise().sum();
}

}  // namespace

const char* ActivationName(Activation activation) {
  switch (activation) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "identity";
}

Activation ParseActivation(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  Throw(ErrorCode::kInvalidArgument, "unknown activation '" + name + "'");
}

struct DenseNet::Trace {
  std::vector<Matrix> h;   // h[0] = input, h[k] = output of layer k-1
  std::vector<Matrix> z;   // pre-activations, one per layer
};

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  Require(!layers_.empty(), ErrorCode::kInvalidArgument,
          "a dense net needs at least one layer");
  num_params_ = 0;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const DenseLayer& layer = layers_[k];
    Require(layer.bias.size() == layer.weight.rows(), ErrorCode::kDimension,
            "layer " + std::to_string(k) + ": bias length " +
                std::to_string(layer.bias.size()) + " != output dim " +
                std::to_string(layer.weight.rows()));
    Require(layer.weight.rows() > 0 && layer.weight.cols() > 0,
            ErrorCode::kDimension,
            "layer " + std::to_string(k) + " has an empty weight matrix");
    if (k > 0) {
      Require(layers_[k - 1].out_dim() == layer.in_dim(), ErrorCode::kDimension,
              "layer " + std::to_string(k) + " expects input dim " +
                  std::to_string(layer.in_dim()) + " but layer " +
                  std::to_string(k - 1) + " produces " +
                  std::to_string(layers_[k - 1].out_dim()));
    }
    num_params_ += static_cast<int>(layer.weight.size() + layer.bias.size());
  }
}

DenseNet DenseNet::Create(int input_dim, std::span<const int> hidden,
                          int output_dim, Activation hidden_activation,
                          Activation output_activation, Rng& rng) {
  std::vector<DenseLayer> layers;
  int in = input_dim;
  auto add = [&](int out, Activation act) {
    Require(out > 0 && in > 0, ErrorCode::kInvalidArgument,
            "layer sizes must be positive");
    const double bound = std::sqrt(6.0 / (in + out));
    DenseLayer layer;
    layer.weight.resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.weight(r, c) = rng.Uniform(-bound, bound);
    layer.bias = Vector::Zero(out);
    layer.activation = act;
    layers.push_back(std::move(layer));
    in = out;
  };
  for (int width : hidden) add(width, hidden_activation);
  add(output_dim, output_activation);
  return DenseNet(std::move(layers));
}

int DenseNet::input_dim() const {
  return layers_.empty() ? 0 : layers_.front().in_dim();
}

int DenseNet::output_dim() const {
  return layers_.empty() ? 0 : layers_.back().out_dim();
}

Vector DenseNet::Flatten() const {
  Vector out(num_params_);
  int offset = 0;
  for (const DenseLayer& layer : layers_) {
    RowMajorMap(out.data() + offset, layer.out_dim(), layer.in_dim()) = layer.weight;
    offset += static_cast<int>(layer.weight.size());
    out.segment(offset, layer.bias.size()) = layer.bias;
    offset += static_cast<int>(layer.bias.size());
  }
  return out;
}

void DenseNet::Unflatten(const VectorRef& params) {
  Require(params.size() == num_params_, ErrorCode::kDimension,
          "parameter vector has length " + std::to_string(params.size()) +
              ", net expects " + std::to_string(num_params_));
  int offset = 0;
  for (DenseLayer& layer : layers_) {
    layer.weight = ConstRowMajorMap(params.data() + offset, layer.out_dim(),
                                    layer.in_dim());
    offset += static_cast<int>(layer.weight.size());
    layer.bias = params.segment(offset, layer.bias.size());
    offset += static_cast<int>(layer.bias.size());
  }
}

DenseNet DenseNet::WithParams(const VectorRef& params) const {
  DenseNet copy = *this;
  copy.Unflatten(params);
  return copy;
}

void DenseNet::CheckInput(const MatrixRef& inputs, const char* what) const {
  Require(!layers_.empty(), ErrorCode::kInvalidArgument, "net has no layers");
  Require(inputs.rows() == input_dim(), ErrorCode::kDimension,
          std::string(what) + ": layer 0 expects input dim " +
              std::to_string(input_dim()) + ", got " +
              std::to_string(inputs.rows()));
}

void DenseNet::CheckUpstream(const MatrixRef& inputs,
                             const MatrixRef& upstream) const {
  Require(upstream.rows() == output_dim() && upstream.cols() == inputs.cols(),
          ErrorCode::kDimension,
          "upstream must be " + std::to_string(output_dim()) + " x " +
              std::to_string(inputs.cols()) + " (layer " +
              std::to_string(layers_.size() - 1) + " output), got " +
              std::to_string(upstream.rows()) + " x " +
              std::to_string(upstream.cols()));
}

DenseNet::Trace DenseNet::Run(const MatrixRef& inputs) const {
  Trace t;
  t.h.reserve(layers_.size() + 1);
  t.z.reserve(layers_.size());
  t.h.emplace_back(inputs);
  for (const DenseLayer& layer : layers_) {
    Matrix z = layer.weight * t.h.back();
    z.colwise() += layer.bias;
    t.h.push_back(Activate(layer.activation, z));
    t.z.push_back(std::move(z));
  }
  return t;
}

Matrix DenseNet::Forward(const MatrixRef& inputs) const {
  CheckInput(inputs, "forward");
  Matrix h = inputs;
  for (const DenseLayer& layer : layers_) {
    Matrix z = layer.weight * h;
    z.colwise() += layer.bias;
    h = Activate(layer.activation, z);
  }
  return h;
}

std::vector<Matrix> DenseNet::PreActivations(const MatrixRef& inputs) const {
  CheckInput(inputs, "pre-activations");
  return Run(inputs).z;
}

Vector DenseNet::ParamGrad(const MatrixRef& inputs,
                           const MatrixRef& upstream) const {
  CheckInput(inputs, "param grad");
  CheckUpstream(inputs, upstream);
  Trace t = Run(inputs);
  Vector grad(num_params_);
  int offset = num_params_;
  Matrix g = upstream;
  for (int k = static_cast<int>(layers_.size()) - 1; k >= 0; --k) {
    const DenseLayer& layer = layers_[k];
    Matrix gz = g.cwiseProduct(FirstDerivative(layer.activation, t.z[k], t.h[k + 1]));
    offset -= static_cast<int>(layer.weight.size() + layer.bias.size());
    WriteLayerGrad(gz * t.h[k].transpose(), gz, grad.data() + offset);
    if (k > 0) g = layer.weight.transpose() * gz;
  }
  return grad;
}

Matrix DenseNet::InputGrad(const MatrixRef& inputs,
                           const MatrixRef& upstream) const {
  CheckInput(inputs, "input grad");
  CheckUpstream(inputs, upstream);
  Trace t = Run(inputs);
  Matrix g = upstream;
  for (int k = static_cast<int>(layers_.size()) - 1; k >= 0; --k) {
    const DenseLayer& layer = layers_[k];
    Matrix gz = g.cwiseProduct(FirstDerivative(layer.activation, t.z[k], t.h[k + 1]));
    g = layer.weight.transpose() * gz;
  }
  return g;
}

NetJvp DenseNet::Jvp(const MatrixRef& inputs, const MatrixRef& tangent,
                     const MatrixRef& upstream,
                     const Matrix& upstream_tangent) const {
  CheckInput(inputs, "jvp");
  CheckUpstream(inputs, upstream);
  Require(tangent.rows() == inputs.rows() && tangent.cols() == inputs.cols(),
          ErrorCode::kDimension, "jvp: tangent must match the input shape");
  const bool has_up_tangent = upstream_tangent.size() > 0;
  if (has_up_tangent) {
    Require(upstream_tangent.rows() == upstream.rows() &&
                upstream_tangent.cols() == upstream.cols(),
            ErrorCode::kDimension, "jvp: upstream tangent must match upstream");
  }

  const std::size_t num_layers = layers_.size();
  Trace t = Run(inputs);
  std::vector<Matrix> d1(num_layers), d2(num_layers), z_dot(num_layers);
  std::vector<Matrix> h_dot;
  h_dot.reserve(num_layers + 1);
  h_dot.emplace_back(tangent);
  for (std::size_t k = 0; k < num_layers; ++k) {
    const DenseLayer& layer = layers_[k];
    d1[k] = FirstDerivative(layer.activation, t.z[k], t.h[k + 1]);
    d2[k] = SecondDerivative(layer.activation, t.z[k], t.h[k + 1]);
    z_dot[k] = layer.weight * h_dot[k];
    h_dot.push_back(d1[k].cwiseProduct(z_dot[k]));
  }

  NetJvp out;
  out.output = t.h.back();
  out.output_tangent = h_dot.back();
  out.param_grad.resize(num_params_);
  out.dir_param_grad.resize(num_params_);

  Matrix g = upstream;
  Matrix g_dot = has_up_tangent ? upstream_tangent
                                : Matrix::Zero(upstream.rows(), upstream.cols());
  int offset = num_params_;
  for (int k = static_cast<int>(num_layers) - 1; k >= 0; --k) {
    const DenseLayer& layer = layers_[k];
    Matrix gz = g.cwiseProduct(d1[k]);
    Matrix gz_dot = g_dot.cwiseProduct(d1[k]) +
                    g.cwiseProduct(d2[k]).cwiseProduct(z_dot[k]);
    offset -= static_cast<int>(layer.weight.size() + layer.bias.size());
    WriteLayerGrad(gz * t.h[k].transpose(), gz, out.param_grad.data() + offset);
    WriteLayerGrad(gz_dot * t.h[k].transpose() + gz * h_dot[k].transpose(), gz_dot,
                   out.dir_param_grad.data() + offset);
    g = layer.weight.transpose() * gz;
    g_dot = layer.weight.transpose() * gz_dot;
  }
  out.input_grad = std::move(g);
  out.dir_input_grad = std::move(g_dot);
  return out;
}

bool DenseNet::operator==(const DenseNet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const DenseLayer& a = layers_[k];
    const DenseLayer& b = other.layers_[k];
    if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
        a.weight.cols() != b.weight.cols() || a.weight != b.weight ||
        a.bias != b.bias)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

ConcatNet::ConcatNet(DenseNet encoder, DenseNet head)
    : encoder_(std::move(encoder)), head_(std::move(head)) {
  trail_dim_ = head_.input_dim() - encoder_.output_dim();
  Require(trail_dim_ > 0, ErrorCode::kDimension,
          "head input dim must exceed the encoder output dim");
}

ConcatNet ConcatNet::Create(int lead_dim, int trail_dim, int hidden,
                            Activation activation, Rng& rng) {
  DenseNet encoder = DenseNet::Create(lead_dim, std::span<const int>(), hidden,
                                      activation, activation, rng);
  const int head_hidden[] = {hidden};
  DenseNet head = DenseNet::Create(hidden + trail_dim, head_hidden, 1,
                                   activation, Activation::kIdentity, rng);
  return ConcatNet(std::move(encoder), std::move(head));
}

Vector ConcatNet::Flatten() const {
  Vector out(num_params());
  out << encoder_.Flatten(), head_.Flatten();
  return out;
}

void ConcatNet::Unflatten(const VectorRef& params) {
  Require(params.size() == num_params(), ErrorCode::kDimension,
          "parameter vector has length " + std::to_string(params.size()) +
              ", net expects " + std::to_string(num_params()));
  encoder_.Unflatten(params.head(encoder_.num_params()));
  head_.Unflatten(params.tail(head_.num_params()));
}

namespace {

Matrix Stack(const Matrix& top, const MatrixRef& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

}  // namespace

Matrix ConcatNet::Forward(const MatrixRef& lead, const MatrixRef& trail) const {
  Require(trail.rows() == trail_dim_ && trail.cols() == lead.cols(),
          ErrorCode::kDimension, "concat net: trailing input has wrong shape");
  return head_.Forward(Stack(encoder_.Forward(lead), trail));
}

Vector ConcatNet::ParamGrad(const MatrixRef& lead, const MatrixRef& trail,
                            const MatrixRef& upstream) const {
  Require(trail.rows() == trail_dim_ && trail.cols() == lead.cols(),
          ErrorCode::kDimension, "concat net: trailing input has wrong shape");
  const Matrix code = encoder_.Forward(lead);
  const Matrix x = Stack(code, trail);
  const Matrix g_head = head_.InputGrad(x, upstream);
  Vector out(num_params());
  out << encoder_.ParamGrad(lead, g_head.topRows(code.rows())),
      head_.ParamGrad(x, upstream);
  return out;
}

std::pair<Matrix, Matrix> ConcatNet::InputGrad(const MatrixRef& lead,
                                               const MatrixRef& trail,
                                               const MatrixRef& upstream) const {
  Require(trail.rows() == trail_dim_ && trail.cols() == lead.cols(),
          ErrorCode::kDimension, "concat net: trailing input has wrong shape");
  const Matrix code = encoder_.Forward(lead);
  const Matrix g_head = head_.InputGrad(Stack(code, trail), upstream);
  Matrix g_lead = encoder_.InputGrad(lead, g_head.topRows(code.rows()));
  return {std::move(g_lead), g_head.bottomRows(trail_dim_)};
}

ConcatNet::SplitJvp ConcatNet::Jvp(const MatrixRef& lead, const MatrixRef& trail,
                                   const MatrixRef& lead_tangent,
                                   const MatrixRef& trail_tangent,
                                   const MatrixRef& upstream,
                                   const Matrix& upstream_tangent) const {
  Require(trail.rows() == trail_dim_ && trail.cols() == lead.cols(),
          ErrorCode::kDimension, "concat net: trailing input has wrong shape");
  Require(trail_tangent.rows() == trail.rows() &&
              trail_tangent.cols() == trail.cols(),
          ErrorCode::kDimension, "concat net: trailing tangent has wrong shape");
  const int code_dim = encoder_.output_dim();
  // Forward tangent of the code; the encoder's reverse pass is redone below
  // once the head provides the upstream for it.
  const Matrix zero_up = Matrix::Zero(code_dim, lead.cols());
  const NetJvp enc_fwd = encoder_.Jvp(lead, lead_tangent, zero_up);
  const Matrix x = Stack(enc_fwd.output, trail);
  const Matrix x_dot = Stack(enc_fwd.output_tangent, trail_tangent);
  const NetJvp head_jvp = head_.Jvp(x, x_dot, upstream, upstream_tangent);

  const Matrix g_code = head_jvp.input_grad.topRows(code_dim);
  const Matrix g_code_dot = head_jvp.dir_input_grad.topRows(code_dim);
  const NetJvp enc = encoder_.Jvp(lead, lead_tangent, g_code, g_code_dot);

  SplitJvp out;
  out.output = head_jvp.output;
  out.lead_grad = enc.input_grad;
  out.dir_lead_grad = enc.dir_input_grad;
  out.trail_grad = head_jvp.input_grad.bottomRows(trail_dim_);
  out.dir_trail_grad = head_jvp.dir_input_grad.bottomRows(trail_dim_);
  out.param_grad.resize(num_params());
  out.param_grad << enc.param_grad, head_jvp.param_grad;
  out.dir_param_grad.resize(num_params());
  out.dir_param_grad << enc.dir_param_grad, head_jvp.dir_param_grad;
  return out;
}

bool ConcatNet::operator==(const ConcatNet& other) const {
  return encoder_ == other.encoder_ && head_ == other.head_;
}

}  // namespace steincv
