#include "stein_cv/serialize.hpp"

#include <cstdlib>
#include <sstream>

#include "stein_cv/config.hpp"
#include "stein_cv/error.hpp"

namespace steincv {

namespace {

constexpr const char* kPolicyMagic = "stein-cv-policy";
constexpr const char* kBaselineMagic = "stein-cv-baseline";
constexpr int kFormatVersion = 1;

void WriteNet(std::ostream& o, const char* name, const DenseNet& net) {
  o << "net " << name << " " << net.layers().size() << "\n";
  for (const DenseLayer& l : net.layers())
    o << "layer " << l.in_dim() << " " << l.out_dim() << " " << ActivationName(l.activation)
      << "\n";
  const Vector p = net.Flatten();
  o << "params " << p.size();
  for (Eigen::Index i = 0; i < p.size(); ++i) o << " " << FormatDouble(p(i));
  o << "\n";
}

void WriteVector(std::ostream& o, const char* name, const Vector& v) {
  o << name << " " << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) o << " " << FormatDouble(v(i));
  o << "\n";
}

class Reader {
 public:
  explicit Reader(const std::string& text) : in_(text) {}

  void Expect(const std::string& word) {
    const std::string got = Word();
    Require(got == word, ErrorCode::kInvalidArgument,
            "serialized data: expected '" + word + "', got '" + got + "'");
  }
  std::string Word() {
    std::string w;
    Require(static_cast<bool>(in_ >> w), ErrorCode::kInvalidArgument,
            "serialized data ends early");
    return w;
  }
  long Int() {
    long x = 0;
    Require(static_cast<bool>(in_ >> x), ErrorCode::kInvalidArgument,
            "serialized data: expected an integer");
    return x;
  }
  double Real() {
    const std::string w = Word();
    char* end = nullptr;
    const double x = std::strtod(w.c_str(), &end);
    Require(*end == '\0', ErrorCode::kInvalidArgument,
            "serialized data: bad number '" + w + "'");
    return x;
  }
  Vector Values(const char* name) {
    Expect(name);
    const long n = Int();
    Require(n >= 0 && n < 100'000'000, ErrorCode::kInvalidArgument,
            "serialized data: bad length");
    Vector v(n);
    for (long i = 0; i < n; ++i) v(i) = Real();
    return v;
  }
  DenseNet Net(const char* name) {
    Expect("net");
    Expect(name);
    const long n_layers = Int();
    Require(n_layers > 0 && n_layers < 1000, ErrorCode::kInvalidArgument,
            "serialized data: bad layer count");
    std::vector<DenseLayer> layers;
    for (long k = 0; k < n_layers; ++k) {
      Expect("layer");
      const long in = Int(), out = Int();
      Require(in > 0 && out > 0, ErrorCode::kInvalidArgument,
              "serialized data: bad layer shape");
      DenseLayer l;
      l.weight = Matrix::Zero(out, in);
      l.bias = Vector::Zero(out);
      l.activation = ParseActivation(Word());
      layers.push_back(std::move(l));
    }
    DenseNet net(std::move(layers));
    net.Unflatten(Values("params"));
    return net;
  }

 private:
  std::istringstream in_;
};

}  // namespace

std::string SerializePolicy(const GaussianPolicy& policy) {
  std::ostringstream o;
  o << kPolicyMagic << " " << kFormatVersion << "\n";
  o << "flattening " << DenseNet::kFlatteningVersion << "\n";
  o << "dims " << policy.state_dim() << " " << policy.action_dim() << "\n";
  WriteNet(o, "mean", policy.mean_net());
  WriteVector(o, "log_std", policy.log_std());
  return o.str();
}

GaussianPolicy DeserializePolicy(const std::string& text) {
  Reader r(text);
  r.Expect(kPolicyMagic);
  Require(r.Int() == kFormatVersion, ErrorCode::kInvalidArgument,
          "unsupported policy format version");
  r.Expect("flattening");
  r.Expect(DenseNet::kFlatteningVersion);
  r.Expect("dims");
  const long ds = r.Int(), da = r.Int();
  DenseNet mean = r.Net("mean");
  Vector log_std = r.Values("log_std");
  GaussianPolicy p(std::move(mean), std::move(log_std));
  Require(p.state_dim() == ds && p.action_dim() == da, ErrorCode::kDimension,
          "serialized policy dims disagree with its layers");
  return p;
}

std::string SerializeBaseline(const Baseline& b) {
  std::ostringstream o;
  o << kBaselineMagic << " " << kFormatVersion << "\n";
  o << "flattening " << DenseNet::kFlatteningVersion << "\n";
  o << "kind " << BaselineKindName(b.kind()) << "\n";
  o << "dims " << b.state_dim() << " " << b.action_dim() << "\n";
  WriteNet(o, "value", b.value_net());
  o << "value_affine " << FormatDouble(b.value_shift()) << " " << FormatDouble(b.value_scale())
    << "\n";
  switch (b.kind()) {
    case BaselineKind::kValue: break;
    case BaselineKind::kLinear: WriteNet(o, "q", b.q_net()); break;
    case BaselineKind::kQuadratic:
      WriteNet(o, "m", b.m_net());
      WriteVector(o, "diag_raw", b.diag_raw());
      break;
    case BaselineKind::kMlp:
      WriteNet(o, "encoder", b.mlp().encoder());
      WriteNet(o, "head", b.mlp().head());
      break;
  }
  return o.str();
}

Baseline DeserializeBaseline(const std::string& text) {
  Reader r(text);
  r.Expect(kBaselineMagic);
  Require(r.Int() == kFormatVersion, ErrorCode::kInvalidArgument,
          "unsupported baseline format version");
  r.Expect("flattening");
  r.Expect(DenseNet::kFlatteningVersion);
  r.Expect("kind");
  const BaselineKind kind = ParseBaselineKind(r.Word());
  r.Expect("dims");
  r.Int();
  const long da = r.Int();
  DenseNet value = r.Net("value");
  r.Expect("value_affine");
  const double shift = r.Real(), scale = r.Real();
  DenseNet q, m;
  Vector raw;
  ConcatNet mlp;
  switch (kind) {
    case BaselineKind::kValue: break;
    case BaselineKind::kLinear: q = r.Net("q"); break;
    case BaselineKind::kQuadratic:
      m = r.Net("m");
      raw = r.Values("diag_raw");
      break;
    case BaselineKind::kMlp: {
      DenseNet enc = r.Net("encoder");
      DenseNet head = r.Net("head");
      mlp = ConcatNet(std::move(enc), std::move(head));
      break;
    }
  }
  Baseline b = MakeBaseline(kind, std::move(value), std::move(q), std::move(m),
                            std::move(raw), std::move(mlp), static_cast<int>(da));
  b.SetValueAffine(shift, scale);
  return b;
}

}  // namespace steincv
