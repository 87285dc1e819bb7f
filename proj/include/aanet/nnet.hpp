// Fully connected ReLU networks with hand-written backpropagation, plain SGD on
// mean squared error, soft target updates, and a versioned text file format.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aanet/util.hpp"

namespace aanet::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NetSpec {
  int input_dim = 36;
  std::vector<int> hidden{100, 100};
  int output_dim = 10;

  static NetSpec dqn(int k = 10) { return {3 * (k + 2), {100, 100}, k}; }
  static NetSpec dvn(int k = 10) { return {3 * (k + 2), {50, 50}, 1}; }

  std::vector<int> widths() const {
    std::vector<int> w{input_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(output_dim);
    return w;
  }
  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

inline void validate(const NetSpec& s) {
  for (int w : s.widths()) {
    if (w <= 0) throw std::invalid_argument("NetSpec: layer widths must be positive");
  }
}

/// Weights are stored out x in, so layer l maps a column x to W[l] x + b[l].
struct NetParams {
  NetSpec spec;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  std::size_t n_layers() const { return weights.size(); }
  std::size_t n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }
  bool operator==(const NetParams& o) const {
    if (!(spec == o.spec) || weights.size() != o.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    }
    return true;
  }
};

/// Zero-valued parameters of the right shapes.
inline NetParams zeros(const NetSpec& spec) {
  validate(spec);
  NetParams p;
  p.spec = spec;
  const auto w = spec.widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    p.weights.push_back(Matrix::Zero(w[l + 1], w[l]));
    p.biases.push_back(Vector::Zero(w[l + 1]));
  }
  return p;
}

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline NetParams init_params(const NetSpec& spec, std::uint64_t seed) {
  NetParams p = zeros(spec);
  Rng rng(derive_seed(seed, stream::kInit));
  for (auto& W : p.weights) {
    const double a = 1.0 / std::sqrt(static_cast<double>(W.cols()));
    // Row-major fill order keeps the draw sequence independent of storage order.
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = a * (2.0 * uniform01(rng) - 1.0);
    }
  }
  return p;
}

/// Activations of every layer for a batch of column inputs.
struct Trace {
  std::vector<Matrix> act;  // act[0] = input, act[L] = output
};

inline Trace forward_trace(const NetParams& p, const Matrix& x) {
  if (x.rows() != p.spec.input_dim) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                                std::to_string(p.spec.input_dim));
  }
  Trace t;
  t.act.reserve(p.n_layers() + 1);
  t.act.push_back(x);
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    Matrix z = p.weights[l] * t.act.back();
    z.colwise() += p.biases[l];
    if (l + 1 < p.n_layers()) z = z.cwiseMax(0.0);
    t.act.push_back(std::move(z));
  }
  return t;
}

/// Batch forward: one column per sample.
inline Matrix forward(const NetParams& p, const Matrix& x) { return forward_trace(p, x).act.back(); }

inline Vector forward(const NetParams& p, const Vector& x) {
  if (x.size() != p.spec.input_dim) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.size()) + " entries, expected " +
                                std::to_string(p.spec.input_dim));
  }
  Matrix m = x;
  return forward(p, m).col(0);
}

/// Regression batch. With `action` set, sample j's loss reads output
/// coordinate action[j]; otherwise the network must have one output.
struct Batch {
  Matrix x;                  // input_dim x B
  std::vector<int> action;   // empty or size B
  std::vector<double> y;     // size B
};

struct Gradient {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  double loss = 0.0;
};

/// Mean squared error over the batch and its gradient with respect to every
/// parameter.
inline Gradient gradient(const NetParams& p, const Batch& b) {
  const auto B = static_cast<Eigen::Index>(b.y.size());
  if (B == 0) throw std::invalid_argument("gradient: empty batch");
  if (b.x.cols() != B) throw std::invalid_argument("gradient: batch x/y size mismatch");
  if (!b.action.empty() && static_cast<Eigen::Index>(b.action.size()) != B) {
    throw std::invalid_argument("gradient: batch action/y size mismatch");
  }
  if (b.action.empty() && p.spec.output_dim != 1) {
    throw std::invalid_argument("gradient: action indices required for multi-output nets");
  }
  const Trace t = forward_trace(p, b.x);
  const Matrix& out = t.act.back();
  Matrix delta = Matrix::Zero(out.rows(), B);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const int a = b.action.empty() ? 0 : b.action[static_cast<std::size_t>(j)];
    if (a < 0 || a >= out.rows()) throw std::invalid_argument("gradient: action index out of range");
    const double yj = b.y[static_cast<std::size_t>(j)];
    if (!std::isfinite(yj)) throw std::invalid_argument("gradient: non-finite target");
    const double err = out(a, j) - yj;
    loss += err * err;
    delta(a, j) = 2.0 * err / static_cast<double>(B);
  }
  Gradient g;
  g.loss = loss / static_cast<double>(B);
  const std::size_t L = p.n_layers();
  g.weights.resize(L);
  g.biases.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l] = delta * t.act[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      Matrix back = p.weights[l].transpose() * delta;
      // ReLU derivative: pass-through where the layer's output was positive.
      delta = back.cwiseProduct((t.act[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

/// One plain gradient-descent step. Returns the pre-update loss; throws and
/// leaves `p` untouched if any gradient entry is non-finite.
inline double train_step(NetParams& p, const Batch& b, double learning_rate) {
  const Gradient g = gradient(p, b);
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    if (!g.weights[l].allFinite() || !g.biases[l].allFinite()) {
      throw std::runtime_error("train_step: non-finite gradient in layer " + std::to_string(l) +
                               " (loss " + std::to_string(g.loss) + ")");
    }
  }
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    p.weights[l] -= learning_rate * g.weights[l];
    p.biases[l] -= learning_rate * g.biases[l];
  }
  return g.loss;
}

/// target <- tau * main + (1 - tau) * target
inline void soft_update(NetParams& target, const NetParams& main, double tau) {
  if (!(target.spec == main.spec)) throw std::invalid_argument("soft_update: spec mismatch");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_update: tau outside [0, 1]");
  for (std::size_t l = 0; l < target.n_layers(); ++l) {
    target.weights[l] = tau * main.weights[l] + (1.0 - tau) * target.weights[l];
    target.biases[l] = tau * main.biases[l] + (1.0 - tau) * target.biases[l];
  }
}

/// All parameters in layer order (weights row-major, then biases).
inline std::vector<double> flatten(const NetParams& p) {
  std::vector<double> out;
  out.reserve(p.n_params());
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    const auto& W = p.weights[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) out.push_back(W(r, c));
    }
    for (Eigen::Index r = 0; r < p.biases[l].size(); ++r) out.push_back(p.biases[l](r));
  }
  return out;
}

inline void unflatten(NetParams& p, const std::vector<double>& flat) {
  if (flat.size() != p.n_params()) throw std::invalid_argument("unflatten: size mismatch");
  std::size_t k = 0;
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    auto& W = p.weights[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = flat[k++];
    }
    for (Eigen::Index r = 0; r < p.biases[l].size(); ++r) p.biases[l](r) = flat[k++];
  }
}

inline std::vector<double> flatten(const Gradient& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    for (Eigen::Index r = 0; r < g.weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < g.weights[l].cols(); ++c) out.push_back(g.weights[l](r, c));
    }
    for (Eigen::Index r = 0; r < g.biases[l].size(); ++r) out.push_back(g.biases[l](r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter file (text, version 1)
//
//   aanet-params 1
//   spec <input_dim> <n_hidden> <h_1> ... <h_n> <output_dim>
//   layer <index> <rows> <cols>
//   <cols values>                        (rows lines: one weight row each)
//   bias <rows values>
//   ...                                  (one layer block per layer)
//   end
//
// Values use shortest round-trip decimal, so load(save(p)) is bit-exact.
// ---------------------------------------------------------------------------

inline constexpr int kParamsVersion = 1;
inline constexpr const char* kParamsMagic = "aanet-params";

inline void write_params(std::ostream& out, const NetParams& p) {
  out << kParamsMagic << ' ' << kParamsVersion << '\n';
  out << "spec " << p.spec.input_dim << ' ' << p.spec.hidden.size();
  for (int h : p.spec.hidden) out << ' ' << h;
  out << ' ' << p.spec.output_dim << '\n';
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    const auto& W = p.weights[l];
    out << "layer " << l << ' ' << W.rows() << ' ' << W.cols() << '\n';
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) out << (c ? " " : "") << format_double(W(r, c));
      out << '\n';
    }
    out << "bias";
    for (Eigen::Index r = 0; r < p.biases[l].size(); ++r) out << ' ' << format_double(p.biases[l](r));
    out << '\n';
  }
  out << "end\n";
}

/// Reads a parameter file. When `expected` is given, a file for any other
/// architecture raises ShapeError.
inline NetParams read_params(std::istream& in, const std::optional<NetSpec>& expected = std::nullopt) {
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw SchemaError(std::string("params truncated: expected ") + what);
    return split_ws(line);
  };
  auto num = [](const std::string& tok) {
    double v = 0.0;
    if (!parse_double(tok, v)) throw SchemaError("params: bad number '" + tok + "'");
    return v;
  };
  auto integer = [](const std::string& tok) {
    int v = 0;
    if (!parse_int(tok, v)) throw SchemaError("params: bad integer '" + tok + "'");
    return v;
  };
  auto head = next("header");
  if (head.size() != 2 || head[0] != kParamsMagic) throw SchemaError("not an aanet params file");
  if (integer(head[1]) != kParamsVersion) throw VersionError("params version " + head[1] + " unsupported");

  auto st = next("spec");
  if (st.size() < 4 || st[0] != "spec") throw SchemaError("params: bad spec line");
  NetSpec spec;
  spec.input_dim = integer(st[1]);
  const int n_hidden = integer(st[2]);
  if (n_hidden < 0 || st.size() != static_cast<std::size_t>(n_hidden) + 4) throw SchemaError("params: bad spec line");
  spec.hidden.clear();
  for (int h = 0; h < n_hidden; ++h) spec.hidden.push_back(integer(st[3 + static_cast<std::size_t>(h)]));
  spec.output_dim = integer(st.back());
  try {
    validate(spec);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("params: ") + e.what());
  }
  if (expected && !(*expected == spec)) throw ShapeError("params: file architecture does not match expected spec");

  NetParams p = zeros(spec);
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    auto& W = p.weights[l];
    auto lh = next("layer");
    if (lh.size() != 4 || lh[0] != "layer" || integer(lh[1]) != static_cast<int>(l) || integer(lh[2]) != W.rows() ||
        integer(lh[3]) != W.cols()) {
      throw SchemaError("params: bad layer header for layer " + std::to_string(l));
    }
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      auto row = next("weight row");
      if (static_cast<Eigen::Index>(row.size()) != W.cols()) throw SchemaError("params: weight row length");
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = num(row[static_cast<std::size_t>(c)]);
    }
    auto bias = next("bias");
    if (bias.empty() || bias[0] != "bias" || static_cast<Eigen::Index>(bias.size()) != p.biases[l].size() + 1) {
      throw SchemaError("params: bad bias line");
    }
    for (Eigen::Index r = 0; r < p.biases[l].size(); ++r) p.biases[l](r) = num(bias[static_cast<std::size_t>(r) + 1]);
  }
  auto tail = next("end");
  if (tail.size() != 1 || tail[0] != "end") throw SchemaError("params: missing end marker");
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    if (!p.weights[l].allFinite() || !p.biases[l].allFinite()) throw SchemaError("params: non-finite value");
  }
  return p;
}

inline void save_params(const NetParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_params(out, p);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline NetParams load_params(const std::string& path, const std::optional<NetSpec>& expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return read_params(in, expected);
}

}  // namespace aanet::nn
