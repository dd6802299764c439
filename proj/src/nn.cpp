#include "netdid/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "netdid/errors.hpp"
#include "netdid/rng.hpp"

namespace netdid {

namespace {

using json = nlohmann::ordered_json;

void require_finite(const Matrix& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite values in " + where);
}

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

Matrix relu_mask(const Matrix& d, const Matrix& pre) {
  return (pre.array() > 0.0).select(d, 0.0);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix concat_columns(const Vector& first, const Matrix& rest) {
  Matrix out(rest.rows(), rest.cols() + 1);
  out.col(0) = first;
  out.rightCols(rest.cols()) = rest;
  return out;
}

Matrix pna_aggregate(const Matrix& h, const NetworkGraph& g, double norm) {
  const auto n = h.rows();
  const auto d = h.cols();
  if (n != static_cast<Eigen::Index>(g.size())) throw ShapeError("PNA input rows do not match graph size");
  const RowMatrix hr = h;
  RowMatrix sums = RowMatrix::Zero(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto acc = sums.row(i);
    for (std::uint32_t j : g.neighbors(static_cast<std::size_t>(i))) acc += hr.row(j);
  }
  const double sum_scale = 1.0 / mean_degree_norm(g);
  Matrix agg(n, PnaLayer::kBlocks * d);
  agg.leftCols(d) = h;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto deg = g.degree(static_cast<std::size_t>(i));
    double amp = 1.0, att = 1.0, inv_deg = 0.0;
    if (deg > 0) {
      const double ld = std::log1p(static_cast<double>(deg));
      amp = ld / norm;
      att = norm / ld;
      inv_deg = 1.0 / static_cast<double>(deg);
    }
    for (Eigen::Index k = 0; k < d; ++k) {
      const double m = sums(i, k) * inv_deg;
      const double s = sums(i, k) * sum_scale;
      agg(i, 1 * d + k) = m;
      agg(i, 2 * d + k) = m * amp;
      agg(i, 3 * d + k) = m * att;
      agg(i, 4 * d + k) = s;
      agg(i, 5 * d + k) = s * amp;
      agg(i, 6 * d + k) = s * att;
    }
  }
  return agg;
}

json config_to_json(const BridgeConfig& cfg) {
  return json{{"input_dim", cfg.input_dim},
              {"embed_dim", cfg.embed_dim},
              {"depth", cfg.depth},
              {"head_hidden", cfg.head_hidden},
              {"positive_q", cfg.positive_q}};
}

BridgeConfig config_from_json(const json& j) {
  BridgeConfig cfg;
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.depth = j.at("depth").get<int>();
  cfg.head_hidden = j.at("head_hidden").get<std::vector<int>>();
  cfg.positive_q = j.at("positive_q").get<bool>();
  return cfg;
}

}  // namespace

Matrix DenseLayer::forward(const Vector& params, const Matrix& input) const {
  if (input.cols() != in) {
    throw ShapeError("dense layer expects " + std::to_string(in) + " inputs, got " + std::to_string(input.cols()));
  }
  Matrix pre = input * weights(params).transpose();
  pre.rowwise() += bias(params).transpose();
  return pre;
}

Matrix DenseLayer::backward(const Vector& params, const Matrix& input, const Matrix& d_out, Vector& grad,
                            bool want_input_grad) const {
  Eigen::Map<RowMatrix> dw(grad.data() + offset, out, in);
  Eigen::Map<Vector> db(grad.data() + offset + static_cast<std::size_t>(in) * out, out);
  dw.noalias() += d_out.transpose() * input;
  db += d_out.colwise().sum().transpose();
  if (!want_input_grad) return {};
  return d_out * weights(params);
}

Mlp::Mlp(std::vector<int> layer_sizes, std::size_t offset) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ConfigError("an MLP needs at least an input and an output width");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] < 1 || sizes_[l + 1] < 1) throw ConfigError("MLP widths must be positive");
    layers_.push_back(DenseLayer{sizes_[l], sizes_[l + 1], offset});
    offset += layers_.back().param_count();
  }
}

std::size_t Mlp::param_count() const {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l.param_count();
  return total;
}

Matrix Mlp::forward(const Vector& params, const Matrix& input, MlpTape* tape, const std::string& name) const {
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Matrix x = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix pre = layers_[l].forward(params, x);
    require_finite(pre, name + "[" + std::to_string(l) + "]");
    const bool last = l + 1 == layers_.size();
    Matrix next = last ? pre : relu(pre);
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->pre.push_back(std::move(pre));
    }
    x = std::move(next);
  }
  return x;
}

Matrix Mlp::backward(const Vector& params, const MlpTape& tape, const Matrix& d_out, Vector& grad) const {
  Matrix d = d_out;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 != layers_.size()) d = relu_mask(d, tape.pre[l]);
    d = layers_[l].backward(params, tape.inputs[l], d, grad, true);
  }
  return d;
}

Matrix standardize_columns(const Matrix& x) {
  Matrix out = x;
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    out.col(c).array() -= mean;
    const double sd = std::sqrt(out.col(c).squaredNorm() / n);
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) out.col(c) /= sd;
  }
  return out;
}

double mean_degree_norm(const NetworkGraph& g) {
  const double mean = 2.0 * static_cast<double>(g.edge_count()) / static_cast<double>(std::max<std::size_t>(g.size(), 1));
  return mean > 0.0 ? mean : 1.0;
}

double log_degree_norm(const NetworkGraph& g) {
  if (g.size() == 0) return 1.0;
  double total = 0.0;
  for (auto deg : g.degrees()) total += std::log1p(static_cast<double>(deg));
  const double norm = total / static_cast<double>(g.size());
  return norm > 0.0 ? norm : 1.0;
}

PnaLayer::PnaLayer(int in_dim, int out_dim, double log_deg_norm, std::size_t offset)
    : dense_{kBlocks * in_dim, out_dim, offset}, log_deg_norm_(log_deg_norm) {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("PNA layer widths must be positive");
  if (!(log_deg_norm > 0.0)) throw ConfigError("PNA degree normalizer must be positive");
}

double PnaLayer::amplification(std::size_t degree) const {
  return degree == 0 ? 1.0 : std::log1p(static_cast<double>(degree)) / log_deg_norm_;
}

double PnaLayer::attenuation(std::size_t degree) const {
  return degree == 0 ? 1.0 : log_deg_norm_ / std::log1p(static_cast<double>(degree));
}

Matrix PnaLayer::aggregate(const Matrix& h, const NetworkGraph& g) const {
  if (h.cols() != in_dim()) throw ShapeError("PNA layer input width mismatch");
  return pna_aggregate(h, g, log_deg_norm_);
}

Matrix PnaLayer::aggregate_backward(const Matrix& d_agg, const NetworkGraph& g) const {
  const auto n = d_agg.rows();
  const auto d = static_cast<Eigen::Index>(in_dim());
  // Per source unit i, the gradient every neighbor row receives.
  const double sum_scale = 1.0 / mean_degree_norm(g);
  RowMatrix push(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto deg = g.degree(static_cast<std::size_t>(i));
    const double amp = amplification(deg), att = attenuation(deg);
    const double inv_deg = deg == 0 ? 0.0 : 1.0 / static_cast<double>(deg);
    for (Eigen::Index k = 0; k < d; ++k) {
      const double d_mean = d_agg(i, d + k) + amp * d_agg(i, 2 * d + k) + att * d_agg(i, 3 * d + k);
      const double d_sum = d_agg(i, 4 * d + k) + amp * d_agg(i, 5 * d + k) + att * d_agg(i, 6 * d + k);
      push(i, k) = d_mean * inv_deg + d_sum * sum_scale;
    }
  }
  RowMatrix dh = d_agg.leftCols(d);
  for (Eigen::Index j = 0; j < n; ++j) {
    auto acc = dh.row(j);
    for (std::uint32_t i : g.neighbors(static_cast<std::size_t>(j))) acc += push.row(i);
  }
  return dh;
}

Matrix PnaLayer::forward(const Vector& params, const Matrix& h, const NetworkGraph& g) const {
  return dense_.forward(params, aggregate(h, g));
}

BridgeInputs::BridgeInputs(const NetworkGraph& g, Matrix x_in, Vector w_in, Vector z_in)
    : graph(&g), x(std::move(x_in)), w(std::move(w_in)), z(std::move(z_in)), log_deg_norm(log_degree_norm(g)) {
  const auto n = static_cast<Eigen::Index>(g.size());
  if (x.rows() != n || w.size() != n || z.size() != n) throw ShapeError("bridge inputs do not match graph size");
  if (!x.allFinite() || !w.allFinite() || !z.allFinite()) throw NumericError("bridge inputs contain NaN or infinity");
  first_aggregate = pna_aggregate(x, g, log_deg_norm);
}

struct BridgeNet::Tape {
  std::vector<Matrix> owned_aggregates;
  std::vector<const Matrix*> aggregates;
  std::vector<Matrix> pre;
  Matrix embedding;
  MlpTape head_h;
  MlpTape head_q;
  Vector q_raw;
};

BridgeNet::BridgeNet(BridgeConfig cfg, double log_deg_norm) : cfg_(std::move(cfg)), log_deg_norm_(log_deg_norm) {
  if (cfg_.input_dim < 1) throw ConfigError("bridge input dimension must be positive");
  if (cfg_.depth < 0) throw ConfigError("PNA depth must be >= 0");
  if (cfg_.depth > 0 && cfg_.embed_dim < 1) throw ConfigError("embedding dimension must be positive");
  std::size_t offset = 0;
  int width = cfg_.input_dim;
  for (int l = 0; l < cfg_.depth; ++l) {
    pna_.emplace_back(width, cfg_.embed_dim, log_deg_norm_, offset);
    offset += pna_.back().dense().param_count();
    width = cfg_.embed_dim;
  }
  std::vector<int> sizes{1 + width};
  sizes.insert(sizes.end(), cfg_.head_hidden.begin(), cfg_.head_hidden.end());
  sizes.push_back(1);
  head_h_ = Mlp(sizes, offset);
  offset += head_h_.param_count();
  head_q_ = Mlp(sizes, offset);
  offset += head_q_.param_count();
  params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
}

void BridgeNet::init_params(std::uint64_t seed) {
  Rng rng(seed);
  params_.setZero();
  auto fill = [&](const DenseLayer& layer) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    const auto count = static_cast<std::size_t>(layer.in) * layer.out;
    for (std::size_t k = 0; k < count; ++k) params_[static_cast<Eigen::Index>(layer.offset + k)] = rng.uniform(-limit, limit);
  };
  for (const auto& l : pna_) fill(l.dense());
  for (const auto& l : head_h_.layers()) fill(l);
  for (const auto& l : head_q_.layers()) fill(l);
}

BridgeOutputs BridgeNet::run(const BridgeInputs& in, BridgeHead heads, Tape* tape) const {
  if (in.x.cols() != cfg_.input_dim) {
    throw ShapeError("bridge net expects " + std::to_string(cfg_.input_dim) + " covariates, got " +
                     std::to_string(in.x.cols()));
  }
  Matrix f;
  if (pna_.empty()) {
    f = in.x;
  } else {
    Matrix h;
    for (std::size_t l = 0; l < pna_.size(); ++l) {
      Matrix owned;
      const Matrix* agg = &in.first_aggregate;
      if (l > 0 || in.log_deg_norm != log_deg_norm_) {
        owned = pna_[l].aggregate(l == 0 ? in.x : h, *in.graph);
        agg = &owned;
      }
      Matrix pre = pna_[l].dense().forward(params_, *agg);
      require_finite(pre, "pna[" + std::to_string(l) + "]");
      h = relu(pre);
      if (tape) {
        if (agg == &owned) {
          tape->owned_aggregates.push_back(std::move(owned));
          agg = &tape->owned_aggregates.back();
        }
        tape->aggregates.push_back(agg);
        tape->pre.push_back(std::move(pre));
      }
    }
    f = std::move(h);
  }

  BridgeOutputs out;
  if (heads != BridgeHead::kQ) {
    out.h = head_h_.forward(params_, concat_columns(in.w, f), tape ? &tape->head_h : nullptr, "head_h").col(0);
  }
  if (heads != BridgeHead::kH) {
    Vector raw = head_q_.forward(params_, concat_columns(in.z, f), tape ? &tape->head_q : nullptr, "head_q").col(0);
    if (cfg_.positive_q) {
      out.q = raw.unaryExpr([](double v) { return softplus(v); });
    } else {
      out.q = raw;
    }
    if (tape) tape->q_raw = std::move(raw);
  }
  if (tape) tape->embedding = std::move(f);
  return out;
}

Matrix BridgeNet::embed(const BridgeInputs& in) const {
  Tape tape;
  tape.owned_aggregates.reserve(pna_.size());
  run(in, BridgeHead::kH, &tape);
  return tape.embedding;
}

BridgeOutputs BridgeNet::forward(const BridgeInputs& in, BridgeHead heads) const { return run(in, heads, nullptr); }

LossGradient BridgeNet::gradient(const BridgeInputs& in, const LossFn& loss, BridgeHead heads) const {
  Tape tape;
  tape.owned_aggregates.reserve(pna_.size());
  const BridgeOutputs out = run(in, heads, &tape);
  const auto n = static_cast<Eigen::Index>(in.size());

  BridgeOutputs d_out;
  if (heads != BridgeHead::kQ) d_out.h = Vector::Zero(n);
  if (heads != BridgeHead::kH) d_out.q = Vector::Zero(n);
  LossGradient result;
  result.value = loss(out, d_out);
  if (!std::isfinite(result.value)) throw NumericError("loss is non-finite");
  result.grad = Vector::Zero(params_.size());

  const Matrix& f = tape.embedding;
  Matrix d_f = Matrix::Zero(f.rows(), f.cols());
  if (heads != BridgeHead::kQ) {
    require_finite(d_out.h, "loss gradient w.r.t. h");
    const Matrix d_in = head_h_.backward(params_, tape.head_h, d_out.h, result.grad);
    require_finite(d_in, "head_h backward");
    d_f += d_in.rightCols(f.cols());
  }
  if (heads != BridgeHead::kH) {
    require_finite(d_out.q, "loss gradient w.r.t. q");
    Vector d_raw = d_out.q;
    if (cfg_.positive_q) {
      for (Eigen::Index i = 0; i < n; ++i) d_raw[i] *= sigmoid(tape.q_raw[i]);
    }
    const Matrix d_in = head_q_.backward(params_, tape.head_q, d_raw, result.grad);
    require_finite(d_in, "head_q backward");
    d_f += d_in.rightCols(f.cols());
  }
  Matrix d_h = std::move(d_f);
  for (std::size_t l = pna_.size(); l-- > 0;) {
    const Matrix d_pre = relu_mask(d_h, tape.pre[l]);
    const Matrix d_agg = pna_[l].dense().backward(params_, *tape.aggregates[l], d_pre, result.grad, l > 0);
    if (l > 0) {
      d_h = pna_[l].aggregate_backward(d_agg, *in.graph);
      require_finite(d_h, "pna[" + std::to_string(l) + "] backward");
    }
  }
  require_finite(result.grad, "parameter gradient");
  return result;
}

AdamState::AdamState(std::size_t size, AdamOptions opts)
    : opts_(opts), m_(Vector::Zero(static_cast<Eigen::Index>(size))), v_(Vector::Zero(static_cast<Eigen::Index>(size))) {
  if (!(opts_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

void AdamState::step(Vector& params, const Vector& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ShapeError("adam: parameter/gradient length does not match optimizer state");
  }
  ++t_;
  m_ = opts_.beta1 * m_ + (1.0 - opts_.beta1) * grad;
  v_ = opts_.beta2 * v_ + (1.0 - opts_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  params.array() -= opts_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + opts_.epsilon);
}

void save_bridge(const std::string& path, const BridgeNet& net, const ParamFileMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const json header{{"format", "netdid-bridge-params"},
                    {"architecture", config_to_json(net.config())},
                    {"log_deg_norm", net.log_deg_norm()},
                    {"seed", meta.seed},
                    {"epochs", meta.epochs},
                    {"param_count", net.param_count()},
                    {"byte_order", "little"}};
  out << header.dump() << '\n';
  const Vector& p = net.params();
  out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  if (!out) throw IoError("failed writing parameters to '" + path + "'");
}

BridgeNet load_bridge(const std::string& path, ParamFileMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw IoError("'" + path + "' has a malformed parameter header: " + e.what());
  }
  BridgeNet net(config_from_json(header.at("architecture")), header.at("log_deg_norm").get<double>());
  const auto count = header.at("param_count").get<std::size_t>();
  if (count != net.param_count()) throw IoError("'" + path + "': parameter count does not match architecture");
  in.read(reinterpret_cast<char*>(net.params().data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw IoError("'" + path + "' is truncated");
  if (meta) {
    meta->seed = header.at("seed").get<std::uint64_t>();
    meta->epochs = header.at("epochs").get<int>();
  }
  return net;
}

}  // namespace netdid
