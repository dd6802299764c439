#pragma once

// Small differentiable building blocks for the confounding-bridge networks.
//
// All parameters of a BridgeNet live in one flat vector; layers are views
// into it at fixed offsets. The compute graph is static (PNA stack, then two
// MLP heads), so reverse mode is written out layer by layer instead of
// recording a general tape.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "netdid/graph.hpp"
#include "netdid/types.hpp"

namespace netdid {

// Affine map y = x W^T + b over a batch of rows. Parameters are stored at
// `offset` as W (out x in, row-major) followed by b (out).
struct DenseLayer {
  int in = 0;
  int out = 0;
  std::size_t offset = 0;

  std::size_t param_count() const { return static_cast<std::size_t>(in + 1) * static_cast<std::size_t>(out); }

  Eigen::Map<const RowMatrix> weights(const Vector& params) const {
    return {params.data() + offset, out, in};
  }
  Eigen::Map<const Vector> bias(const Vector& params) const {
    return {params.data() + offset + static_cast<std::size_t>(in) * out, out};
  }

  Matrix forward(const Vector& params, const Matrix& input) const;

  // Accumulates dW and db into grad; returns d input when requested.
  Matrix backward(const Vector& params, const Matrix& input, const Matrix& d_out, Vector& grad,
                  bool want_input_grad) const;
};

struct MlpTape {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
};

// Rectifier on hidden layers, identity on the output layer.
class Mlp {
 public:
  Mlp() = default;
  // layer_sizes includes the input width first and the output width last.
  Mlp(std::vector<int> layer_sizes, std::size_t offset);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t param_count() const;
  int output_dim() const { return sizes_.back(); }

  Matrix forward(const Vector& params, const Matrix& input, MlpTape* tape = nullptr,
                 const std::string& name = "mlp") const;
  Matrix backward(const Vector& params, const MlpTape& tape, const Matrix& d_out, Vector& grad) const;

 private:
  std::vector<int> sizes_;
  std::vector<DenseLayer> layers_;
};

// Per-column z-score (population sd); numerically constant columns are only centered.
Matrix standardize_columns(const Matrix& x);

// Mean degree; 1 when every unit is isolated.
double mean_degree_norm(const NetworkGraph& g);

// Mean of log(1 + degree) over all units; 1 when every unit is isolated.
double log_degree_norm(const NetworkGraph& g);

// Principal-neighborhood-aggregation layer with mean and sum aggregators and
// identity / amplification / attenuation degree scalers. The aggregated row
//   [self | mean | mean*amp | mean*att | sum | sum*amp | sum*att]
// (7 * in_dim wide) goes through one dense map. Scalers are 1 at degree 0.
// The sum aggregator is divided by the graph's mean degree so that its
// blocks stay O(1) on dense networks.
class PnaLayer {
 public:
  static constexpr int kBlocks = 7;

  PnaLayer() = default;
  PnaLayer(int in_dim, int out_dim, double log_deg_norm, std::size_t offset);

  int in_dim() const { return dense_.in / kBlocks; }
  int out_dim() const { return dense_.out; }
  double log_deg_norm() const { return log_deg_norm_; }
  const DenseLayer& dense() const { return dense_; }

  double amplification(std::size_t degree) const;
  double attenuation(std::size_t degree) const;

  Matrix aggregate(const Matrix& h, const NetworkGraph& g) const;
  Matrix aggregate_backward(const Matrix& d_agg, const NetworkGraph& g) const;

  // dense(aggregate(h)); no activation.
  Matrix forward(const Vector& params, const Matrix& h, const NetworkGraph& g) const;

 private:
  DenseLayer dense_;
  double log_deg_norm_ = 1.0;
};

struct BridgeConfig {
  int input_dim = 10;
  int embed_dim = 16;
  int depth = 1;                     // PNA layers; 0 means f(i, X, A) = X_i
  std::vector<int> head_hidden{16};  // empty means affine heads
  bool positive_q = false;           // softplus on the q head output

  bool operator==(const BridgeConfig&) const = default;
};

// What the network reads for one dataset. The first PNA aggregation depends
// only on X and the graph, so it is computed once here and reused each epoch.

struct BridgeInputs {
  BridgeInputs(const NetworkGraph& g, Matrix x, Vector w, Vector z);

  const NetworkGraph* graph;
  Matrix x;
  Vector w;
  Vector z;
  double log_deg_norm;
  Matrix first_aggregate;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
};

struct BridgeOutputs {
  Vector h;
  Vector q;
};

enum class BridgeHead { kH, kQ, kBoth };

// Loss over network outputs; fills d_out with dLoss/dh and dLoss/dq (only the
// requested heads are populated in `out`).
using LossFn = std::function<double(const BridgeOutputs& out, BridgeOutputs& d_out)>;

struct LossGradient {
  double value = 0.0;
  Vector grad;
};

// h(i) = head_h([W_i, f(i, X, A)]),  q(i) = head_q([Z_i, f(i, X, A)]).
class BridgeNet {
 public:
  BridgeNet(BridgeConfig cfg, double log_deg_norm);

  const BridgeConfig& config() const { return cfg_; }
  double log_deg_norm() const { return log_deg_norm_; }
  std::size_t param_count() const { return static_cast<std::size_t>(params_.size()); }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  const std::vector<PnaLayer>& pna_layers() const { return pna_; }
  const Mlp& head_h() const { return head_h_; }
  const Mlp& head_q() const { return head_q_; }

  // Glorot-uniform weights, zero biases.
  void init_params(std::uint64_t seed);

  Matrix embed(const BridgeInputs& in) const;
  BridgeOutputs forward(const BridgeInputs& in, BridgeHead heads = BridgeHead::kBoth) const;

  // Exact reverse-mode gradient of loss(forward(in)) w.r.t. params().
  LossGradient gradient(const BridgeInputs& in, const LossFn& loss, BridgeHead heads = BridgeHead::kBoth) const;

 private:
  struct Tape;
  BridgeOutputs run(const BridgeInputs& in, BridgeHead heads, Tape* tape) const;

  BridgeConfig cfg_;
  double log_deg_norm_;
  std::vector<PnaLayer> pna_;
  Mlp head_h_;
  Mlp head_q_;
  Vector params_;
};

struct AdamOptions {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState(std::size_t size, AdamOptions opts = {});

  // One bias-corrected Adam update of params in place.
  void step(Vector& params, const Vector& grad);

  long step_count() const { return t_; }
  const AdamOptions& options() const { return opts_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }

 private:
  AdamOptions opts_;
  long t_ = 0;
  Vector m_;
  Vector v_;
};

// Flat parameter file: one line of JSON (architecture, seed, epochs,
// param_count), a newline, then param_count little-endian doubles.
struct ParamFileMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
};

void save_bridge(const std::string& path, const BridgeNet& net, const ParamFileMeta& meta);
BridgeNet load_bridge(const std::string& path, ParamFileMeta* meta = nullptr);

}  // namespace netdid
