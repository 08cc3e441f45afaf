#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "airslab/oracle.hpp"

namespace airslab::neural {

enum class ModelKind { lps, se };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

struct Dims {
  int d_model = 256;
  int heads = 4;
  int layers = 4;
  int mlp_hidden = 512;
  int head_hidden = 64;

  bool operator==(const Dims&) const = default;
};

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;  // row-major

  std::int64_t numel() const;
};

using MatrixRf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named float tensors plus the model metadata needed for inference. PLE
/// edges: one vector of d_model+1 edges per LPS feature, or a single vector
/// of d_model/16+1 edges shared by every SE quantile scalar.
class WeightStore {
 public:
  ModelKind kind = ModelKind::lps;
  Dims dims;
  std::vector<std::vector<double>> ple_edges;
  std::map<std::string, Tensor> tensors;

  /// Tensor `name`, checked against `shape`. Throws naming the tensor.
  const Tensor& get(const std::string& name, std::vector<std::int64_t> shape) const;
  Eigen::Map<const MatrixRf> matrix(const std::string& name, std::int64_t rows, std::int64_t cols) const;
  Eigen::Map<const Eigen::VectorXf> vector(const std::string& name, std::int64_t n) const;

  /// Throws unless every required tensor is present with the exact shape,
  /// no extra tensor exists, and the PLE edges are well formed.
  void validate() const;

  /// All-zero weights with unit LayerNorm scales.
  static WeightStore zeros(ModelKind kind, const Dims& dims, std::vector<std::vector<double>> edges);
  /// N(0, scale^2) weights, unit LayerNorm scales; deterministic per seed.
  static WeightStore random(ModelKind kind, const Dims& dims, std::vector<std::vector<double>> edges,
                            std::uint64_t seed, double scale = 0.05);
};

/// Required tensor names and shapes for a model kind.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> required_tensors(ModelKind kind,
                                                                                const Dims& dims);

/// Evenly spaced edges lo..hi, n_bins bins.
std::vector<double> linear_edges(double lo, double hi, int n_bins);
/// Default LPS edges spanning plausible ranges of each feature.
std::vector<std::vector<double>> default_lps_edges(int n_bins);
/// Default SE quantile edges over [-200, -40] dB.
std::vector<std::vector<double>> default_se_edges(int n_bins);

// NCKM container: "NCKM" | u32 version | u64 header length | JSON manifest |
// float32 tensor data, all little-endian.
inline constexpr std::uint32_t kNckmVersion = 1;
std::string serialize(const WeightStore& ws);
WeightStore deserialize(const std::string& bytes);
void save_weights(const WeightStore& ws, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);

/// Piecewise-linear encoding of x over edges b_0 < ... < b_T.
std::vector<float> ple_encode(double x, std::span<const double> edges);

/// Pre-LN Transformer encoder over N x d_model tokens.
MatrixRf encoder_forward(const MatrixRf& tokens, const WeightStore& ws);

struct LpsOutput {
  std::array<double, 48> quantiles{};  // direct 0-15, link 16-31, noise 32-47
  std::array<double, 48> mask_prob{};
};

LpsOutput lps_forward(std::span<const double> features, const WeightStore& ws);

double se_forward(const std::vector<oracle::QuantileCdf>& cdfs,
                  const std::vector<oracle::Category>& cats, const WeightStore& ws);

double smooth_l1(double e, double delta);

struct LpsLossParams {
  double delta = 0.5;
  double gamma = 0.2;
  double eta = 20.0;
};

struct LpsLoss {
  double smooth = 0.0;
  double slope = 0.0;
  double bce = 0.0;
  double total = 0.0;
};

LpsLoss lps_loss(const LpsOutput& pred, const oracle::LpsRecord& label, const LpsLossParams& p = {});
double se_loss(double pred, double label, double delta = 1.0);

}  // namespace airslab::neural
