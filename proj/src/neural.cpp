#include "airslab/neural.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>

#include "airslab/rng.hpp"

namespace airslab::neural {

using json = nlohmann::ordered_json;

namespace {

constexpr int kLpsTargets = 48;
constexpr int kLpsTokens = kLpsTargets + oracle::kLpsFeatures;
const char* const kLpsHeads[] = {"direct", "link", "noise", "mask"};

std::string shape_str(const std::vector<std::int64_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

void check_dims(ModelKind kind, const Dims& d) {
  if (d.d_model < 1 || d.heads < 1 || d.layers < 0 || d.mlp_hidden < 1 || d.head_hidden < 1)
    throw ValidationError("dimensions must be positive", "dims");
  if (d.d_model % d.heads != 0) throw ValidationError("d_model must be divisible by heads", "dims");
  if (kind == ModelKind::se && d.d_model % oracle::kQuantiles != 0)
    throw ValidationError("SE d_model must be divisible by 16", "dims");
}

void check_edges(ModelKind kind, const Dims& d, const std::vector<std::vector<double>>& edges) {
  const std::size_t want_count = kind == ModelKind::lps ? oracle::kLpsFeatures : 1;
  const std::size_t want_len =
      static_cast<std::size_t>(kind == ModelKind::lps ? d.d_model : d.d_model / oracle::kQuantiles) + 1;
  if (edges.size() != want_count) throw ValidationError("wrong number of PLE edge sets", "ple_edges");
  for (const auto& e : edges) {
    if (e.size() != want_len) throw ValidationError("wrong PLE edge count", "ple_edges");
    for (std::size_t t = 1; t < e.size(); ++t)
      if (!(e[t] > e[t - 1])) throw ValidationError("PLE edges must be strictly increasing", "ple_edges");
  }
}

void layer_norm(MatrixRf& x, const Eigen::Map<const Eigen::VectorXf>& g,
                const Eigen::Map<const Eigen::VectorXf>& b) {
  const auto d = static_cast<float>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const float mean = row.sum() / d;
    row.array() -= mean;
    const float var = row.squaredNorm() / d;
    row *= 1.0f / std::sqrt(var + 1e-5f);
    row = row.cwiseProduct(g.transpose()) + b.transpose();
  }
}

MatrixRf layer_norm_copy(const MatrixRf& x, const WeightStore& ws, const std::string& prefix) {
  MatrixRf y = x;
  const auto d = ws.dims.d_model;
  layer_norm(y, ws.vector(prefix + ".weight", d), ws.vector(prefix + ".bias", d));
  return y;
}

float gelu(float v) { return 0.5f * v * (1.0f + std::erf(v / std::sqrt(2.0f))); }

/// Dot product with a fixed accumulation order, so the result depends only
/// on the two operands and never on where a row sits in a matrix.
float dot(const float* a, const float* b, int n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  for (int j = 0; i < n; ++i, ++j) acc[j] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

/// Sum that is exactly invariant to the order of the terms.
float sorted_sum(std::vector<float>& terms) {
  std::sort(terms.begin(), terms.end());
  float s = 0.0f;
  for (float t : terms) s += t;
  return s;
}

MatrixRf linear(const MatrixRf& x, const WeightStore& ws, const std::string& prefix, int out, int in) {
  const auto w = ws.matrix(prefix + ".weight", out, in);
  const auto b = ws.vector(prefix + ".bias", out);
  if (x.cols() != in) throw ValidationError("input width mismatch for " + prefix);
  MatrixRf y(x.rows(), out);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (int o = 0; o < out; ++o) y(r, o) = dot(x.row(r).data(), w.row(o).data(), in) + b(o);
  return y;
}

/// Two-layer head: d -> hidden (GELU) -> 1.
float head(const Eigen::RowVectorXf& x, const WeightStore& ws, const std::string& prefix) {
  const int d = ws.dims.d_model, h = ws.dims.head_hidden;
  MatrixRf in = x;
  MatrixRf z = linear(in, ws, prefix + ".fc1", h, d).unaryExpr([](float v) { return gelu(v); });
  return linear(z, ws, prefix + ".fc2", 1, h)(0, 0);
}

MatrixRf attention(const MatrixRf& x, const WeightStore& ws, const std::string& p) {
  const int d = ws.dims.d_model, nh = ws.dims.heads, dh = d / nh;
  const MatrixRf qkv = linear(x, ws, p + ".in_proj", 3 * d, d);
  const Eigen::Index n = x.rows();
  MatrixRf out(n, d);
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  // Cross-token reductions use sorted sums so that permuting tokens permutes
  // the output rows exactly.
  std::vector<float> terms(static_cast<std::size_t>(n));
  std::vector<float> prob(static_cast<std::size_t>(n));
  for (int h = 0; h < nh; ++h) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const float* q = qkv.row(r).data() + h * dh;
      float mx = -std::numeric_limits<float>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        const float sc = dot(q, qkv.row(j).data() + d + h * dh, dh) * scale;
        prob[static_cast<std::size_t>(j)] = sc;
        mx = std::max(mx, sc);
      }
      for (auto& v : prob) v = std::exp(v - mx);
      terms = prob;
      const float z = sorted_sum(terms);
      for (auto& v : prob) v /= z;
      for (int c = 0; c < dh; ++c) {
        for (Eigen::Index j = 0; j < n; ++j)
          terms[static_cast<std::size_t>(j)] = prob[static_cast<std::size_t>(j)] * qkv(j, 2 * d + h * dh + c);
        out(r, h * dh + c) = sorted_sum(terms);
      }
    }
  }
  return linear(out, ws, p + ".out_proj", d, d);
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_le(const std::string& s, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

}  // namespace

std::string to_string(ModelKind k) { return k == ModelKind::lps ? "lps" : "se"; }

ModelKind parse_model_kind(const std::string& s) {
  if (s == "lps") return ModelKind::lps;
  if (s == "se") return ModelKind::se;
  throw ValidationError("unknown model kind '" + s + "'", "kind");
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (auto v : shape) n *= v;
  return n;
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> required_tensors(ModelKind kind,
                                                                                const Dims& dims) {
  const std::int64_t d = dims.d_model, h = dims.mlp_hidden, hh = dims.head_hidden;
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  for (int l = 0; l < dims.layers; ++l) {
    const std::string p = "encoder.layers." + std::to_string(l) + ".";
    out.push_back({p + "ln1.weight", {d}});
    out.push_back({p + "ln1.bias", {d}});
    out.push_back({p + "attn.in_proj.weight", {3 * d, d}});
    out.push_back({p + "attn.in_proj.bias", {3 * d}});
    out.push_back({p + "attn.out_proj.weight", {d, d}});
    out.push_back({p + "attn.out_proj.bias", {d}});
    out.push_back({p + "ln2.weight", {d}});
    out.push_back({p + "ln2.bias", {d}});
    out.push_back({p + "mlp.fc1.weight", {h, d}});
    out.push_back({p + "mlp.fc1.bias", {h}});
    out.push_back({p + "mlp.fc2.weight", {d, h}});
    out.push_back({p + "mlp.fc2.bias", {d}});
  }
  out.push_back({"encoder.final_ln.weight", {d}});
  out.push_back({"encoder.final_ln.bias", {d}});
  auto add_head = [&](const std::string& p) {
    out.push_back({p + ".fc1.weight", {hh, d}});
    out.push_back({p + ".fc1.bias", {hh}});
    out.push_back({p + ".fc2.weight", {1, hh}});
    out.push_back({p + ".fc2.bias", {1}});
  };
  if (kind == ModelKind::lps) {
    out.push_back({"lps.target_tokens", {kLpsTargets, d}});
    out.push_back({"lps.pos_embed", {kLpsTokens, d}});
    for (const char* name : kLpsHeads) add_head(std::string("lps.head_") + name);
  } else {
    out.push_back({"se.category_embed", {4, d}});
    out.push_back({"se.target_token", {d}});
    out.push_back({"se.target_pos", {d}});
    add_head("se.head");
  }
  return out;
}

const Tensor& WeightStore::get(const std::string& name, std::vector<std::int64_t> shape) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw ValidationError("missing tensor " + name, name);
  if (it->second.shape != shape)
    throw ValidationError("shape mismatch for tensor " + name + ": expected " + shape_str(shape) +
                              ", got " + shape_str(it->second.shape),
                          name);
  return it->second;
}

Eigen::Map<const MatrixRf> WeightStore::matrix(const std::string& name, std::int64_t rows,
                                               std::int64_t cols) const {
  const auto& t = get(name, {rows, cols});
  return {t.data.data(), rows, cols};
}

Eigen::Map<const Eigen::VectorXf> WeightStore::vector(const std::string& name, std::int64_t n) const {
  const auto& t = get(name, {n});
  return {t.data.data(), n};
}

void WeightStore::validate() const {
  check_dims(kind, dims);
  check_edges(kind, dims, ple_edges);
  const auto req = required_tensors(kind, dims);
  for (const auto& [name, shape] : req) {
    const auto& t = get(name, shape);
    if (static_cast<std::int64_t>(t.data.size()) != t.numel())
      throw ValidationError("tensor " + name + " has the wrong element count", name);
  }
  if (tensors.size() != req.size()) {
    for (const auto& [name, t] : tensors) {
      bool known = false;
      for (const auto& r : req) known = known || r.first == name;
      if (!known) throw ValidationError("unexpected tensor " + name, name);
    }
  }
}

namespace {

WeightStore make_store(ModelKind kind, const Dims& dims, std::vector<std::vector<double>> edges,
                       const std::function<float()>& draw) {
  check_dims(kind, dims);
  check_edges(kind, dims, edges);
  WeightStore ws;
  ws.kind = kind;
  ws.dims = dims;
  ws.ple_edges = std::move(edges);
  for (const auto& [name, shape] : required_tensors(kind, dims)) {
    Tensor t;
    t.shape = shape;
    t.data.resize(static_cast<std::size_t>(t.numel()));
    const bool ln_scale = name.find("ln") != std::string::npos && name.ends_with(".weight");
    for (float& v : t.data) v = ln_scale ? 1.0f : draw();
    ws.tensors.emplace(name, std::move(t));
  }
  return ws;
}

}  // namespace

WeightStore WeightStore::zeros(ModelKind kind, const Dims& dims, std::vector<std::vector<double>> edges) {
  return make_store(kind, dims, std::move(edges), [] { return 0.0f; });
}

WeightStore WeightStore::random(ModelKind kind, const Dims& dims, std::vector<std::vector<double>> edges,
                                std::uint64_t seed, double scale) {
  Rng rng(seed);
  return make_store(kind, dims, std::move(edges),
                    [&] { return static_cast<float>(scale * rng.normal()); });
}

std::vector<double> linear_edges(double lo, double hi, int n_bins) {
  if (n_bins < 1 || !(hi > lo)) throw ValidationError("edges need n_bins >= 1 and hi > lo");
  std::vector<double> e(static_cast<std::size_t>(n_bins) + 1);
  for (int t = 0; t <= n_bins; ++t) e[static_cast<std::size_t>(t)] = lo + (hi - lo) * t / n_bins;
  return e;
}

std::vector<std::vector<double>> default_lps_edges(int n_bins) {
  // x_u, y_u, P_BS, x_i, y_i, H_i, G, omega x/y/z, W_Y, W_Z, P_A, sigma_v^2, b
  const double lo[] = {-400, -400, -10, -400, -400, 0, 0, -kPi, -kPi, -kPi, 0, 0, -10, -120, 0};
  const double hi[] = {400, 400, 40, 400, 400, 60, 20, kPi, kPi, kPi, 32, 32, 40, -40, 1};
  std::vector<std::vector<double>> out;
  for (int j = 0; j < oracle::kLpsFeatures; ++j) out.push_back(linear_edges(lo[j], hi[j], n_bins));
  return out;
}

std::vector<std::vector<double>> default_se_edges(int n_bins) { return {linear_edges(-200, -40, n_bins)}; }

std::string serialize(const WeightStore& ws) {
  ws.validate();
  json m;
  m["kind"] = to_string(ws.kind);
  m["dims"] = {{"d_model", ws.dims.d_model},
               {"heads", ws.dims.heads},
               {"layers", ws.dims.layers},
               {"mlp_hidden", ws.dims.mlp_hidden},
               {"head_hidden", ws.dims.head_hidden}};
  m["ple_edges"] = ws.ple_edges;
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ws.tensors) {
    table.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.data.size()) * 4;
  }
  m["tensors"] = std::move(table);
  const std::string header = m.dump();

  std::string out = "NCKM";
  put_u32(out, kNckmVersion);
  put_u64(out, header.size());
  out += header;
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : ws.tensors)
    for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

WeightStore deserialize(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "NCKM") != 0) throw ValidationError("bad magic");
  if (bytes.size() < 16) throw ValidationError("truncated header");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kNckmVersion)
    throw ValidationError("unsupported NCKM version " + std::to_string(version));
  const std::uint64_t hlen = get_le(bytes, 8, 8);
  if (hlen > bytes.size() - 16) throw ValidationError("truncated header");
  const std::size_t data0 = 16 + static_cast<std::size_t>(hlen);
  WeightStore ws;
  try {
    const json m = json::parse(bytes.substr(16, static_cast<std::size_t>(hlen)));
    ws.kind = parse_model_kind(m.at("kind").get<std::string>());
    const auto& d = m.at("dims");
    ws.dims = {d.at("d_model").get<int>(), d.at("heads").get<int>(), d.at("layers").get<int>(),
               d.at("mlp_hidden").get<int>(), d.at("head_hidden").get<int>()};
    ws.ple_edges = m.at("ple_edges").get<std::vector<std::vector<double>>>();
    for (const auto& e : m.at("tensors")) {
      Tensor t;
      const auto name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto off = e.at("offset").get<std::uint64_t>();
      const std::int64_t n = t.numel();
      if (n < 0) throw ValidationError("negative shape", name);
      const std::uint64_t nbytes = static_cast<std::uint64_t>(n) * 4;
      if (off > bytes.size() - data0 || nbytes > bytes.size() - data0 - off)
        throw ValidationError("truncated tensor " + name, name);
      t.data.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i)
        t.data[static_cast<std::size_t>(i)] = std::bit_cast<float>(
            static_cast<std::uint32_t>(get_le(bytes, data0 + off + static_cast<std::size_t>(4 * i), 4)));
      if (!ws.tensors.emplace(name, std::move(t)).second)
        throw ValidationError("duplicate tensor " + name, name);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed NCKM manifest: ") + e.what());
  }
  ws.validate();
  return ws;
}

void save_weights(const WeightStore& ws, const std::filesystem::path& path) {
  const std::string bytes = serialize(ws);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

WeightStore load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

std::vector<float> ple_encode(double x, std::span<const double> edges) {
  if (edges.size() < 2) throw ValidationError("PLE needs at least two edges");
  for (std::size_t t = 1; t < edges.size(); ++t)
    if (!(edges[t] > edges[t - 1])) throw ValidationError("PLE edges must be strictly increasing");
  std::vector<float> out(edges.size() - 1);
  for (std::size_t t = 1; t < edges.size(); ++t)
    out[t - 1] = static_cast<float>(std::clamp((x - edges[t - 1]) / (edges[t] - edges[t - 1]), 0.0, 1.0));
  return out;
}

MatrixRf encoder_forward(const MatrixRf& tokens, const WeightStore& ws) {
  const int d = ws.dims.d_model;
  if (tokens.rows() < 1) throw ValidationError("encoder needs at least one token");
  if (tokens.cols() != d) throw ValidationError("token width must equal d_model");
  MatrixRf x = tokens;
  for (int l = 0; l < ws.dims.layers; ++l) {
    const std::string p = "encoder.layers." + std::to_string(l) + ".";
    x += attention(layer_norm_copy(x, ws, p + "ln1"), ws, p + "attn");
    MatrixRf h = linear(layer_norm_copy(x, ws, p + "ln2"), ws, p + "mlp.fc1", ws.dims.mlp_hidden, d);
    h = h.unaryExpr([](float v) { return gelu(v); });
    x += linear(h, ws, p + "mlp.fc2", d, ws.dims.mlp_hidden);
  }
  return layer_norm_copy(x, ws, "encoder.final_ln");
}

LpsOutput lps_forward(std::span<const double> features, const WeightStore& ws) {
  if (ws.kind != ModelKind::lps) throw ValidationError("weights are not an LPS model");
  if (features.size() != oracle::kLpsFeatures) throw ValidationError("LPS input needs 15 features");
  const int d = ws.dims.d_model;
  MatrixRf tok(kLpsTokens, d);
  tok.topRows(kLpsTargets) = ws.matrix("lps.target_tokens", kLpsTargets, d);
  for (int j = 0; j < oracle::kLpsFeatures; ++j) {
    const auto e = ple_encode(features[static_cast<std::size_t>(j)], ws.ple_edges.at(static_cast<std::size_t>(j)));
    if (static_cast<int>(e.size()) != d) throw ValidationError("LPS PLE width must equal d_model");
    tok.row(kLpsTargets + j) = Eigen::Map<const Eigen::RowVectorXf>(e.data(), d);
  }
  tok += ws.matrix("lps.pos_embed", kLpsTokens, d);
  const MatrixRf y = encoder_forward(tok, ws);
  LpsOutput out;
  for (int t = 0; t < kLpsTargets; ++t) {
    const Eigen::RowVectorXf row = y.row(t);
    out.quantiles[static_cast<std::size_t>(t)] = head(row, ws, std::string("lps.head_") + kLpsHeads[t / 16]);
    const double z = head(row, ws, "lps.head_mask");
    out.mask_prob[static_cast<std::size_t>(t)] = 1.0 / (1.0 + std::exp(-z));
  }
  return out;
}

double se_forward(const std::vector<oracle::QuantileCdf>& cdfs, const std::vector<oracle::Category>& cats,
                  const WeightStore& ws) {
  if (ws.kind != ModelKind::se) throw ValidationError("weights are not an SE model");
  if (cdfs.size() != cats.size()) throw ValidationError("cdfs/cats length mismatch");
  oracle::validate_se_inputs(cats);
  const int d = ws.dims.d_model, t_q = d / oracle::kQuantiles;
  const auto& edges = ws.ple_edges.at(0);
  const auto n = static_cast<Eigen::Index>(cdfs.size());
  const auto cat_embed = ws.matrix("se.category_embed", 4, d);
  MatrixRf tok(n + 1, d);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& cdf = cdfs[static_cast<std::size_t>(c)];
    for (int k = 0; k < oracle::kQuantiles; ++k) {
      const auto e = ple_encode(cdf.q_db[static_cast<std::size_t>(k)], edges);
      if (static_cast<int>(e.size()) != t_q) throw ValidationError("SE PLE width must equal d_model / 16");
      for (int t = 0; t < t_q; ++t) tok(c, k * t_q + t) = e[static_cast<std::size_t>(t)];
    }
    tok.row(c) += cat_embed.row(static_cast<int>(cats[static_cast<std::size_t>(c)]) - 1);
  }
  tok.row(n) = (ws.vector("se.target_token", d) + ws.vector("se.target_pos", d)).transpose();
  const MatrixRf y = encoder_forward(tok, ws);
  return head(y.row(n), ws, "se.head");
}

double smooth_l1(double e, double delta) {
  const double a = std::abs(e);
  return a < delta ? 0.5 * e * e / delta : a - 0.5 * delta;
}

LpsLoss lps_loss(const LpsOutput& pred, const oracle::LpsRecord& label, const LpsLossParams& p) {
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw ValidationError("delta_LPS must lie in (0, 1)");
  const auto mask = label.mask48();
  const oracle::QuantileCdf* groups[] = {&label.cdf_direct, &label.cdf_link, &label.cdf_noise};
  LpsLoss l;
  int n_valid = 0, n_pairs = 0;
  for (int g = 0; g < 3; ++g) {
    for (int k = 0; k < oracle::kQuantiles; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const auto t = static_cast<std::size_t>(16 * g + k);
      if (!mask[t]) continue;
      l.smooth += smooth_l1(pred.quantiles[t] - groups[g]->q_db[kk], p.delta);
      ++n_valid;
      if (k + 1 < oracle::kQuantiles && mask[t + 1]) {
        const double dp = pred.quantiles[t + 1] - pred.quantiles[t];
        const double dl = groups[g]->q_db[kk + 1] - groups[g]->q_db[kk];
        l.slope += std::abs(dp - dl);
        ++n_pairs;
      }
    }
  }
  if (n_valid) l.smooth /= n_valid;
  if (n_pairs) l.slope /= n_pairs;
  for (std::size_t t = 0; t < 48; ++t) {
    const double q = std::clamp(pred.mask_prob[t], 1e-7, 1.0 - 1e-7);
    l.bce -= mask[t] ? std::log(q) : std::log(1.0 - q);
  }
  l.bce /= 48.0;
  l.total = l.smooth + p.gamma * l.slope + p.eta * l.bce;
  return l;
}

double se_loss(double pred, double label, double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw ValidationError("delta_SE must lie in (0, 1]");
  return smooth_l1(pred - label, delta);
}

}  // namespace airslab::neural
