#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mars/geometry/mesh.hpp"
#include "mars/geometry/occupancy.hpp"
#include "mars/geometry/sampling.hpp"
#include "mars/nn.hpp"
#include "mars/tensor.hpp"

namespace mars {

/// Coarse-to-fine schedule: LOD i (1-based) has points_per_lod[i-1] surface
/// samples and latents_per_lod[i-1] latent rows; the last entry is the padded
/// target length every decoder input is brought to.
struct LodSchedule {
  Index lods = 4;
  std::vector<Index> points_per_lod = {64, 256, 1024, 4096};
  std::vector<Index> latents_per_lod = {8, 32, 128, 512};
  Index feature_dim = 128;

  Index max_latents() const { return latents_per_lod.back(); }
  Index max_points() const { return points_per_lod.back(); }

  void validate() const {
    if (lods < 1) throw ConfigError("LodSchedule: need at least one LOD");
    if (static_cast<Index>(points_per_lod.size()) != lods ||
        static_cast<Index>(latents_per_lod.size()) != lods) {
      throw ConfigError("LodSchedule: per-LOD lists must have exactly one entry per LOD");
    }
    for (Index i = 0; i < lods; ++i) {
      if (points_per_lod[static_cast<std::size_t>(i)] <= 0 ||
          latents_per_lod[static_cast<std::size_t>(i)] <= 0) {
        throw ConfigError("LodSchedule: counts must be positive");
      }
      if (i > 0 && (points_per_lod[static_cast<std::size_t>(i)] <= points_per_lod[static_cast<std::size_t>(i - 1)] ||
                    latents_per_lod[static_cast<std::size_t>(i)] <= latents_per_lod[static_cast<std::size_t>(i - 1)])) {
        throw ConfigError("LodSchedule: counts must be strictly increasing");
      }
    }
    if (feature_dim <= 0) throw ConfigError("LodSchedule: feature_dim must be positive");
  }

  bool operator==(const LodSchedule&) const = default;
};

/// Discrete token indices for one LOD. The padded view appends the reserved
/// pad id (== codebook size) up to the final-LOD length.
struct LodTokenMap {
  Index lod = 0;               // 1-based
  std::vector<Index> indices;  // D_lod entries in [0, codebook_size)

  std::vector<Index> padded(Index target_len, Index pad_id) const {
    if (static_cast<Index>(indices.size()) > target_len) {
      throw ContractError("LodTokenMap::padded: map longer than the target length");
    }
    std::vector<Index> out = indices;
    out.resize(static_cast<std::size_t>(target_len), pad_id);
    return out;
  }
};

/// V x C quantization table trained by exponential moving averages; rows are
/// only moved when they win assignments, so unused codes stay put.
template <typename S>
class Codebook {
 public:
  Codebook() = default;
  Codebook(Index size, Index dim, Rng& rng) {
    codes_ = MatrixX<S>(size, dim);
    for (Index i = 0; i < codes_.size(); ++i) codes_.data()[i] = static_cast<S>(rng.normal());
    ema_counts_ = VectorX<S>::Zero(size);
    ema_sums_ = MatrixX<S>::Zero(size, dim);
    usage_ = std::vector<std::uint64_t>(static_cast<std::size_t>(size), 0);
    steps_since_use_ = std::vector<Index>(static_cast<std::size_t>(size), 0);
  }

  Index size() const { return codes_.rows(); }
  Index dim() const { return codes_.cols(); }
  Index pad_id() const { return size(); }
  const MatrixX<S>& codes() const { return codes_; }
  MatrixX<S>& mutable_codes() { return codes_; }
  const std::vector<std::uint64_t>& usage() const { return usage_; }
  std::uint64_t last_assigned() const { return last_assigned_; }

  /// Nearest code per row (L2, ties to the lowest index).
  std::vector<Index> nearest(const MatrixX<S>& rows) const {
    if (size() == 0) throw ContractError("Codebook: empty");
    const VectorX<S> code_sq = codes_.rowwise().squaredNorm();
    std::vector<Index> out(static_cast<std::size_t>(rows.rows()));
    MatrixX<S> cross = rows * codes_.transpose();  // [n x V]
    for (Index i = 0; i < rows.rows(); ++i) {
      const S row_sq = rows.row(i).squaredNorm();
      Index best = 0;
      S best_d = row_sq - 2 * cross(i, 0) + code_sq[0];
      for (Index v = 1; v < size(); ++v) {
        const S d = row_sq - 2 * cross(i, v) + code_sq[v];
        if (d < best_d) {
          best_d = d;
          best = v;
        }
      }
      out[static_cast<std::size_t>(i)] = best;
    }
    return out;
  }

  MatrixX<S> lookup(const std::vector<Index>& ids) const {
    MatrixX<S> out(static_cast<Index>(ids.size()), dim());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= size()) throw ContractError("Codebook::lookup: id out of range");
      out.row(static_cast<Index>(i)) = codes_.row(ids[i]);
    }
    return out;
  }

  /// EMA update from one batch of assigned rows. Codes that won no rows this
  /// step keep their current value exactly.
  void ema_update(const MatrixX<S>& rows, const std::vector<Index>& ids, S decay = S(0.99)) {
    VectorX<S> counts = VectorX<S>::Zero(size());
    MatrixX<S> sums = MatrixX<S>::Zero(size(), dim());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      counts[ids[i]] += S(1);
      sums.row(ids[i]) += rows.row(static_cast<Index>(i));
    }
    last_assigned_ = ids.size();
    for (Index v = 0; v < size(); ++v) {
      if (counts[v] > S(0)) {
        ema_counts_[v] = decay * ema_counts_[v] + (S(1) - decay) * counts[v];
        ema_sums_.row(v) = decay * ema_sums_.row(v) + (S(1) - decay) * sums.row(v);
        codes_.row(v) = ema_sums_.row(v) / ema_counts_[v];
        usage_[static_cast<std::size_t>(v)] += static_cast<std::uint64_t>(counts[v]);
        steps_since_use_[static_cast<std::size_t>(v)] = 0;
      } else {
        ++steps_since_use_[static_cast<std::size_t>(v)];
      }
    }
  }

  /// Re-seed codes unused for at least stale_steps from the given encoder
  /// rows. Returns the number of codes revived.
  Index revive_dead(const MatrixX<S>& donor_rows, Rng& rng, Index stale_steps = 200) {
    if (donor_rows.rows() == 0) return 0;
    Index revived = 0;
    for (Index v = 0; v < size(); ++v) {
      if (steps_since_use_[static_cast<std::size_t>(v)] < stale_steps) continue;
      const Index pick = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(donor_rows.rows())));
      codes_.row(v) = donor_rows.row(pick);
      for (Index c = 0; c < dim(); ++c) codes_(v, c) += static_cast<S>(rng.normal(0.0, 0.01));
      ema_counts_[v] = S(1);
      ema_sums_.row(v) = codes_.row(v);
      steps_since_use_[static_cast<std::size_t>(v)] = 0;
      ++revived;
    }
    return revived;
  }

  // serialization access
  const VectorX<S>& ema_counts() const { return ema_counts_; }
  const MatrixX<S>& ema_sums() const { return ema_sums_; }
  void restore(MatrixX<S> codes, VectorX<S> counts, MatrixX<S> sums) {
    codes_ = std::move(codes);
    ema_counts_ = std::move(counts);
    ema_sums_ = std::move(sums);
    usage_.assign(static_cast<std::size_t>(codes_.rows()), 0);
    steps_since_use_.assign(static_cast<std::size_t>(codes_.rows()), 0);
  }

 private:
  MatrixX<S> codes_;
  VectorX<S> ema_counts_;
  MatrixX<S> ema_sums_;
  std::vector<std::uint64_t> usage_;
  std::vector<Index> steps_since_use_;
  std::uint64_t last_assigned_ = 0;
};

/// Raw coordinates followed by sin/cos(2^j pi x) per band and axis;
/// width 3 + 6 * bands. Constant features, no gradient.
template <typename S>
Tensor<S> fourier_pe(const Points3& points, Index bands) {
  const Index n = points.rows();
  const Index width = 3 + 6 * bands;
  VectorX<S> data(n * width);
  for (Index i = 0; i < n; ++i) {
    S* row = data.data() + i * width;
    for (int a = 0; a < 3; ++a) row[a] = static_cast<S>(points(i, a));
    Index off = 3;
    for (Index j = 0; j < bands; ++j) {
      const double freq = std::pow(2.0, static_cast<double>(j)) * M_PI;
      for (int a = 0; a < 3; ++a) row[off + a] = static_cast<S>(std::sin(freq * points(i, a)));
      for (int a = 0; a < 3; ++a) row[off + 3 + a] = static_cast<S>(std::cos(freq * points(i, a)));
      off += 6;
    }
  }
  return Tensor<S>::from_flat({n, width}, std::move(data));
}

struct VqVaeConfig {
  LodSchedule schedule;
  Index codebook_size = 512;
  Index heads = 4;
  Index encoder_self_blocks = 4;
  Index decoder_self_blocks = 4;
  Index fourier_bands = 8;
  Index mlp_ratio = 2;
  std::vector<double> lod_weights;   // defaults to all-ones
  double commit_weight = 0.25;       // weight of the commitment terms

  void validate() const {
    schedule.validate();
    if (codebook_size < 1) throw ConfigError("VqVaeConfig: codebook_size must be positive");
    if (schedule.feature_dim % heads != 0) {
      throw ConfigError("VqVaeConfig: feature_dim must be divisible by heads");
    }
    if (!lod_weights.empty() && static_cast<Index>(lod_weights.size()) != schedule.lods) {
      throw ConfigError("VqVaeConfig: lod_weights must have one entry per LOD");
    }
  }
  std::vector<double> effective_weights() const {
    if (!lod_weights.empty()) return lod_weights;
    return std::vector<double>(static_cast<std::size_t>(schedule.lods), 1.0);
  }
};

/// Perceiver-style point-cloud autoencoder over a shared codebook: a learned
/// query bank cross-attends onto Fourier-encoded oriented points, latent rows
/// are vector-quantized per LOD, and a shared decoder answers occupancy
/// queries against the (pad-masked) latent set.
template <typename S>
class VqVaeModel {
 public:
  VqVaeModel() = default;
  VqVaeModel(VqVaeConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    const Index c = config_.schedule.feature_dim;
    const Index point_feat = 3 + 6 * config_.fourier_bands + 3;  // PE + normals
    const Index query_feat = 3 + 6 * config_.fourier_bands;
    query_bank_ = Tensor<S>::randn({config_.schedule.max_latents(), c}, rng, 0.02, true);
    input_proj_ = Linear<S>(point_feat, c, rng);
    enc_cross_ = CrossAttentionBlock<S>(c, config_.heads, c * config_.mlp_ratio, rng);
    for (Index i = 0; i < config_.encoder_self_blocks; ++i) {
      enc_blocks_.emplace_back(c, config_.heads, c * config_.mlp_ratio, rng);
    }
    enc_norm_ = LayerNorm<S>(c);
    for (Index i = 0; i < config_.decoder_self_blocks; ++i) {
      dec_blocks_.emplace_back(c, config_.heads, c * config_.mlp_ratio, rng);
    }
    query_proj_ = Linear<S>(query_feat, c, rng);
    dec_cross_ = CrossAttentionBlock<S>(c, config_.heads, c * config_.mlp_ratio, rng);
    head_hidden_ = Linear<S>(c, c, rng);
    head_out_ = Linear<S>(c, 1, rng, 0.02);  // untrained output stays near 0.5
    codebook_ = Codebook<S>(config_.codebook_size, c, rng);
  }

  const VqVaeConfig& config() const { return config_; }
  Codebook<S>& codebook() { return codebook_; }
  const Codebook<S>& codebook() const { return codebook_; }
  const Tensor<S>& query_bank() const { return query_bank_; }

  /// Latent set for one LOD: cross-attention from the first D_lod learned
  /// queries onto the point features, then the self-attention stack.
  Tensor<S> encode(const PointCloud& cloud, Index lod) const {
    const Index d = latents_at(lod);
    if (cloud.size() != config_.schedule.points_per_lod[static_cast<std::size_t>(lod - 1)]) {
      throw ContractError("encode: cloud size " + std::to_string(cloud.size()) +
                          " does not match the schedule at LOD " + std::to_string(lod));
    }
    Tensor<S> pe = fourier_pe<S>(cloud.points, config_.fourier_bands);
    VectorX<S> normal_data(cloud.size() * 3);
    for (Index i = 0; i < cloud.size(); ++i) {
      for (int a = 0; a < 3; ++a) normal_data[i * 3 + a] = static_cast<S>(cloud.normals(i, a));
    }
    Tensor<S> feats = concat_cols<S>({pe, Tensor<S>::from_flat({cloud.size(), 3}, std::move(normal_data))});
    Tensor<S> context = input_proj_(feats);
    Tensor<S> h = enc_cross_(slice_rows(query_bank_, 0, d), context);
    for (const auto& block : enc_blocks_) h = block(h);
    return enc_norm_(h);
  }

  /// Occupancy probabilities for queries against a latent whose rows are all
  /// meaningful (the truncated fast path).
  Tensor<S> decode(const Tensor<S>& latent, const Points3& queries) const {
    return decode_impl(latent, latent.rows(), queries);
  }

  /// Spec interface: latent padded to the final-LOD length, pad rows masked
  /// out of every attention key set. Truncates internally; provably equal to
  /// decode_padded_masked.
  Tensor<S> decode_padded(const Tensor<S>& padded, Index valid_len, const Points3& queries) const {
    check_padded(padded, valid_len);
    return decode_impl(slice_rows(padded, 0, valid_len), valid_len, queries);
  }

  /// Reference path: runs the full padded latent through the decoder with
  /// pad keys masked. Kept for the equivalence tests.
  Tensor<S> decode_padded_masked(const Tensor<S>& padded, Index valid_len, const Points3& queries) const {
    check_padded(padded, valid_len);
    return decode_impl(padded, valid_len, queries);
  }

  NamedParams<S> named_params() const {
    NamedParams<S> out;
    collect_param(out, "vqvae.query_bank", query_bank_);
    input_proj_.collect("vqvae.input_proj", out);
    enc_cross_.collect("vqvae.enc_cross", out);
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
      enc_blocks_[i].collect("vqvae.enc_self" + std::to_string(i), out);
    }
    enc_norm_.collect("vqvae.enc_norm", out);
    for (std::size_t i = 0; i < dec_blocks_.size(); ++i) {
      dec_blocks_[i].collect("vqvae.dec_self" + std::to_string(i), out);
    }
    query_proj_.collect("vqvae.query_proj", out);
    dec_cross_.collect("vqvae.dec_cross", out);
    head_hidden_.collect("vqvae.head_hidden", out);
    head_out_.collect("vqvae.head_out", out);
    return out;
  }

  Index latents_at(Index lod) const {
    if (lod < 1 || lod > config_.schedule.lods) {
      throw ContractError("LOD index " + std::to_string(lod) + " out of range [1, " +
                          std::to_string(config_.schedule.lods) + "]");
    }
    return config_.schedule.latents_per_lod[static_cast<std::size_t>(lod - 1)];
  }

 private:
  void check_padded(const Tensor<S>& padded, Index valid_len) const {
    if (padded.rank() != 2 || padded.rows() != config_.schedule.max_latents()) {
      throw ContractError("decode: latent must be padded to " +
                          std::to_string(config_.schedule.max_latents()) + " rows, got " +
                          detail::shape_str(padded.shape()));
    }
    if (valid_len < 1 || valid_len > padded.rows()) {
      throw ContractError("decode: invalid valid_len");
    }
  }

  Tensor<S> decode_impl(const Tensor<S>& latent, Index valid_len, const Points3& queries) const {
    const Index rows = latent.rows();
    Tensor<S> h = latent;
    if (valid_len == rows) {
      for (const auto& block : dec_blocks_) h = block(h);
    } else {
      BoolMask self_mask = BoolMask::Zero(rows, rows);
      self_mask.leftCols(valid_len).setOnes();
      for (const auto& block : dec_blocks_) h = block(h, &self_mask);
    }
    Tensor<S> q = query_proj_(fourier_pe<S>(queries, config_.fourier_bands));
    Tensor<S> attended;
    if (valid_len == rows) {
      attended = dec_cross_(q, h);
    } else {
      BoolMask cross_mask = BoolMask::Zero(queries.rows(), rows);
      cross_mask.leftCols(valid_len).setOnes();
      attended = dec_cross_(q, h, &cross_mask);
    }
    Tensor<S> logits = head_out_(gelu(head_hidden_(attended)));
    return sigmoid(reshape(logits, {queries.rows()}));
  }

  VqVaeConfig config_;
  Tensor<S> query_bank_;
  Linear<S> input_proj_;
  CrossAttentionBlock<S> enc_cross_;
  std::vector<TransformerBlock<S>> enc_blocks_;
  LayerNorm<S> enc_norm_;
  std::vector<TransformerBlock<S>> dec_blocks_;
  Linear<S> query_proj_;
  CrossAttentionBlock<S> dec_cross_;
  Linear<S> head_hidden_;
  Linear<S> head_out_;
  Codebook<S> codebook_;
};

template <typename S>
struct QuantizeResult {
  LodTokenMap tokens;
  Tensor<S> quantized;   // straight-through: values are the looked-up codes,
                         // gradient passes to the input latent unchanged
  Tensor<S> commitment;  // scalar mean ||latent - stopgrad(codes)||^2
};

template <typename S>
QuantizeResult<S> quantize(const Tensor<S>& latent, Codebook<S>& codebook, Index lod,
                           bool update_ema) {
  if (latent.rank() != 2 || latent.cols() != codebook.dim()) {
    throw ShapeError("quantize: latent shape " + detail::shape_str(latent.shape()) +
                     " incompatible with codebook dim " + std::to_string(codebook.dim()));
  }
  const MatrixX<S> rows = latent.mat();
  QuantizeResult<S> result;
  result.tokens.lod = lod;
  result.tokens.indices = codebook.nearest(rows);
  const MatrixX<S> codes = codebook.lookup(result.tokens.indices);
  if (update_ema) codebook.ema_update(rows, result.tokens.indices);

  Tensor<S> codes_const = Tensor<S>::from_matrix(codes);
  Tensor<S> delta = Tensor<S>::from_matrix(codes - rows);  // constant offset
  result.quantized = add(latent, delta);
  Tensor<S> residual = sub(latent, codes_const);
  result.commitment = mean(mul(residual, residual));
  return result;
}

/// Zero-pad a latent set to the schedule's final length; padded rows carry
/// the zero embedding and are masked out of decoder attention.
template <typename S>
Tensor<S> pad_latent(const Tensor<S>& latent, Index target_len) {
  if (latent.rows() == target_len) return latent;
  if (latent.rows() > target_len) throw ContractError("pad_latent: latent longer than target");
  return concat_rows<S>({latent, Tensor<S>::zeros({target_len - latent.rows(), latent.cols()})});
}

/// Chain strategy for nesting the per-LOD clouds inside the dense sample.
enum class ChainMode { kFarthestPoint, kUniformRandom };

/// Geometry reused across training steps for one shape: the dense surface
/// sample, the nested downsampling order, and the occupancy oracle.
struct ShapeContext {
  PointCloud dense;
  std::vector<Index> chain_order;
  std::shared_ptr<MeshOccupancy> oracle;

  static ShapeContext build(const TriMesh& mesh, const LodSchedule& schedule, std::uint64_t seed,
                            ChainMode mode = ChainMode::kFarthestPoint) {
    ShapeContext ctx;
    ctx.oracle = std::make_shared<MeshOccupancy>(mesh);
    ctx.dense = sample_surface(mesh, schedule.max_points(), seed);
    if (mode == ChainMode::kFarthestPoint) {
      ctx.chain_order = fps(ctx.dense, ctx.dense.size(), 0);
    } else {
      std::vector<Index> order(static_cast<std::size_t>(ctx.dense.size()));
      for (Index i = 0; i < ctx.dense.size(); ++i) order[static_cast<std::size_t>(i)] = i;
      Rng rng(seed ^ 0x5deece66dULL);
      rng.shuffle(order);
      ctx.chain_order = std::move(order);
    }
    return ctx;
  }

  PointCloud cloud_at(const LodSchedule& schedule, Index lod) const {
    return dense.take(chain_order, schedule.points_per_lod[static_cast<std::size_t>(lod - 1)]);
  }
};

/// LOD-specific near-surface jitter: coarser LODs supervise a blurrier
/// boundary, sigma_i = 0.01 * (N_K / N_i)^(1/3).
inline double lod_sigma(const LodSchedule& schedule, Index lod) {
  const double ratio = static_cast<double>(schedule.max_points()) /
                       static_cast<double>(schedule.points_per_lod[static_cast<std::size_t>(lod - 1)]);
  return 0.01 * std::cbrt(ratio);
}

template <typename S>
struct VaeLossResult {
  Tensor<S> total;             // scalar, loss-ready
  std::vector<double> bce;     // per LOD
  std::vector<double> commit;  // per LOD
};

/// Geometry-consistency objective: every LOD's quantized latent must answer
/// occupancy queries for the same shape, at its own boundary blur.
template <typename S>
VaeLossResult<S> vae_loss(VqVaeModel<S>& model, const ShapeContext& ctx, Index q_uniform,
                          Index q_near, std::uint64_t query_seed, bool update_ema) {
  const LodSchedule& schedule = model.config().schedule;
  const auto weights = model.config().effective_weights();
  VaeLossResult<S> result;
  Tensor<S> total = Tensor<S>::zeros({1});
  Rng seeds(query_seed);
  for (Index lod = 1; lod <= schedule.lods; ++lod) {
    const PointCloud cloud = ctx.cloud_at(schedule, lod);
    const QueryBatch batch =
        build_query_batch(*ctx.oracle, q_uniform, q_near, lod_sigma(schedule, lod), seeds.bits());
    Tensor<S> latent = model.encode(cloud, lod);
    QuantizeResult<S> quant = quantize(latent, model.codebook(), lod, update_ema);
    Tensor<S> padded = pad_latent(quant.quantized, schedule.max_latents());
    Tensor<S> probs = model.decode_padded(padded, model.latents_at(lod), batch.points);
    Tensor<S> bce = bce_loss(probs, batch.occupied);
    result.bce.push_back(static_cast<double>(bce.item()));
    result.commit.push_back(static_cast<double>(quant.commitment.item()));
    total = add(total, scale(bce, static_cast<S>(weights[static_cast<std::size_t>(lod - 1)])));
    total = add(total, scale(quant.commitment, static_cast<S>(model.config().commit_weight)));
  }
  result.total = total;
  return result;
}

/// Spec-facing overload: builds the geometry context from the mesh.
template <typename S>
VaeLossResult<S> vae_loss(VqVaeModel<S>& model, const TriMesh& mesh, std::uint64_t seed,
                          Index q_uniform = 64, Index q_near = 64, bool update_ema = false) {
  const ShapeContext ctx = ShapeContext::build(mesh, model.config().schedule, seed);
  return vae_loss(model, ctx, q_uniform, q_near, seed ^ 0x9e3779b97f4a7c15ULL, update_ema);
}

/// Every LOD's token map for one shape; deterministic per seed, read-only on
/// the model.
template <typename S>
std::vector<LodTokenMap> tokenize_shape(const VqVaeModel<S>& model, const ShapeContext& ctx) {
  const LodSchedule& schedule = model.config().schedule;
  std::vector<LodTokenMap> maps;
  // quantization without EMA updates; the codebook is logically const here
  auto& codebook = const_cast<VqVaeModel<S>&>(model).codebook();
  for (Index lod = 1; lod <= schedule.lods; ++lod) {
    Tensor<S> latent = model.encode(ctx.cloud_at(schedule, lod), lod);
    QuantizeResult<S> quant = quantize(latent, codebook, lod, false);
    maps.push_back(std::move(quant.tokens));
  }
  return maps;
}

template <typename S>
std::vector<LodTokenMap> tokenize_shape(const VqVaeModel<S>& model, const TriMesh& mesh,
                                        std::uint64_t seed) {
  return tokenize_shape(model, ShapeContext::build(mesh, model.config().schedule, seed));
}

}  // namespace mars
