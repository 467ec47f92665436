#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mars/nn.hpp"
#include "mars/tensor.hpp"
#include "mars/vqvae.hpp"

namespace mars {

struct ArConfig {
  LodSchedule schedule;
  Index vocab = 512;  // codebook size; pad id == vocab
  Index dim = 192;
  Index heads = 6;
  Index depth = 6;
  Index mlp_ratio = 2;

  void validate() const {
    schedule.validate();
    if (vocab < 1) throw ConfigError("ArConfig: vocab must be positive");
    if (dim % heads != 0) throw ConfigError("ArConfig: dim must be divisible by heads");
    if (depth < 1) throw ConfigError("ArConfig: depth must be positive");
  }
};

struct SamplerConfig {
  double temperature = 1.0;  // 0 selects the argmax path
  Index top_k = 64;
  std::uint64_t seed = 0;

  void validate(Index vocab) const {
    if (temperature < 0.0) throw ConfigError("SamplerConfig: temperature must be >= 0");
    if (top_k < 1 || top_k > vocab) {
      throw ConfigError("SamplerConfig: top_k must lie in [1, vocab]");
    }
  }
};

/// Full attention inside a block, causal across blocks: position in block b
/// sees the start token and every position of blocks 1..b.
inline BoolMask build_block_mask(const LodSchedule& schedule) {
  Index total = 1;
  for (Index d : schedule.latents_per_lod) total += d;
  std::vector<Index> block_of(static_cast<std::size_t>(total), 0);
  Index off = 1;
  for (Index b = 1; b <= schedule.lods; ++b) {
    const Index len = schedule.latents_per_lod[static_cast<std::size_t>(b - 1)];
    for (Index i = 0; i < len; ++i) block_of[static_cast<std::size_t>(off + i)] = b;
    off += len;
  }
  BoolMask mask(total, total);
  for (Index i = 0; i < total; ++i) {
    for (Index j = 0; j < total; ++j) {
      mask(i, j) = block_of[static_cast<std::size_t>(j)] <= block_of[static_cast<std::size_t>(i)] ? 1 : 0;
    }
  }
  return mask;
}

/// Per-layer attention keys/values of every emitted position; append-only.
template <typename S>
class KvCache {
 public:
  explicit KvCache(Index layers) : keys_(layers), values_(layers) {}

  void append(Index layer, const MatrixX<S>& k, const MatrixX<S>& v) {
    auto& ks = keys_[static_cast<std::size_t>(layer)];
    auto& vs = values_[static_cast<std::size_t>(layer)];
    const Index old = ks.rows();
    ks.conservativeResize(old + k.rows(), k.cols());
    ks.bottomRows(k.rows()) = k;
    vs.conservativeResize(old + v.rows(), v.cols());
    vs.bottomRows(v.rows()) = v;
  }

  const MatrixX<S>& keys(Index layer) const { return keys_[static_cast<std::size_t>(layer)]; }
  const MatrixX<S>& values(Index layer) const { return values_[static_cast<std::size_t>(layer)]; }
  Index length() const { return keys_.empty() ? 0 : keys_[0].rows(); }
  Index layers() const { return static_cast<Index>(keys_.size()); }

 private:
  std::vector<MatrixX<S>> keys_;
  std::vector<MatrixX<S>> values_;
};

template <typename S>
struct GenerateResult {
  std::vector<LodTokenMap> blocks;       // blocks j+1..K in order
  std::vector<MatrixX<S>> block_logits;  // sampling logits per generated block
};

/// Decoder-only transformer over LOD token blocks. Block b's rows are driven
/// by block b-1's tokens (nearest-neighbor repetition), so its logits depend
/// only on strictly coarser blocks; whole blocks are emitted in parallel at
/// inference, attending to cached keys/values of earlier blocks.
template <typename S>
class ArModel {
 public:
  ArModel() = default;
  ArModel(ArConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    const Index d = config_.dim;
    token_embed_ = Tensor<S>::randn({config_.vocab + 1, d}, rng, 0.02, true);
    start_embed_ = Tensor<S>::randn({1, d}, rng, 0.02, true);
    stage_embed_ = Tensor<S>::randn({config_.schedule.lods + 1, d}, rng, 0.02, true);
    for (Index b = 1; b <= config_.schedule.lods; ++b) {
      pos_embed_.push_back(
          Tensor<S>::randn({config_.schedule.latents_per_lod[static_cast<std::size_t>(b - 1)], d},
                           rng, 0.02, true));
    }
    for (Index l = 0; l < config_.depth; ++l) {
      layers_.push_back(Layer{AdaLayerNorm<S>(d, d), MultiHeadAttention<S>(d, config_.heads, rng),
                              AdaLayerNorm<S>(d, d), Mlp<S>(d, d * config_.mlp_ratio, rng)});
    }
    final_norm_ = LayerNorm<S>(d);
    head_ = Linear<S>(d, config_.vocab, rng, 0.02);  // near-uniform start
  }

  const ArConfig& config() const { return config_; }

  /// Input rows for block b (1-based): embeddings of block b-1's tokens
  /// repeated nearest-neighbor to length D_b, plus positional and stage
  /// embeddings. Block 1 repeats the start embedding.
  Tensor<S> block_input_rows(Index b, const std::vector<Index>& prev_tokens) const {
    const Index len = config_.schedule.latents_per_lod[static_cast<std::size_t>(b - 1)];
    Tensor<S> content;
    if (b == 1) {
      std::vector<Tensor<S>> copies(static_cast<std::size_t>(len), start_embed_);
      content = concat_rows(copies);
    } else {
      const Index prev_len = config_.schedule.latents_per_lod[static_cast<std::size_t>(b - 2)];
      if (static_cast<Index>(prev_tokens.size()) != prev_len) {
        throw ContractError("block_input_rows: block " + std::to_string(b) + " needs " +
                            std::to_string(prev_len) + " source tokens, got " +
                            std::to_string(prev_tokens.size()));
      }
      std::vector<Index> src(static_cast<std::size_t>(len));
      for (Index j = 0; j < len; ++j) {
        src[static_cast<std::size_t>(j)] = prev_tokens[static_cast<std::size_t>(j * prev_len / len)];
      }
      content = gather_rows(token_embed_, src);
    }
    Tensor<S> with_pos = add(content, pos_embed_[static_cast<std::size_t>(b - 1)]);
    std::vector<Tensor<S>> stage(static_cast<std::size_t>(len), slice_rows(stage_embed_, b, 1));
    return add(with_pos, concat_rows(stage));
  }

  /// Teacher-forcing logits for a complete prefix of blocks (all provided
  /// maps must be full-length). Returns one row of vocab logits per token
  /// position, start excluded.
  Tensor<S> forward(const std::vector<LodTokenMap>& maps) const {
    require_maps(maps, /*require_all=*/false);
    const Index blocks = static_cast<Index>(maps.size());
    std::vector<Tensor<S>> rows;
    rows.push_back(add(start_embed_, slice_rows(stage_embed_, 0, 1)));
    for (Index b = 1; b <= blocks; ++b) {
      rows.push_back(block_input_rows(b, b == 1 ? std::vector<Index>{}
                                                : maps[static_cast<std::size_t>(b - 2)].indices));
    }
    Tensor<S> h = concat_rows(rows);
    const BoolMask full_mask = build_block_mask(config_.schedule);
    const Index total = h.rows();
    const BoolMask mask = full_mask.topLeftCorner(total, total);
    for (const Layer& layer : layers_) {
      Tensor<S> normed = apply_staged(layer.norm1, h, blocks);
      h = add(h, layer.attn(normed, normed, &mask));
      h = add(h, layer.mlp(apply_staged(layer.norm2, h, blocks)));
    }
    Tensor<S> out = final_norm_(slice_rows(h, 1, total - 1));
    return head_(out);
  }

  /// Mean cross-entropy of every block's tokens under the model (Eq-style
  /// factorized likelihood, uniform over token positions).
  Tensor<S> loss(const std::vector<LodTokenMap>& maps) const {
    require_maps(maps, /*require_all=*/true);
    Tensor<S> logits = forward(maps);
    return cross_entropy_logits(logits, flatten_targets(maps));
  }

  /// Sum over blocks of log p(block | coarser blocks).
  S joint_logprob(const std::vector<LodTokenMap>& maps) const {
    require_maps(maps, /*require_all=*/true);
    Tensor<S> logits = forward(maps);
    return row_logprob_sum(logits, flatten_targets(maps));
  }

  /// Parallel per-block generation with cached attention keys/values.
  /// Emits blocks prefix_blocks+1 .. K; deterministic per sampler seed.
  GenerateResult<S> generate(const std::vector<LodTokenMap>& prefix, const SamplerConfig& sampler,
                             KvCache<S>& cache) const {
    sampler.validate(config_.vocab);
    const Index j = static_cast<Index>(prefix.size());
    if (j >= config_.schedule.lods) {
      throw ContractError("generate: prefix already covers every LOD");
    }
    require_maps(prefix, /*require_all=*/false);
    if (cache.length() != 0) throw ContractError("generate: cache must start empty");

    // Prefill: start token plus the prefix blocks, under the block mask.
    {
      std::vector<Tensor<S>> rows;
      rows.push_back(add(start_embed_, slice_rows(stage_embed_, 0, 1)));
      for (Index b = 1; b <= j; ++b) {
        rows.push_back(block_input_rows(b, b == 1 ? std::vector<Index>{}
                                                  : prefix[static_cast<std::size_t>(b - 2)].indices));
      }
      Tensor<S> h = concat_rows(rows);
      const BoolMask full_mask = build_block_mask(config_.schedule);
      const BoolMask mask = full_mask.topLeftCorner(h.rows(), h.rows());
      run_layers_cached(h, j, &mask, cache);
    }

    GenerateResult<S> result;
    Rng rng(sampler.seed);
    std::vector<Index> prev =
        j == 0 ? std::vector<Index>{} : prefix[static_cast<std::size_t>(j - 1)].indices;
    for (Index b = j + 1; b <= config_.schedule.lods; ++b) {
      Tensor<S> h = block_input_rows(b, b == 1 ? std::vector<Index>{} : prev);
      Tensor<S> out = run_layers_cached(h, b, nullptr, cache);
      Tensor<S> logits = head_(final_norm_(out));
      LodTokenMap map;
      map.lod = b;
      map.indices.reserve(static_cast<std::size_t>(logits.rows()));
      for (Index i = 0; i < logits.rows(); ++i) {
        map.indices.push_back(sample_row(logits, i, sampler, rng));
      }
      result.block_logits.push_back(logits.mat());
      prev = map.indices;
      result.blocks.push_back(std::move(map));
    }
    return result;
  }

  NamedParams<S> named_params() const {
    NamedParams<S> out;
    collect_param(out, "ar.token_embed", token_embed_);
    collect_param(out, "ar.start_embed", start_embed_);
    collect_param(out, "ar.stage_embed", stage_embed_);
    for (std::size_t b = 0; b < pos_embed_.size(); ++b) {
      collect_param(out, "ar.pos_embed" + std::to_string(b + 1), pos_embed_[b]);
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string prefix = "ar.layer" + std::to_string(l);
      layers_[l].norm1.collect(prefix + ".norm1", out);
      layers_[l].attn.collect(prefix + ".attn", out);
      layers_[l].norm2.collect(prefix + ".norm2", out);
      layers_[l].mlp.collect(prefix + ".mlp", out);
    }
    final_norm_.collect("ar.final_norm", out);
    head_.collect("ar.head", out);
    return out;
  }

 private:
  struct Layer {
    AdaLayerNorm<S> norm1;
    MultiHeadAttention<S> attn;
    AdaLayerNorm<S> norm2;
    Mlp<S> mlp;
  };

  void require_maps(const std::vector<LodTokenMap>& maps, bool require_all) const {
    if (require_all && static_cast<Index>(maps.size()) != config_.schedule.lods) {
      throw ContractError("ArModel: expected all " + std::to_string(config_.schedule.lods) +
                          " blocks, got " + std::to_string(maps.size()));
    }
    if (static_cast<Index>(maps.size()) > config_.schedule.lods) {
      throw ContractError("ArModel: more blocks than the schedule has LODs");
    }
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const Index lod = static_cast<Index>(i) + 1;
      if (maps[i].lod != lod) throw ContractError("ArModel: block order mismatch");
      if (static_cast<Index>(maps[i].indices.size()) !=
          config_.schedule.latents_per_lod[i]) {
        throw ContractError("ArModel: block " + std::to_string(lod) + " is incomplete");
      }
      for (Index id : maps[i].indices) {
        if (id < 0 || id >= config_.vocab) {
          throw ContractError("ArModel: token id out of vocabulary range");
        }
      }
    }
  }

  std::vector<Index> flatten_targets(const std::vector<LodTokenMap>& maps) const {
    std::vector<Index> targets;
    for (const auto& map : maps) targets.insert(targets.end(), map.indices.begin(), map.indices.end());
    return targets;
  }

  // AdaLN with the stage embedding of each segment (start + blocks 1..n).
  Tensor<S> apply_staged(const AdaLayerNorm<S>& norm, const Tensor<S>& h, Index blocks) const {
    std::vector<Tensor<S>> parts;
    parts.push_back(norm(slice_rows(h, 0, 1), slice_rows(stage_embed_, 0, 1)));
    Index off = 1;
    for (Index b = 1; b <= blocks; ++b) {
      const Index len = config_.schedule.latents_per_lod[static_cast<std::size_t>(b - 1)];
      parts.push_back(norm(slice_rows(h, off, len), slice_rows(stage_embed_, b, 1)));
      off += len;
    }
    return concat_rows(parts);
  }

  // One stage's rows through all layers against the cache; appends this
  // stage's keys/values. stage == 0..j covered by the prefill (mask given),
  // single blocks use the unmasked cached path.
  Tensor<S> run_layers_cached(Tensor<S> h, Index stage_blocks, const BoolMask* prefill_mask,
                              KvCache<S>& cache) const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      Tensor<S> normed = prefill_mask != nullptr ? apply_staged(layer.norm1, h, stage_blocks)
                                                 : layer.norm1(h, slice_rows(stage_embed_, stage_blocks, 1));
      auto kv = layer.attn.project_kv(normed);
      cache.append(static_cast<Index>(l), kv.first.mat(), kv.second.mat());
      Tensor<S> k_all = Tensor<S>::from_matrix(cache.keys(static_cast<Index>(l)));
      Tensor<S> v_all = Tensor<S>::from_matrix(cache.values(static_cast<Index>(l)));
      BoolMask mask;
      const BoolMask* mask_ptr = nullptr;
      if (prefill_mask != nullptr) {
        mask = *prefill_mask;
        mask_ptr = &mask;
      }
      h = add(h, layer.attn.attend(normed, k_all, v_all, mask_ptr));
      Tensor<S> normed2 = prefill_mask != nullptr
                              ? apply_staged(layer.norm2, h, stage_blocks)
                              : layer.norm2(h, slice_rows(stage_embed_, stage_blocks, 1));
      h = add(h, layer.mlp(normed2));
    }
    return h;
  }

  Index sample_row(const Tensor<S>& logits, Index row, const SamplerConfig& sampler, Rng& rng) const {
    const Index v = logits.cols();
    std::vector<Index> order(static_cast<std::size_t>(v));
    for (Index i = 0; i < v; ++i) order[static_cast<std::size_t>(i)] = i;
    const auto value = [&](Index id) { return logits.at(row, id); };
    const Index k = std::min(sampler.top_k, v);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
      return value(a) > value(b) || (value(a) == value(b) && a < b);
    });
    if (sampler.temperature <= 0.0 || k == 1) return order[0];  // argmax path
    std::vector<double> weights(static_cast<std::size_t>(k));
    const double mx = static_cast<double>(value(order[0]));
    double total = 0.0;
    for (Index i = 0; i < k; ++i) {
      const double w =
          std::exp((static_cast<double>(value(order[static_cast<std::size_t>(i)])) - mx) /
                   sampler.temperature);
      weights[static_cast<std::size_t>(i)] = w;
      total += w;
    }
    double pick = rng.uniform() * total;
    for (Index i = 0; i < k; ++i) {
      pick -= weights[static_cast<std::size_t>(i)];
      if (pick <= 0.0) return order[static_cast<std::size_t>(i)];
    }
    return order[static_cast<std::size_t>(k - 1)];
  }

  ArConfig config_;
  Tensor<S> token_embed_;
  Tensor<S> start_embed_;
  Tensor<S> stage_embed_;
  std::vector<Tensor<S>> pos_embed_;
  std::vector<Layer> layers_;
  LayerNorm<S> final_norm_;
  Linear<S> head_;
};

}  // namespace mars
