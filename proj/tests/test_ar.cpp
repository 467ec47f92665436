#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mars/adam.hpp"
#include "mars/ar.hpp"

using namespace mars;

namespace {

ArConfig tiny_config() {
  ArConfig cfg;
  cfg.schedule.lods = 3;
  cfg.schedule.points_per_lod = {8, 16, 32};  // unused by the AR model itself
  cfg.schedule.latents_per_lod = {2, 4, 8};
  cfg.schedule.feature_dim = 8;
  cfg.vocab = 32;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.depth = 2;
  return cfg;
}

std::vector<LodTokenMap> random_maps(const LodSchedule& schedule, Index vocab, Rng& rng) {
  std::vector<LodTokenMap> maps;
  for (Index b = 1; b <= schedule.lods; ++b) {
    LodTokenMap map;
    map.lod = b;
    for (Index i = 0; i < schedule.latents_per_lod[static_cast<std::size_t>(b - 1)]; ++i) {
      map.indices.push_back(static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(vocab))));
    }
    maps.push_back(std::move(map));
  }
  return maps;
}

Tensor<double> find_param(const NamedParams<double>& params, const std::string& name) {
  for (const auto& [n, p] : params) {
    if (n == name) return p;
  }
  throw std::runtime_error("param not found: " + name);
}

}  // namespace

TEST_CASE("build_block_mask") {
  SUBCASE("two blocks of sizes 1 and 2") {
    LodSchedule s;
    s.lods = 2;
    s.points_per_lod = {4, 8};
    s.latents_per_lod = {1, 2};
    s.feature_dim = 8;
    const BoolMask mask = build_block_mask(s);  // positions {start, a1, b1, b2}
    REQUIRE(mask.rows() == 4);
    // row a1 sees {start, a1}
    CHECK(mask(1, 0) == 1);
    CHECK(mask(1, 1) == 1);
    CHECK(mask(1, 2) == 0);
    CHECK(mask(1, 3) == 0);
    // rows b1 and b2 see everything up to their own block
    for (Index j = 0; j < 4; ++j) {
      CHECK(mask(2, j) == 1);
      CHECK(mask(3, j) == 1);
    }
    // start sees only itself
    CHECK(mask(0, 0) == 1);
    CHECK(mask(0, 1) == 0);
  }
  SUBCASE("single block attends fully") {
    LodSchedule s;
    s.lods = 1;
    s.points_per_lod = {8};
    s.latents_per_lod = {5};
    s.feature_dim = 8;
    const BoolMask mask = build_block_mask(s);
    REQUIRE(mask.rows() == 6);
    for (Index i = 1; i < 6; ++i) {
      for (Index j = 0; j < 6; ++j) CHECK(mask(i, j) == 1);
    }
  }
}

TEST_CASE("block_input_rows") {
  Rng rng(3);
  ArModel<double> model(tiny_config(), rng);
  const auto params = model.named_params();
  const Tensor<double> tok = find_param(params, "ar.token_embed");
  const Tensor<double> start = find_param(params, "ar.start_embed");
  const Tensor<double> stage = find_param(params, "ar.stage_embed");
  const Tensor<double> pos2 = find_param(params, "ar.pos_embed2");
  const Tensor<double> pos1 = find_param(params, "ar.pos_embed1");

  SUBCASE("nearest-neighbor repetition floor(j * prev/cur)") {
    // block 2 has length 4 driven by block 1's 2 tokens: sources [0,0,1,1]
    Tensor<double> rows = model.block_input_rows(2, {5, 9});
    REQUIRE(rows.rows() == 4);
    const Index srcs[4] = {5, 5, 9, 9};
    for (Index j = 0; j < 4; ++j) {
      for (Index c = 0; c < rows.cols(); ++c) {
        const double expect = tok.at(srcs[j], c) + pos2.at(j, c) + stage.at(2, c);
        CHECK(rows.at(j, c) == doctest::Approx(expect).epsilon(1e-15));
      }
    }
  }
  SUBCASE("block 1 repeats the start embedding") {
    Tensor<double> rows = model.block_input_rows(1, {});
    REQUIRE(rows.rows() == 2);
    for (Index j = 0; j < 2; ++j) {
      for (Index c = 0; c < rows.cols(); ++c) {
        const double expect = start.at(0, c) + pos1.at(j, c) + stage.at(1, c);
        CHECK(rows.at(j, c) == doctest::Approx(expect).epsilon(1e-15));
      }
    }
  }
  SUBCASE("length mismatch is a contract error") {
    CHECK_THROWS_AS(model.block_input_rows(2, {1, 2, 3}), ContractError);
  }
}

TEST_CASE("ar_forward") {
  Rng rng(7);
  const ArConfig cfg = tiny_config();
  ArModel<double> model(cfg, rng);
  Rng maps_rng(11);
  const auto maps = random_maps(cfg.schedule, cfg.vocab, maps_rng);

  SUBCASE("logits cover every token position") {
    Tensor<double> logits = model.forward(maps);
    CHECK(logits.shape() == std::vector<Index>{2 + 4 + 8, 32});
  }
  SUBCASE("mutating a block changes only strictly finer blocks, exactly") {
    Tensor<double> base = model.forward(maps);
    auto mutated = maps;
    mutated[1].indices[3] = (mutated[1].indices[3] + 7) % cfg.vocab;  // block 2
    Tensor<double> changed = model.forward(mutated);
    // positions of blocks 1..2 occupy rows [0, 6): bitwise equal
    for (Index i = 0; i < 6; ++i) {
      for (Index c = 0; c < 32; ++c) CHECK(base.at(i, c) == changed.at(i, c));
    }
    // block 3 rows depend on block 2's tokens
    double diff = 0;
    for (Index i = 6; i < 14; ++i) {
      for (Index c = 0; c < 32; ++c) diff = std::max(diff, std::abs(base.at(i, c) - changed.at(i, c)));
    }
    CHECK(diff > 0);
  }
  SUBCASE("permuting tokens within a block changes the next block's logits") {
    Tensor<double> base = model.forward(maps);
    auto permuted = maps;
    std::rotate(permuted[1].indices.begin(), permuted[1].indices.begin() + 1, permuted[1].indices.end());
    REQUIRE(permuted[1].indices != maps[1].indices);
    Tensor<double> changed = model.forward(permuted);
    double diff = 0;
    for (Index i = 6; i < 14; ++i) {
      for (Index c = 0; c < 32; ++c) diff = std::max(diff, std::abs(base.at(i, c) - changed.at(i, c)));
    }
    CHECK(diff > 0);
  }
  SUBCASE("incomplete blocks are a contract error") {
    auto bad = maps;
    bad[2].indices.pop_back();
    CHECK_THROWS_AS(model.forward(bad), ContractError);
    bad = maps;
    bad[0].indices[0] = cfg.vocab;  // pad id is not a valid input token
    CHECK_THROWS_AS(model.forward(bad), ContractError);
  }
}

TEST_CASE("ar_loss and joint_logprob") {
  Rng rng(13);
  const ArConfig cfg = tiny_config();
  ArModel<double> model(cfg, rng);
  Rng maps_rng(17);
  const auto maps = random_maps(cfg.schedule, cfg.vocab, maps_rng);

  SUBCASE("untrained loss is ln V") {
    const double loss = model.loss(maps).item();
    CHECK(loss == doctest::Approx(std::log(32.0)).epsilon(0.1));
  }
  SUBCASE("factorization: joint equals the sum of per-block prefix conditionals") {
    const double joint = model.joint_logprob(maps);
    double sum_blocks = 0.0;
    Index offset = 0;
    for (Index b = 1; b <= 3; ++b) {
      std::vector<LodTokenMap> prefix(maps.begin(), maps.begin() + b);
      Tensor<double> logits = model.forward(prefix);
      const Index len = cfg.schedule.latents_per_lod[static_cast<std::size_t>(b - 1)];
      std::vector<Index> targets = maps[static_cast<std::size_t>(b - 1)].indices;
      Tensor<double> block_logits = slice_rows(logits, offset, len);
      sum_blocks += row_logprob_sum(block_logits, targets);
      offset += len;
    }
    CHECK(joint == doctest::Approx(sum_blocks).epsilon(1e-6));
  }
  SUBCASE("logprob invariant to constant logit shifts") {
    Rng lrng(23);
    Tensor<double> logits = Tensor<double>::randn({5, 9}, lrng);
    std::vector<Index> targets{0, 4, 8, 2, 2};
    const double base = row_logprob_sum(logits, targets);
    const double shifted = row_logprob_sum(add_scalar(logits, 13.25), targets);
    CHECK(base == doctest::Approx(shifted).epsilon(1e-9));
  }
  SUBCASE("single-block schedule reduces to one conditional") {
    ArConfig one = tiny_config();
    one.schedule.lods = 1;
    one.schedule.points_per_lod = {8};
    one.schedule.latents_per_lod = {4};
    Rng r1(29);
    ArModel<double> m1(one, r1);
    LodTokenMap map;
    map.lod = 1;
    map.indices = {3, 1, 4, 1};
    const double joint = m1.joint_logprob({map});
    Tensor<double> logits = m1.forward({map});
    CHECK(joint == doctest::Approx(row_logprob_sum(logits, map.indices)).epsilon(1e-12));
  }
  SUBCASE("training overfits a single sequence and is order-sensitive") {
    Rng trng(31);
    ArModel<double> train_model(cfg, trng);
    std::vector<Tensor<double>> params;
    for (auto& [n, p] : train_model.named_params()) params.push_back(p);
    AdamConfig<double> acfg;
    acfg.lr = 3e-3;
    Adam<double> opt(params, acfg);
    double loss = 0;
    for (int step = 0; step < 400; ++step) {
      opt.zero_grad();
      GradTape<double> tape;
      Tensor<double> l = train_model.loss(maps);
      tape.backward(l);
      opt.step();
      loss = l.item();
    }
    CHECK(loss < 0.1);
    // shuffled targets must score worse for the overfit model
    auto shuffled = maps;
    std::rotate(shuffled[2].indices.begin(), shuffled[2].indices.begin() + 3, shuffled[2].indices.end());
    if (shuffled[2].indices != maps[2].indices) {
      CHECK(train_model.loss(shuffled).item() > loss);
    }
  }
}

TEST_CASE("generate") {
  Rng rng(37);
  const ArConfig cfg = tiny_config();
  ArModel<double> model(cfg, rng);
  Rng maps_rng(41);
  const auto maps = random_maps(cfg.schedule, cfg.vocab, maps_rng);
  const std::vector<LodTokenMap> prefix(maps.begin(), maps.begin() + 1);

  SUBCASE("greedy decoding is deterministic") {
    SamplerConfig greedy;
    greedy.temperature = 0.0;
    greedy.top_k = 32;
    KvCache<double> c1(cfg.depth), c2(cfg.depth);
    const auto a = model.generate(prefix, greedy, c1);
    const auto b = model.generate(prefix, greedy, c2);
    REQUIRE(a.blocks.size() == 2);
    for (std::size_t i = 0; i < a.blocks.size(); ++i) CHECK(a.blocks[i].indices == b.blocks[i].indices);
  }
  SUBCASE("top_k=1 equals the argmax path at any temperature") {
    SamplerConfig k1;
    k1.temperature = 5.0;
    k1.top_k = 1;
    SamplerConfig greedy;
    greedy.temperature = 0.0;
    greedy.top_k = 32;
    KvCache<double> c1(cfg.depth), c2(cfg.depth);
    const auto a = model.generate(prefix, k1, c1);
    const auto b = model.generate(prefix, greedy, c2);
    for (std::size_t i = 0; i < a.blocks.size(); ++i) CHECK(a.blocks[i].indices == b.blocks[i].indices);
  }
  SUBCASE("argmax invariant under uniform positive temperature") {
    SamplerConfig t1;
    t1.temperature = 0.0;
    t1.top_k = 24;
    SamplerConfig t2;
    t2.temperature = 0.0;
    t2.top_k = 1;
    KvCache<double> c1(cfg.depth), c2(cfg.depth);
    const auto a = model.generate(prefix, t1, c1);
    const auto b = model.generate(prefix, t2, c2);
    for (std::size_t i = 0; i < a.blocks.size(); ++i) CHECK(a.blocks[i].indices == b.blocks[i].indices);
  }
  SUBCASE("sampled tokens stay in vocabulary over random prefixes") {
    Rng prng(43);
    for (int trial = 0; trial < 10; ++trial) {
      const auto rmaps = random_maps(cfg.schedule, cfg.vocab, prng);
      const Index j = static_cast<Index>(prng.uniform_int(3));
      std::vector<LodTokenMap> pre(rmaps.begin(), rmaps.begin() + j);
      SamplerConfig sampler;
      sampler.temperature = 1.3;
      sampler.top_k = 8;
      sampler.seed = prng.bits();
      KvCache<double> cache(cfg.depth);
      const auto out = model.generate(pre, sampler, cache);
      CHECK(out.blocks.size() == static_cast<std::size_t>(3 - j));
      for (const auto& block : out.blocks) {
        for (Index id : block.indices) {
          CHECK(id >= 0);
          CHECK(id < cfg.vocab);
        }
      }
      // cache covers start + every emitted position
      Index total = 1;
      for (Index d : cfg.schedule.latents_per_lod) total += d;
      CHECK(cache.length() == total);
    }
  }
  SUBCASE("cached logits equal full-sequence recompute") {
    SamplerConfig greedy;
    greedy.temperature = 0.0;
    greedy.top_k = 32;
    KvCache<double> cache(cfg.depth);
    const auto gen = model.generate(prefix, greedy, cache);
    std::vector<LodTokenMap> full = prefix;
    for (const auto& b : gen.blocks) full.push_back(b);
    Tensor<double> logits = model.forward(full);
    Index offset = cfg.schedule.latents_per_lod[0];  // skip prefix block rows
    double max_diff = 0.0;
    for (std::size_t g = 0; g < gen.blocks.size(); ++g) {
      const auto& cached = gen.block_logits[g];
      for (Index i = 0; i < cached.rows(); ++i) {
        for (Index c = 0; c < cached.cols(); ++c) {
          max_diff = std::max(max_diff, std::abs(cached(i, c) - logits.at(offset + i, c)));
        }
      }
      offset += cached.rows();
    }
    CHECK(max_diff < 1e-10);
  }
  SUBCASE("prefix covering every block is a contract error") {
    SamplerConfig sampler;
    sampler.top_k = 32;
    KvCache<double> cache(cfg.depth);
    CHECK_THROWS_AS(model.generate(maps, sampler, cache), ContractError);
  }
  SUBCASE("unconditional generation from the start token") {
    SamplerConfig sampler;
    sampler.seed = 5;
    sampler.top_k = 16;
    KvCache<double> cache(cfg.depth);
    const auto out = model.generate({}, sampler, cache);
    CHECK(out.blocks.size() == 3);
    CHECK(out.blocks[0].indices.size() == 2);
  }
}

TEST_CASE("ar gradients reach every parameter family") {
  Rng rng(47);
  ArConfig cfg = tiny_config();
  cfg.depth = 1;
  ArModel<double> model(cfg, rng);
  Rng maps_rng(53);
  const auto maps = random_maps(cfg.schedule, cfg.vocab, maps_rng);
  GradTape<double> tape;
  Tensor<double> loss = model.loss(maps);
  tape.backward(loss);
  for (auto& [name, p] : model.named_params()) {
    if (name == "ar.head.weight" || name == "ar.head.bias") continue;  // zero-init head still gets grads
    INFO("param ", name);
    CHECK(p.has_grad());
  }
  Tensor<double> head_w = find_param(model.named_params(), "ar.head.weight");
  CHECK(head_w.has_grad());
  CHECK(head_w.grad().cwiseAbs().maxCoeff() > 0.0);
}
