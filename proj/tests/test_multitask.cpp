#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "doctest.h"

#include "neurodyn/autodiff.hpp"
#include "neurodyn/multitask.hpp"
#include "neurodyn/rng.hpp"
#include "neurodyn/synth.hpp"

using namespace neurodyn;

namespace {

Tensor random_tensor(std::vector<int64_t> dims, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return Tensor::randn(std::move(dims), rng, scale);
}

// Independent double-loop transcription of the paired contrastive loss.
double nt_xent_oracle(const Tensor& z, double tau) {
  const int64_t n = z.dim(0), d = z.dim(1);
  std::vector<std::vector<double>> rows(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int64_t j = 0; j < d; ++j) norm += z.at(i, j) * z.at(i, j);
    norm = std::sqrt(norm);
    rows[static_cast<size_t>(i)].resize(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j)
      rows[static_cast<size_t>(i)][static_cast<size_t>(j)] = z.at(i, j) / norm;
  }
  const auto sim = [&](int64_t a, int64_t b) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j)
      s += rows[static_cast<size_t>(a)][static_cast<size_t>(j)] *
           rows[static_cast<size_t>(b)][static_cast<size_t>(j)];
    return s;
  };
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t j = i ^ 1;  // the paired view
    double denom = 0.0;
    for (int64_t k = 0; k < n; ++k)
      if (k != i) denom += std::exp(sim(i, k) / tau);
    total += -std::log(std::exp(sim(i, j) / tau) / denom);
  }
  return total / static_cast<double>(n);
}

// Gram-Schmidt on a random square matrix -> orthogonal Q.
Tensor random_orthogonal(int64_t d, uint64_t seed) {
  Rng rng(seed);
  Tensor q = Tensor::randn({d, d}, rng);
  for (int64_t i = 0; i < d; ++i) {
    for (int64_t k = 0; k < i; ++k) {
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += q.at(i, j) * q.at(k, j);
      for (int64_t j = 0; j < d; ++j) q.at(i, j) -= dot * q.at(k, j);
    }
    double norm = 0.0;
    for (int64_t j = 0; j < d; ++j) norm += q.at(i, j) * q.at(i, j);
    norm = std::sqrt(norm);
    for (int64_t j = 0; j < d; ++j) q.at(i, j) /= norm;
  }
  return q;
}

MtlConfig tiny_cfg() {
  MtlConfig cfg;
  cfg.d_model = 4;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.ffn_dim = 8;
  cfg.n_tokens = 4;
  cfg.stem_filters = {3, 4};
  cfg.stem_kernels = {3, 3};
  cfg.dropout = 0.0;
  cfg.batch = 4;
  cfg.epochs = 2;
  return cfg;
}

// Small separable corpus: class "real" windows sit near +1, "imagery" near -1;
// chaotic trials carry an alternating +-0.5 component on top.
std::vector<Trial> tiny_corpus(int64_t n, int64_t t_len, uint64_t seed) {
  Rng rng(seed);
  std::vector<Trial> out;
  for (int64_t i = 0; i < n; ++i) {
    Trial tr;
    tr.label_mi = (i % 2 == 0) ? MiLabel::real : MiLabel::imagery;
    tr.label_chaos = (i % 4 < 2) ? ChaosTag::chaotic : ChaosTag::non_chaotic;
    tr.window = Tensor({1, t_len});
    const double base = tr.label_mi == MiLabel::real ? 1.0 : -1.0;
    for (int64_t k = 0; k < t_len; ++k) {
      double v = base + 0.1 * rng.gaussian();
      if (tr.label_chaos == ChaosTag::chaotic) v += (k % 2 == 0 ? 0.5 : -0.5);
      tr.window.at(0, k) = v;
    }
    out.push_back(std::move(tr));
  }
  return out;
}

void zero_all(MtlParams& params) {
  for (auto& [name, tensor] : params.named()) {
    (void)name;
    std::fill(tensor->data(), tensor->data() + tensor->numel(), 0.0);
  }
}

void jitter_params(MtlParams& params, uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, tensor] : params.trainable()) {
    (void)name;
    for (int64_t i = 0; i < tensor->numel(); ++i) tensor->data()[i] += 0.05 * rng.gaussian();
  }
}

}  // namespace

TEST_CASE("augment") {
  const Tensor window = Tensor::full({2, 320}, 1.0);

  SUBCASE("all-off config is the identity and consumes no randomness") {
    AugmentConfig off;
    off.jitter_sigma = 0.0;
    off.scale_sigma = 0.0;
    off.mask_prob = 0.0;
    off.chdrop_prob = 0.0;
    Rng a(7), b(7);
    const Tensor v = augment(window, off, a);
    CHECK(v.vec() == window.vec());
    CHECK(a.next_u64() == b.next_u64());
  }

  SUBCASE("light mode never zeroes a sample") {
    AugmentConfig cfg;  // defaults include mask/chdrop
    cfg.light_mode = true;
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
      const Tensor v = augment(window, cfg, rng);
      for (double x : v.vec()) CHECK(x != 0.0);
    }
  }

  SUBCASE("time mask zeroes one contiguous run in every channel") {
    AugmentConfig cfg;
    cfg.jitter_sigma = 0.0;
    cfg.scale_sigma = 0.0;
    cfg.mask_prob = 1.0;
    cfg.mask_frac = 0.05;
    cfg.chdrop_prob = 0.0;
    Rng rng(11);
    const Tensor v = augment(window, cfg, rng);
    for (int64_t ch = 0; ch < 2; ++ch) {
      int64_t zeros = 0, first = -1, last = -1;
      for (int64_t t = 0; t < 320; ++t) {
        if (v.at(ch, t) == 0.0) {
          ++zeros;
          if (first < 0) first = t;
          last = t;
        }
      }
      CHECK(zeros == 16);  // floor(0.05 * 320)
      CHECK(last - first + 1 == 16);
      // Same placement on both channels.
      CHECK(v.at(0, first) == 0.0);
      CHECK(v.at(1, first) == 0.0);
    }
  }

  SUBCASE("certain channel dropout blanks every channel") {
    AugmentConfig cfg;
    cfg.jitter_sigma = 0.0;
    cfg.scale_sigma = 0.0;
    cfg.mask_prob = 0.0;
    cfg.chdrop_prob = 1.0;
    cfg.chdrop_p = 1.0;
    Rng rng(5);
    const Tensor v = augment(window, cfg, rng);
    for (double x : v.vec()) CHECK(x == 0.0);
  }

  SUBCASE("deterministic given the generator state") {
    AugmentConfig cfg;  // full defaults
    Rng a(99), b(99);
    CHECK(augment(window, cfg, a).vec() == augment(window, cfg, b).vec());
  }

  SUBCASE("validation") {
    AugmentConfig bad;
    bad.jitter_sigma = -0.1;
    Rng rng(1);
    CHECK_THROWS_AS(augment(window, bad, rng), ParameterError);
    AugmentConfig bad2;
    bad2.mask_prob = 1.5;
    CHECK_THROWS_AS(augment(window, bad2, rng), ParameterError);
  }
}

TEST_CASE("nt_xent values") {
  SUBCASE("a single pair has no negatives: loss is exactly zero") {
    Tape tape;
    const Val z = tape.leaf(random_tensor({2, 5}, 1));
    CHECK(nt_xent(z, 0.5).value().item() == 0.0);
  }

  SUBCASE("two orthogonal pairs evaluate in closed form") {
    Tensor z({4, 4});
    z.at(0, 0) = 1.0;
    z.at(1, 0) = 1.0;  // pair 0 along e0
    z.at(2, 1) = 1.0;
    z.at(3, 1) = 1.0;  // pair 1 along e1
    Tape tape;
    const double loss = nt_xent(tape.leaf(z), 0.5).value().item();
    CHECK(loss == doctest::Approx(std::log(1.0 + 2.0 * std::exp(-2.0))).epsilon(1e-12));
  }

  SUBCASE("matches the brute-force double loop on random batches") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      const Tensor z = random_tensor({8, 16}, seed);
      Tape tape;
      const double got = nt_xent(tape.leaf(z), 0.5).value().item();
      CHECK(got == doctest::Approx(nt_xent_oracle(z, 0.5)).epsilon(1e-10));
      const double got03 = nt_xent(tape.leaf(z), 0.3).value().item();
      CHECK(got03 == doctest::Approx(nt_xent_oracle(z, 0.3)).epsilon(1e-10));
    }
  }

  SUBCASE("invariant to a common rotation of the embedding space") {
    const Tensor z = random_tensor({6, 8}, 4);
    const Tensor q = random_orthogonal(8, 5);
    Tensor zq({6, 8});
    for (int64_t i = 0; i < 6; ++i)
      for (int64_t j = 0; j < 8; ++j) {
        double s = 0.0;
        for (int64_t k = 0; k < 8; ++k) s += z.at(i, k) * q.at(k, j);
        zq.at(i, j) = s;
      }
    Tape tape;
    const double a = nt_xent(tape.leaf(z), 0.5).value().item();
    const double b = nt_xent(tape.leaf(zq), 0.5).value().item();
    CHECK(a == doctest::Approx(b).epsilon(1e-9));
  }

  SUBCASE("row scaling is absorbed by the internal normalization") {
    Tensor z = random_tensor({4, 6}, 9);
    Tensor z3 = z;
    for (double& v : z3.vec()) v *= 3.0;
    Tape tape;
    CHECK(nt_xent(tape.leaf(z), 0.5).value().item() ==
          doctest::Approx(nt_xent(tape.leaf(z3), 0.5).value().item()).epsilon(1e-12));
  }

  SUBCASE("validation") {
    Tape tape;
    const Val z = tape.leaf(random_tensor({4, 4}, 2));
    CHECK_THROWS_AS(nt_xent(z, 0.0), ParameterError);
    CHECK_THROWS_AS(nt_xent(z, -1.0), ParameterError);
    CHECK_THROWS_AS(nt_xent(tape.leaf(random_tensor({3, 4}, 3)), 0.5), DimensionError);
  }
}

TEST_CASE("nt_xent gradients match finite differences") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    const ScalarFn f = [](Tape&, const std::vector<Val>& in) { return nt_xent(in[0], 0.5); };
    CHECK(grad_check(f, {random_tensor({6, 8}, seed)}) < 1e-4);
  }
}

TEST_CASE("cross entropy and binary cross entropy") {
  SUBCASE("uniform logits cost ln K") {
    Tape tape;
    const Val l2 = tape.leaf(Tensor({1, 2}));
    CHECK(cross_entropy(l2, {0}).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const Val l1 = tape.leaf(Tensor({1, 1}));
    CHECK(binary_cross_entropy(l1, {1}).value().item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }

  SUBCASE("brute-force transcription on random fixtures") {
    const Tensor logits = random_tensor({5, 4}, 21, 2.0);
    const std::vector<int> ys{3, 0, 2, 1, 1};
    double want = 0.0;
    for (int64_t i = 0; i < 5; ++i) {
      double mx = logits.at(i, 0);
      for (int64_t k = 1; k < 4; ++k) mx = std::max(mx, logits.at(i, k));
      double lse = 0.0;
      for (int64_t k = 0; k < 4; ++k) lse += std::exp(logits.at(i, k) - mx);
      want += mx + std::log(lse) - logits.at(i, static_cast<int64_t>(ys[static_cast<size_t>(i)]));
    }
    want /= 5.0;
    Tape tape;
    CHECK(cross_entropy(tape.leaf(logits), ys).value().item() ==
          doctest::Approx(want).epsilon(1e-12));

    const Tensor raw = random_tensor({6, 1}, 22, 3.0);
    const std::vector<int> yb{1, 0, 1, 1, 0, 0};
    double want_b = 0.0;
    for (int64_t i = 0; i < 6; ++i) {
      const double x = raw.at(i, 0);
      const double y = static_cast<double>(yb[static_cast<size_t>(i)]);
      want_b += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    want_b /= 6.0;
    CHECK(binary_cross_entropy(tape.leaf(raw), yb).value().item() ==
          doctest::Approx(want_b).epsilon(1e-12));
  }

  SUBCASE("extreme logits stay finite") {
    Tape tape;
    Tensor huge({2, 1}, {300.0, -300.0});
    const double v = binary_cross_entropy(tape.leaf(huge), {1, 0}).value().item();
    CHECK(std::isfinite(v));
    CHECK(v < 1e-9);
  }

  SUBCASE("gradients match finite differences") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      const ScalarFn ce = [](Tape&, const std::vector<Val>& in) {
        return cross_entropy(in[0], {1, 0, 2});
      };
      CHECK(grad_check(ce, {random_tensor({3, 3}, seed)}) < 1e-4);
      const ScalarFn bce = [](Tape&, const std::vector<Val>& in) {
        return binary_cross_entropy(in[0], {1, 0, 1, 0});
      };
      CHECK(grad_check(bce, {random_tensor({4, 1}, seed + 50)}) < 1e-4);
    }
  }

  SUBCASE("validation") {
    Tape tape;
    const Val l = tape.leaf(random_tensor({2, 3}, 1));
    CHECK_THROWS_AS(cross_entropy(l, {0}), ContractError);        // label count
    CHECK_THROWS_AS(cross_entropy(l, {0, 5}), ParameterError);    // out of range
    CHECK_THROWS_AS(binary_cross_entropy(l, {0, 1}), DimensionError);
    const Val b = tape.leaf(random_tensor({2, 1}, 2));
    CHECK_THROWS_AS(binary_cross_entropy(b, {0, 2}), ParameterError);
  }
}

TEST_CASE("total_loss composition") {
  const Tensor logits = random_tensor({4, 2}, 31);
  const Tensor chaos = random_tensor({4, 1}, 32);
  const Tensor proj = random_tensor({4, 6}, 33);
  const std::vector<int> y_mi{0, 1, 1, 0};
  const std::vector<int> y_ch{1, 0, 0, 1};

  SUBCASE("weighted sum matches the hand-computed parts") {
    MtlConfig cfg = tiny_cfg();
    cfg.lambda_cls = 1.0;
    cfg.lambda_chaos = 0.6;
    cfg.lambda_con = 0.3;
    cfg.tau = 0.5;
    Tape tape;
    LossParts parts;
    const double total = total_loss(tape.leaf(logits), y_mi, tape.leaf(chaos), y_ch,
                                    tape.leaf(proj), cfg, &parts)
                             .value()
                             .item();
    // Independent component values.
    const double ce = cross_entropy(tape.leaf(logits), y_mi).value().item();
    const double bce = binary_cross_entropy(tape.leaf(chaos), y_ch).value().item();
    const double con = nt_xent_oracle(proj, 0.5);
    CHECK(parts.cls == doctest::Approx(ce).epsilon(1e-15));
    CHECK(parts.chaos == doctest::Approx(bce).epsilon(1e-15));
    CHECK(parts.contrastive == doctest::Approx(con).epsilon(1e-10));
    CHECK(total == doctest::Approx(1.0 * ce + 0.6 * bce + 0.3 * con).epsilon(1e-12));
    CHECK(parts.total == total);
    CHECK(total >= 0.0);
  }

  SUBCASE("contrastive-only weights reduce to the contrastive loss") {
    MtlConfig cfg = tiny_cfg();
    cfg.lambda_cls = 0.0;
    cfg.lambda_chaos = 0.0;
    cfg.lambda_con = 1.0;
    Tape tape;
    const double total =
        total_loss(tape.leaf(logits), y_mi, tape.leaf(chaos), y_ch, tape.leaf(proj), cfg, nullptr)
            .value()
            .item();
    CHECK(total == doctest::Approx(nt_xent(tape.leaf(proj), cfg.tau).value().item())
                       .epsilon(1e-15));
  }

  SUBCASE("saturated logits cost nearly nothing") {
    Tensor perfect({2, 2}, {30.0, -30.0, -30.0, 30.0});  // correct classes 0, 1
    Tensor ch({2, 1}, {30.0, -30.0});                    // labels 1, 0
    MtlConfig cfg = tiny_cfg();
    cfg.lambda_con = 0.0;
    Tape tape;
    LossParts parts;
    total_loss(tape.leaf(perfect), {0, 1}, tape.leaf(ch), {1, 0}, std::nullopt, cfg, &parts);
    CHECK(parts.cls < 1e-9);
    CHECK(parts.chaos < 1e-9);
  }

  SUBCASE("projection pairs required exactly when the weight is positive") {
    MtlConfig cfg = tiny_cfg();
    cfg.lambda_con = 0.3;
    Tape tape;
    CHECK_THROWS_AS(
        total_loss(tape.leaf(logits), y_mi, tape.leaf(chaos), y_ch, std::nullopt, cfg, nullptr),
        ContractError);
    cfg.lambda_con = 0.0;
    CHECK_NOTHROW(
        total_loss(tape.leaf(logits), y_mi, tape.leaf(chaos), y_ch, std::nullopt, cfg, nullptr));
  }
}

TEST_CASE("model forward shapes and attention behavior") {
  SUBCASE("output shapes and projection normalization") {
    MtlConfig cfg = tiny_cfg();
    Rng rng(8);
    MtlParams params = init_mtl(2, cfg, rng);
    jitter_params(params, 81);  // generic point: no ReLU-dead projection head
    const Tensor batch = random_tensor({3, 2, 16}, 40);
    const MtlOutputs out = mtl_forward(params, batch);
    CHECK(out.logits_mi.dims() == std::vector<int64_t>{3, 2});
    CHECK(out.logit_chaos.dims() == std::vector<int64_t>{3, 1});
    CHECK(out.proj.dims() == std::vector<int64_t>{3, 4});
    for (int64_t i = 0; i < 3; ++i) {
      double norm = 0.0;
      for (int64_t j = 0; j < 4; ++j) norm += out.proj.at(i, j) * out.proj.at(i, j);
      CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
    }
    // A (C, T) window is promoted to a singleton batch.
    const Tensor one = mtl_forward(params, random_tensor({2, 16}, 41)).logits_mi;
    CHECK(one.dims() == std::vector<int64_t>{1, 2});
    // Channel mismatch rejected.
    CHECK_THROWS_AS(mtl_forward(params, random_tensor({3, 3, 16}, 42)), ContractError);
    // Embeddings are the pooled trunk output.
    CHECK(mtl_embed(params, batch).dims() == std::vector<int64_t>{3, 4});
  }

  SUBCASE("a single token attends only to itself: query/key weights are irrelevant") {
    MtlConfig cfg = tiny_cfg();
    cfg.n_tokens = 1;
    Rng rng(13);
    MtlParams a = init_mtl(1, cfg, rng);
    MtlParams b = a;
    Rng other(99);
    b.layers[0].wq = Tensor::randn({4, 4}, other);
    b.layers[0].wk = Tensor::randn({4, 4}, other);
    const Tensor x = random_tensor({2, 1, 8}, 50);
    const MtlOutputs oa = mtl_forward(a, x);
    const MtlOutputs ob = mtl_forward(b, x);
    CHECK(oa.logits_mi.vec() == ob.logits_mi.vec());
    CHECK(oa.logit_chaos.vec() == ob.logit_chaos.vec());
    CHECK(oa.proj.vec() == ob.proj.vec());
  }

  SUBCASE("zero queries give uniform attention: key weights become irrelevant") {
    // With Q = 0 every attention row is the uniform softmax of zeros, so
    // each token receives the plain mean of the value rows no matter what
    // the key projection computes.
    MtlConfig cfg = tiny_cfg();
    cfg.n_heads = 1;
    Rng rng(17);
    MtlParams a = init_mtl(1, cfg, rng);
    std::fill(a.layers[0].wq.data(), a.layers[0].wq.data() + a.layers[0].wq.numel(), 0.0);
    MtlParams b = a;
    Rng other(171);
    b.layers[0].wk = Tensor::randn({4, 4}, other);
    const Tensor x = random_tensor({2, 1, 16}, 51);
    CHECK(mtl_forward(a, x).logits_mi.vec() == mtl_forward(b, x).logits_mi.vec());
    CHECK(mtl_forward(a, x).proj.vec() == mtl_forward(b, x).proj.vec());

    // Control: a generic query matrix makes the keys matter.
    MtlParams c = a;
    Rng qr(172);
    c.layers[0].wq = Tensor::randn({4, 4}, qr);
    MtlParams d = c;
    d.layers[0].wk = b.layers[0].wk;
    CHECK(mtl_forward(c, x).logits_mi.vec() != mtl_forward(d, x).logits_mi.vec());
  }

  SUBCASE("the trunk treats tokens as a set when positions are muted") {
    // Pointwise stem + zeroed positional table: swapping the two token
    // halves of the input permutes the tokens, and attention plus mean
    // pooling are permutation-equivariant, so every output is bit-identical
    // regardless of the attention weights.
    MtlConfig cfg = tiny_cfg();
    cfg.n_tokens = 2;
    cfg.n_heads = 1;
    cfg.stem_kernels = {1, 1};
    Rng rng(18);
    MtlParams params = init_mtl(1, cfg, rng);
    std::fill(params.pos_table.data(), params.pos_table.data() + params.pos_table.numel(), 0.0);

    const Tensor x = random_tensor({1, 1, 8}, 52);
    Tensor swapped = x;
    for (int64_t t = 0; t < 4; ++t) {
      swapped.at(0, 0, t) = x.at(0, 0, t + 4);
      swapped.at(0, 0, t + 4) = x.at(0, 0, t);
    }
    // Equality up to accumulation rounding: fused multiply-adds make the
    // reversed-order sums differ in the last ulp, never more.
    const Tensor la = mtl_forward(params, x).logits_mi;
    const Tensor lb = mtl_forward(params, swapped).logits_mi;
    for (size_t i = 0; i < la.vec().size(); ++i)
      CHECK(la.vec()[i] == doctest::Approx(lb.vec()[i]).epsilon(1e-12));

    // Control: the sinusoidal positional table restores order sensitivity.
    Rng rng2(18);
    const MtlParams with_pos = init_mtl(1, cfg, rng2);
    const Tensor pa = mtl_forward(with_pos, x).logits_mi;
    const Tensor pb = mtl_forward(with_pos, swapped).logits_mi;
    double max_diff = 0.0;
    for (size_t i = 0; i < pa.vec().size(); ++i)
      max_diff = std::max(max_diff, std::abs(pa.vec()[i] - pb.vec()[i]));
    CHECK(max_diff > 1e-9);
  }

  SUBCASE("dropout is reproducible from the generator and off at evaluation") {
    MtlConfig cfg = tiny_cfg();
    Rng rng(23);
    const MtlParams params = init_mtl(1, cfg, rng);
    const Tensor x = random_tensor({2, 1, 16}, 52);
    const auto run = [&](double rate, uint64_t seed) {
      Tape tape;
      const MtlLeaves leaves = mtl_leaves(tape, params);
      Rng drop(seed);
      return mtl_graph(params, leaves, tape.leaf(x), rate, &drop).logits_mi.value();
    };
    CHECK(run(0.5, 3).vec() == run(0.5, 3).vec());
    CHECK(run(0.5, 3).vec() != run(0.5, 4).vec());
    CHECK(run(0.0, 3).vec() == mtl_forward(params, x).logits_mi.vec());
  }

  SUBCASE("config validation") {
    MtlConfig bad = tiny_cfg();
    bad.d_model = 5;  // not divisible by 2 heads
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    MtlConfig bad2 = tiny_cfg();
    bad2.stem_kernels = {4, 3};  // even kernel
    CHECK_THROWS_AS(bad2.validate(), ParameterError);
    MtlConfig bad3 = tiny_cfg();
    bad3.lambda_chaos = -0.1;
    CHECK_THROWS_AS(bad3.validate(), ParameterError);
    MtlConfig bad4 = tiny_cfg();
    bad4.dropout = 1.0;
    CHECK_THROWS_AS(bad4.validate(), ParameterError);
  }
}

TEST_CASE("full model gradients match finite differences at toy dimensions") {
  MtlConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.ffn_dim = 16;
  cfg.n_tokens = 4;
  cfg.stem_filters = {3, 4};
  cfg.stem_kernels = {3, 3};
  cfg.dropout = 0.0;
  const std::vector<int> y_mi{0, 1, 0, 1};
  const std::vector<int> y_ch{1, 0, 0, 1};

  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    MtlParams params = init_mtl(2, cfg, rng);
    jitter_params(params, seed + 800);  // keep rectifier units off their kinks
    const Tensor x = random_tensor({4, 2, 12}, seed + 100, 0.7);

    std::vector<Tensor> inputs;
    for (auto& [name, tensor] : params.trainable()) {
      (void)name;
      inputs.push_back(*tensor);
    }
    const ScalarFn f = [&](Tape& tape, const std::vector<Val>& in) {
      MtlLeaves leaves{in, tape.leaf(params.pos_table)};
      const MtlGraphOut g = mtl_graph(params, leaves, tape.leaf(x));
      return total_loss(g.logits_mi, y_mi, g.logit_chaos, y_ch, g.proj, cfg, nullptr);
    };
    CHECK(grad_check(f, inputs, 1e-6) < 1e-4);
  }
}

TEST_CASE("mtl training behavior") {
  MtlConfig cfg = tiny_cfg();
  cfg.seed = 6;
  const std::vector<Trial> corpus = tiny_corpus(8, 16, 61);

  SUBCASE("zero epochs returns the seeded initialization") {
    MtlConfig c0 = cfg;
    c0.epochs = 0;
    const MtlResult res = mtl_train(corpus, c0);
    CHECK(res.report.epoch_losses.empty());
    Rng rng(c0.seed);
    MtlParams fresh = init_mtl(1, c0, rng);
    auto got = res.params.named();
    auto want = fresh.named();
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i].second->vec() == want[i].second->vec());
  }

  SUBCASE("bit-identical under a shared seed") {
    const MtlResult a = mtl_train(corpus, cfg);
    const MtlResult b = mtl_train(corpus, cfg);
    CHECK(a.report.epoch_losses == b.report.epoch_losses);
    CHECK(a.params.cls2_w.vec() == b.params.cls2_w.vec());
    CHECK(a.params.layers[0].wq.vec() == b.params.layers[0].wq.vec());
  }

  SUBCASE("disabled contrastive weight makes augmentation settings invisible") {
    MtlConfig plain = cfg;
    plain.lambda_con = 0.0;
    MtlConfig muted = plain;
    muted.augment.jitter_sigma = 0.0;
    muted.augment.scale_sigma = 0.0;
    muted.augment.mask_prob = 0.0;
    muted.augment.chdrop_prob = 0.0;
    const MtlResult a = mtl_train(corpus, plain);
    const MtlResult b = mtl_train(corpus, muted);
    CHECK(a.report.epoch_losses == b.report.epoch_losses);
    CHECK(a.params.cls2_w.vec() == b.params.cls2_w.vec());

    // Control: turning the contrastive term on changes the trajectory.
    const MtlResult c = mtl_train(corpus, cfg);
    CHECK(c.report.epoch_losses != a.report.epoch_losses);
  }

  SUBCASE("loss decreases on a separable corpus") {
    MtlConfig c2 = cfg;
    c2.epochs = 12;
    const MtlResult res = mtl_train(tiny_corpus(16, 16, 62), c2);
    REQUIRE(res.report.epoch_losses.size() == 12);
    CHECK(res.report.epoch_losses.back() < res.report.epoch_losses.front());
  }

  SUBCASE("validation") {
    CHECK_THROWS_AS(mtl_train({}, cfg), ParameterError);
    std::vector<Trial> ragged = corpus;
    ragged[1].window = Tensor({1, 24});
    CHECK_THROWS_AS(mtl_train(ragged, cfg), ParameterError);
    MtlConfig narrow = cfg;
    narrow.n_tokens = 32;  // longer than the 16-sample windows
    CHECK_THROWS_AS(mtl_train(corpus, narrow), ParameterError);
  }
}

TEST_CASE("evaluation report") {
  // A model with a dead trunk and biased heads predicts constants: class
  // "imagery" and "chaotic" for every trial, making the confusion matrix a
  // function of the corpus alone.
  MtlConfig cfg = tiny_cfg();
  Rng rng(77);
  MtlParams constant = init_mtl(1, cfg, rng);
  zero_all(constant);
  constant.cls2_b.vec() = {0.0, 5.0};
  constant.chaos2_b.vec() = {3.0};

  const auto make = [&](MiLabel mi, ChaosTag ch) {
    Trial tr;
    tr.window = Tensor::full({1, 16}, 0.3);
    tr.label_mi = mi;
    tr.label_chaos = ch;
    return tr;
  };

  SUBCASE("accuracy and F1 from a known confusion matrix") {
    // 3 imagery + 1 real: TP=3 FP=1 FN=0 -> precision 0.75, recall 1.
    // 2 chaotic + 2 non: TP=2 FP=2 FN=0 -> F1 = 2/3.
    const std::vector<Trial> corpus{
        make(MiLabel::imagery, ChaosTag::chaotic), make(MiLabel::imagery, ChaosTag::chaotic),
        make(MiLabel::imagery, ChaosTag::non_chaotic), make(MiLabel::real, ChaosTag::non_chaotic)};
    const EvalReport rep = evaluate(constant, corpus);
    CHECK(rep.n_trials == 4);
    CHECK(rep.acc_mi == doctest::Approx(0.75).epsilon(1e-15));
    REQUIRE(rep.f1_mi.has_value());
    CHECK(*rep.f1_mi == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
    CHECK(rep.acc_chaos == doctest::Approx(0.5).epsilon(1e-15));
    REQUIRE(rep.f1_chaos.has_value());
    CHECK(*rep.f1_chaos == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }

  SUBCASE("always-wrong predictions score zero accuracy") {
    const std::vector<Trial> corpus{make(MiLabel::real, ChaosTag::non_chaotic),
                                    make(MiLabel::real, ChaosTag::non_chaotic)};
    const EvalReport rep = evaluate(constant, corpus);
    CHECK(rep.acc_mi == 0.0);
    CHECK(rep.acc_chaos == 0.0);
    // Single-class truth: F1 undefined, flagged absent.
    CHECK(!rep.f1_mi.has_value());
    CHECK(!rep.f1_chaos.has_value());
  }

  SUBCASE("all-correct predictions score one") {
    const std::vector<Trial> corpus{make(MiLabel::imagery, ChaosTag::chaotic),
                                    make(MiLabel::imagery, ChaosTag::chaotic)};
    const EvalReport rep = evaluate(constant, corpus);
    CHECK(rep.acc_mi == 1.0);
    CHECK(rep.acc_chaos == 1.0);
    CHECK(!rep.f1_mi.has_value());  // still single-class truth
  }

  SUBCASE("empty corpus is rejected") {
    CHECK_THROWS_AS(evaluate(constant, {}), ParameterError);
  }
}

TEST_CASE("linear probe") {
  SUBCASE("separable embeddings probe to perfect accuracy") {
    Tensor emb({8, 2});
    std::vector<int> labels(8);
    for (int64_t i = 0; i < 8; ++i) {
      const int y = static_cast<int>(i % 2);
      labels[static_cast<size_t>(i)] = y;
      emb.at(i, 0) = y == 0 ? -1.0 : 1.0;
      emb.at(i, 1) = 0.05 * static_cast<double>(i);
    }
    CHECK(linear_probe(emb, labels, 0.05, 300) == 1.0);
  }

  SUBCASE("uninformative embeddings probe to chance") {
    // Identical embeddings for every sample: the probe must fall back to a
    // constant prediction, and a balanced holdout scores exactly one half.
    const Tensor emb = Tensor::full({8, 3}, 0.4);
    const std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1};
    CHECK(linear_probe(emb, labels, 0.05, 50) == 0.5);
  }

  SUBCASE("degenerate label sets are rejected") {
    const Tensor emb = Tensor::full({4, 2}, 1.0);
    CHECK_THROWS_AS(linear_probe(emb, {0, 0, 0, 0}, 0.1, 10), DegenerateError);
    CHECK_THROWS_AS(linear_probe(emb, {0, 0, 0, 1}, 0.1, 10), DegenerateError);
    CHECK_THROWS_AS(linear_probe(emb, {0, 1}, 0.1, 10), ContractError);  // count mismatch
    CHECK_THROWS_AS(linear_probe(emb, {0, 1, 0, 1}, 0.0, 10), ParameterError);
  }
}
