#include "neurodyn/multitask.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "neurodyn/optim.hpp"

namespace neurodyn {

namespace {

// Stream salts so init / batch order / augmentation / dropout consume
// independent deterministic sequences derived from one master seed.
constexpr uint64_t kBatchSalt = 0x9e3779b97f4a7c15ULL;
constexpr uint64_t kAugmentSalt = 0xbf58476d1ce4e5b9ULL;
constexpr uint64_t kDropoutSalt = 0x94d049bb133111ebULL;

// Similarities this far below zero vanish exactly under exp().
constexpr double kSelfMask = -1e4;

void fisher_yates(std::vector<size_t>& order, Rng& rng) {
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_index(i))]);
}

// Row-wise log-sum-exp of a 2D node, shifted by the detached row maximum so
// the result is exact even for widely spread scores.
Val lse_rows(Val scores) {
  Tape& tape = *scores.tape;
  const Tensor& s = scores.value();
  const int64_t r = s.dim(0), c = s.dim(1);
  Tensor shift({r, 1});
  for (int64_t i = 0; i < r; ++i) {
    double mx = s.at(i, 0);
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, s.at(i, j));
    shift.at(i, 0) = mx;
  }
  Tensor shift_flat({r}, shift.vec());
  Val centered = sub(scores, tape.leaf(shift));
  return add(log(sum(exp(centered), 1)), tape.leaf(shift_flat));
}

}  // namespace

void AugmentConfig::validate() const {
  const double probs[] = {mask_prob, chdrop_p, chdrop_prob};
  for (double p : probs)
    if (p < 0.0 || p > 1.0) throw ParameterError("augmentation probabilities must be in [0,1]");
  if (jitter_sigma < 0.0 || scale_sigma < 0.0)
    throw ParameterError("augmentation sigmas must be non-negative");
  if (mask_frac < 0.0 || mask_frac > 1.0)
    throw ParameterError("mask fraction must be in [0,1]");
}

void MtlConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || ffn_dim < 1 || n_tokens < 1)
    throw ParameterError("model dimensions must be positive");
  if (d_model % n_heads != 0) throw ParameterError("d_model must be divisible by n_heads");
  for (int64_t f : stem_filters)
    if (f < 1) throw ParameterError("stem filter counts must be positive");
  for (int64_t k : stem_kernels)
    if (k < 1 || k % 2 == 0) throw ParameterError("stem kernels must be odd and positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ParameterError("dropout must be in [0,1)");
  if (lambda_cls < 0.0 || lambda_chaos < 0.0 || lambda_con < 0.0)
    throw ParameterError("loss weights must be non-negative");
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
  if (!(grad_clip > 0.0)) throw ParameterError("gradient clip must be positive");
  if (batch < 1) throw ParameterError("batch size must be positive");
  if (epochs < 0) throw ParameterError("epochs must be non-negative");
  augment.validate();
}

MtlConfig MtlConfig::toy() {
  MtlConfig cfg;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.ffn_dim = 64;
  return cfg;
}

std::vector<std::pair<std::string, Tensor*>> MtlParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("stem1_w", &stem1_w);
  out.emplace_back("stem1_b", &stem1_b);
  out.emplace_back("stem2_w", &stem2_w);
  out.emplace_back("stem2_b", &stem2_b);
  out.emplace_back("tok_w", &tok_w);
  out.emplace_back("tok_b", &tok_b);
  out.emplace_back("pos_table", &pos_table);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + "_";
    Layer& ly = layers[l];
    out.emplace_back(p + "wq", &ly.wq);
    out.emplace_back(p + "wk", &ly.wk);
    out.emplace_back(p + "wv", &ly.wv);
    out.emplace_back(p + "wo", &ly.wo);
    out.emplace_back(p + "bo", &ly.bo);
    out.emplace_back(p + "ffn1_w", &ly.ffn1_w);
    out.emplace_back(p + "ffn1_b", &ly.ffn1_b);
    out.emplace_back(p + "ffn2_w", &ly.ffn2_w);
    out.emplace_back(p + "ffn2_b", &ly.ffn2_b);
    out.emplace_back(p + "ln1_scale", &ly.ln1_scale);
    out.emplace_back(p + "ln1_offset", &ly.ln1_offset);
    out.emplace_back(p + "ln2_scale", &ly.ln2_scale);
    out.emplace_back(p + "ln2_offset", &ly.ln2_offset);
  }
  out.emplace_back("cls1_w", &cls1_w);
  out.emplace_back("cls1_b", &cls1_b);
  out.emplace_back("cls2_w", &cls2_w);
  out.emplace_back("cls2_b", &cls2_b);
  out.emplace_back("chaos1_w", &chaos1_w);
  out.emplace_back("chaos1_b", &chaos1_b);
  out.emplace_back("chaos2_w", &chaos2_w);
  out.emplace_back("chaos2_b", &chaos2_b);
  out.emplace_back("proj1_w", &proj1_w);
  out.emplace_back("proj1_b", &proj1_b);
  out.emplace_back("proj2_w", &proj2_w);
  out.emplace_back("proj2_b", &proj2_b);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> MtlParams::named() const {
  auto mutable_list = const_cast<MtlParams*>(this)->named();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mutable_list.size());
  for (auto& [name, t] : mutable_list) out.emplace_back(name, t);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> MtlParams::trainable() {
  auto all = named();
  std::vector<std::pair<std::string, Tensor*>> out;
  out.reserve(all.size() - 1);
  for (auto& [name, t] : all)
    if (name != "pos_table") out.emplace_back(name, t);
  return out;
}

MtlParams init_mtl(int64_t in_channels, const MtlConfig& cfg, Rng& rng) {
  cfg.validate();
  if (in_channels < 1) throw ParameterError("need at least one input channel");
  MtlParams p;
  p.in_channels = in_channels;
  p.d_model = cfg.d_model;
  p.n_heads = cfg.n_heads;
  p.n_layers = cfg.n_layers;
  p.ffn_dim = cfg.ffn_dim;
  p.n_tokens = cfg.n_tokens;

  const int64_t f1 = cfg.stem_filters[0], f2 = cfg.stem_filters[1];
  const int64_t k1 = cfg.stem_kernels[0], k2 = cfg.stem_kernels[1];
  const int64_t d = cfg.d_model;
  const auto w_init = [&rng](std::vector<int64_t> dims, double fan_in) {
    return Tensor::randn(std::move(dims), rng, 1.0 / std::sqrt(fan_in));
  };

  p.stem1_w = w_init({f1, in_channels, k1}, static_cast<double>(in_channels * k1));
  p.stem1_b = Tensor({f1, 1});
  p.stem2_w = w_init({f2, f1, k2}, static_cast<double>(f1 * k2));
  p.stem2_b = Tensor({f2, 1});
  p.tok_w = w_init({f2, d}, static_cast<double>(f2));
  p.tok_b = Tensor({d});

  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& ly : p.layers) {
    ly.wq = w_init({d, d}, static_cast<double>(d));
    ly.wk = w_init({d, d}, static_cast<double>(d));
    ly.wv = w_init({d, d}, static_cast<double>(d));
    ly.wo = w_init({d, d}, static_cast<double>(d));
    ly.bo = Tensor({d});
    ly.ffn1_w = w_init({d, cfg.ffn_dim}, static_cast<double>(d));
    ly.ffn1_b = Tensor({cfg.ffn_dim});
    ly.ffn2_w = w_init({cfg.ffn_dim, d}, static_cast<double>(cfg.ffn_dim));
    ly.ffn2_b = Tensor({d});
    ly.ln1_scale = Tensor::full({d}, 1.0);
    ly.ln1_offset = Tensor({d});
    ly.ln2_scale = Tensor::full({d}, 1.0);
    ly.ln2_offset = Tensor({d});
  }

  p.cls1_w = w_init({d, d}, static_cast<double>(d));
  p.cls1_b = Tensor({d});
  p.cls2_w = w_init({d, 2}, static_cast<double>(d));
  p.cls2_b = Tensor({2});
  p.chaos1_w = w_init({d, d}, static_cast<double>(d));
  p.chaos1_b = Tensor({d});
  p.chaos2_w = w_init({d, 1}, static_cast<double>(d));
  p.chaos2_b = Tensor({1});
  p.proj1_w = w_init({d, d}, static_cast<double>(d));
  p.proj1_b = Tensor({d});
  p.proj2_w = w_init({d, d}, static_cast<double>(d));
  p.proj2_b = Tensor({d});

  p.pos_table = Tensor({cfg.n_tokens, d});
  for (int64_t pos = 0; pos < cfg.n_tokens; ++pos)
    for (int64_t k = 0; k < d; ++k) {
      const double expo = static_cast<double>(k - (k % 2)) / static_cast<double>(d);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      p.pos_table.at(pos, k) = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return p;
}

Tensor augment(const Tensor& window, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (window.rank() != 2) throw DimensionError("augment expects a (C, T) window");
  const int64_t c = window.dim(0), t = window.dim(1);
  Tensor v = window;
  if (cfg.jitter_sigma > 0.0)
    for (double& x : v.vec()) x += rng.gaussian(0.0, cfg.jitter_sigma);
  if (cfg.scale_sigma > 0.0)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double f = 1.0 + rng.gaussian(0.0, cfg.scale_sigma);
      double* row = v.data() + ch * t;
      for (int64_t i = 0; i < t; ++i) row[i] *= f;
    }
  if (!cfg.light_mode) {
    if (cfg.mask_prob > 0.0) {
      const int64_t len = static_cast<int64_t>(std::floor(cfg.mask_frac * static_cast<double>(t)));
      if (rng.uniform() < cfg.mask_prob && len >= 1) {
        const int64_t start =
            static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(t - len + 1)));
        for (int64_t ch = 0; ch < c; ++ch)
          std::fill_n(v.data() + ch * t + start, len, 0.0);
      }
    }
    if (cfg.chdrop_prob > 0.0 && rng.uniform() < cfg.chdrop_prob)
      for (int64_t ch = 0; ch < c; ++ch)
        if (rng.uniform() < cfg.chdrop_p) std::fill_n(v.data() + ch * t, t, 0.0);
  }
  return v;
}

Tensor augment(const Trial& trial, const AugmentConfig& cfg, Rng& rng) {
  return augment(trial.window, cfg, rng);
}

Val nt_xent(Val z, double tau) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  Tape& tape = *z.tape;
  const Tensor& zv = z.value();
  if (zv.rank() != 2) throw DimensionError("embeddings must be 2D");
  const int64_t rows = zv.dim(0);
  if (rows < 2 || rows % 2 != 0) throw DimensionError("embeddings must come in view pairs");

  Val zn = l2_normalize(z, 1);
  Val sim = scalar_mul(matmul(zn, transpose(zn)), 1.0 / tau);

  Tensor self_mask({rows, rows});
  Tensor pair_mask({rows, rows});
  for (int64_t i = 0; i < rows; ++i) {
    self_mask.at(i, i) = kSelfMask;
    pair_mask.at(i, i ^ 1) = 1.0;
  }
  Val masked = add(sim, tape.leaf(self_mask));
  Val positives = sum(mul(masked, tape.leaf(pair_mask)), 1);
  return mean(sub(lse_rows(masked), positives));
}

MtlLeaves mtl_leaves(Tape& tape, const MtlParams& params) {
  MtlLeaves l;
  auto trainable = const_cast<MtlParams&>(params).trainable();
  l.vals.reserve(trainable.size());
  for (auto& [name, t] : trainable) l.vals.push_back(tape.leaf(*t));
  l.pos = tape.leaf(params.pos_table);
  return l;
}

namespace {

struct LeafCursor {
  const std::vector<Val>& vals;
  size_t i = 0;
  Val next() {
    if (i >= vals.size()) throw ContractError("parameter leaf list too short");
    return vals[i++];
  }
};

}  // namespace

MtlGraphOut mtl_graph(const MtlParams& params, const MtlLeaves& leaves, Val x,
                      double dropout_rate, Rng* dropout_rng, bool with_heads, bool with_proj) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw DimensionError("expected a (B, C, T) batch");
  if (xv.dim(1) != params.in_channels)
    throw ContractError("batch channel count does not match the model");
  const int64_t t_len = xv.dim(2);
  const int64_t n_tok = params.n_tokens;
  if (t_len < n_tok) throw ContractError("window shorter than the token count");

  LeafCursor c{leaves.vals};
  const Val s1w = c.next(), s1b = c.next(), s2w = c.next(), s2b = c.next();
  const Val tw = c.next(), tb = c.next();

  const bool train_mode = dropout_rate > 0.0 && dropout_rng != nullptr;
  const auto dropout = [&](Val v) {
    if (!train_mode) return v;
    Tensor mask(v.value().dims());
    const double keep_scale = 1.0 / (1.0 - dropout_rate);
    for (double& m : mask.vec())
      m = dropout_rng->uniform() >= dropout_rate ? keep_scale : 0.0;
    return mul(v, tape.leaf(mask));
  };

  const int pad1 = static_cast<int>((params.stem1_w.dim(2) - 1) / 2);
  const int pad2 = static_cast<int>((params.stem2_w.dim(2) - 1) / 2);
  Val h = relu(add(conv1d(x, s1w, pad1), s1b));
  h = relu(add(conv1d(h, s2w, pad2), s2b));

  // Adaptive average pooling to n_tokens bins, as a constant (T, n_tok) map.
  Tensor pool({t_len, n_tok});
  for (int64_t i = 0; i < n_tok; ++i) {
    const int64_t lo = i * t_len / n_tok;
    const int64_t hi = (i + 1) * t_len / n_tok;
    const double w = 1.0 / static_cast<double>(hi - lo);
    for (int64_t t = lo; t < hi; ++t) pool.at(t, i) = w;
  }
  Val tok = transpose(matmul(h, tape.leaf(pool)));  // (B, n_tok, f2)
  tok = add(add(matmul(tok, tw), tb), leaves.pos);  // (B, n_tok, d)

  const int64_t dk = params.d_model / params.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int64_t l = 0; l < params.n_layers; ++l) {
    const Val wq = c.next(), wk = c.next(), wv = c.next(), wo = c.next(), bo = c.next();
    const Val f1w = c.next(), f1b = c.next(), f2w = c.next(), f2b = c.next();
    const Val ln1s = c.next(), ln1o = c.next(), ln2s = c.next(), ln2o = c.next();

    const Val q = matmul(tok, wq), k = matmul(tok, wk), v = matmul(tok, wv);
    std::vector<Val> heads;
    heads.reserve(static_cast<size_t>(params.n_heads));
    for (int64_t hd = 0; hd < params.n_heads; ++hd) {
      const Val qh = slice(q, 2, hd * dk, (hd + 1) * dk);
      const Val kh = slice(k, 2, hd * dk, (hd + 1) * dk);
      const Val vh = slice(v, 2, hd * dk, (hd + 1) * dk);
      const Val attn = softmax(scalar_mul(matmul(qh, transpose(kh)), scale), 2);
      heads.push_back(matmul(attn, vh));
    }
    Val o = dropout(add(matmul(concat(heads, 2), wo), bo));
    tok = add(mul(layer_norm(add(tok, o), 2), ln1s), ln1o);

    Val f = relu(add(matmul(tok, f1w), f1b));
    f = dropout(add(matmul(f, f2w), f2b));
    tok = add(mul(layer_norm(add(tok, f), 2), ln2s), ln2o);
  }

  // Consume head leaves unconditionally so the cursor layout is fixed.
  const Val c1w = c.next(), c1b = c.next(), c2w = c.next(), c2b = c.next();
  const Val h1w = c.next(), h1b = c.next(), h2w = c.next(), h2b = c.next();
  const Val p1w = c.next(), p1b = c.next(), p2w = c.next(), p2b = c.next();

  MtlGraphOut out;
  out.pooled = mean(tok, 1);  // (B, d)
  if (with_heads) {
    out.logits_mi = add(matmul(relu(add(matmul(out.pooled, c1w), c1b)), c2w), c2b);
    out.logit_chaos = add(matmul(relu(add(matmul(out.pooled, h1w), h1b)), h2w), h2b);
  }
  if (with_proj)
    out.proj =
        l2_normalize(add(matmul(relu(add(matmul(out.pooled, p1w), p1b)), p2w), p2b), 1);
  return out;
}

namespace {

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 3) return x;
  if (x.rank() == 2) return Tensor({1, x.dim(0), x.dim(1)}, x.vec());
  throw DimensionError("expected a (C, T) window or (B, C, T) batch");
}

}  // namespace

MtlOutputs mtl_forward(const MtlParams& params, const Tensor& batch) {
  Tape tape;
  const MtlLeaves leaves = mtl_leaves(tape, params);
  const MtlGraphOut g = mtl_graph(params, leaves, tape.leaf(as_batch(batch)));
  return {g.logits_mi.value(), g.logit_chaos.value(), g.proj.value()};
}

Tensor mtl_embed(const MtlParams& params, const Tensor& batch) {
  Tape tape;
  const MtlLeaves leaves = mtl_leaves(tape, params);
  return mtl_graph(params, leaves, tape.leaf(as_batch(batch)), 0.0, nullptr, false, false)
      .pooled.value();
}

Val cross_entropy(Val logits, const std::vector<int>& labels) {
  Tape& tape = *logits.tape;
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) throw DimensionError("logits must be (B, K)");
  const int64_t b = lv.dim(0), k = lv.dim(1);
  if (static_cast<int64_t>(labels.size()) != b)
    throw ContractError("label count does not match batch");
  Tensor onehot({b, k});
  for (int64_t i = 0; i < b; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= k) throw ParameterError("class label out of range");
    onehot.at(i, y) = 1.0;
  }
  const Val correct = sum(mul(logits, tape.leaf(onehot)), 1);
  return mean(sub(lse_rows(logits), correct));
}

Val binary_cross_entropy(Val logits, const std::vector<int>& labels) {
  Tape& tape = *logits.tape;
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(1) != 1) throw DimensionError("logits must be (B, 1)");
  const int64_t b = lv.dim(0);
  if (static_cast<int64_t>(labels.size()) != b)
    throw ContractError("label count does not match batch");
  Tensor y({b, 1});
  for (int64_t i = 0; i < b; ++i) {
    const int v = labels[static_cast<size_t>(i)];
    if (v != 0 && v != 1) throw ParameterError("binary label must be 0 or 1");
    y.at(i, 0) = static_cast<double>(v);
  }
  const Val zero = tape.leaf(Tensor::full({1}, 0.0));
  const Val one = tape.leaf(Tensor::full({1}, 1.0));
  Val hinge = sub(max(logits, zero), mul(logits, tape.leaf(y)));
  Val softplus = log(add(one, exp(scalar_mul(abs(logits), -1.0))));
  return mean(add(hinge, softplus));
}

Val total_loss(Val logits_mi, const std::vector<int>& labels_mi, Val logit_chaos,
               const std::vector<int>& labels_chaos, std::optional<Val> proj_pairs,
               const MtlConfig& cfg, LossParts* parts) {
  const Val ce = cross_entropy(logits_mi, labels_mi);
  const Val bce = binary_cross_entropy(logit_chaos, labels_chaos);
  Val total = add(scalar_mul(ce, cfg.lambda_cls), scalar_mul(bce, cfg.lambda_chaos));
  double con_value = 0.0;
  if (cfg.lambda_con > 0.0) {
    if (!proj_pairs) throw ContractError("contrastive weight set but no projection pairs given");
    const Val con = nt_xent(*proj_pairs, cfg.tau);
    con_value = con.value().item();
    total = add(total, scalar_mul(con, cfg.lambda_con));
  }
  if (parts) {
    parts->cls = ce.value().item();
    parts->chaos = bce.value().item();
    parts->contrastive = con_value;
    parts->total = total.value().item();
  }
  return total;
}

MtlResult mtl_train(const std::vector<Trial>& corpus, const MtlConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw ParameterError("empty corpus");
  const int64_t c = corpus.front().window.dim(0);
  const int64_t t_len = corpus.front().window.dim(1);
  for (const Trial& tr : corpus) {
    if (tr.window.rank() != 2) throw DimensionError("trial windows must be (C, T)");
    if (tr.window.dim(0) != c || tr.window.dim(1) != t_len)
      throw ParameterError("trial windows must share dimensions");
  }
  if (t_len < cfg.n_tokens) throw ParameterError("windows shorter than the token count");

  const auto t_start = std::chrono::steady_clock::now();
  Rng init_rng(cfg.seed);
  Rng batch_rng(cfg.seed ^ kBatchSalt);
  Rng aug_rng(cfg.seed ^ kAugmentSalt);
  Rng drop_rng(cfg.seed ^ kDropoutSalt);

  MtlParams params = init_mtl(c, cfg, init_rng);
  auto trainable = params.trainable();
  std::vector<AdamWState> states;
  states.reserve(trainable.size());
  for (auto& [name, t] : trainable) states.push_back(make_adamw_state(*t));
  AdamWConfig opt;
  opt.lr = cfg.lr;

  const bool contrastive = cfg.lambda_con > 0.0;
  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainReport report;
  report.seed = cfg.seed;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    fisher_yates(order, batch_rng);
    double epoch_loss = 0.0;
    int64_t n_batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch)) {
      const size_t b_end = std::min(order.size(), pos + static_cast<size_t>(cfg.batch));
      const int64_t b = static_cast<int64_t>(b_end - pos);

      Tensor xb({b, c, t_len});
      std::vector<int> labels_mi(static_cast<size_t>(b)), labels_chaos(static_cast<size_t>(b));
      Tensor v1({b, c, t_len}), v2({b, c, t_len});
      for (int64_t i = 0; i < b; ++i) {
        const Trial& tr = corpus[order[pos + static_cast<size_t>(i)]];
        std::copy(tr.window.vec().begin(), tr.window.vec().end(), xb.data() + i * c * t_len);
        labels_mi[static_cast<size_t>(i)] = tr.label_mi == MiLabel::imagery ? 1 : 0;
        labels_chaos[static_cast<size_t>(i)] = tr.label_chaos == ChaosTag::chaotic ? 1 : 0;
        if (contrastive) {
          const Tensor a1 = augment(tr.window, cfg.augment, aug_rng);
          const Tensor a2 = augment(tr.window, cfg.augment, aug_rng);
          std::copy(a1.vec().begin(), a1.vec().end(), v1.data() + i * c * t_len);
          std::copy(a2.vec().begin(), a2.vec().end(), v2.data() + i * c * t_len);
        }
      }

      Tape tape;
      const MtlLeaves leaves = mtl_leaves(tape, params);
      const MtlGraphOut sup = mtl_graph(params, leaves, tape.leaf(xb), cfg.dropout, &drop_rng,
                                        /*with_heads=*/true, /*with_proj=*/false);
      std::optional<Val> pairs;
      if (contrastive) {
        const MtlGraphOut g1 = mtl_graph(params, leaves, tape.leaf(v1), cfg.dropout, &drop_rng,
                                         /*with_heads=*/false, /*with_proj=*/true);
        const MtlGraphOut g2 = mtl_graph(params, leaves, tape.leaf(v2), cfg.dropout, &drop_rng,
                                         /*with_heads=*/false, /*with_proj=*/true);
        // Interleave the two view batches into pair order (2i, 2i+1).
        Tensor perm({2 * b, 2 * b});
        for (int64_t i = 0; i < b; ++i) {
          perm.at(2 * i, i) = 1.0;
          perm.at(2 * i + 1, b + i) = 1.0;
        }
        pairs = matmul(tape.leaf(perm), concat({g1.proj, g2.proj}, 0));
      }

      LossParts parts;
      std::vector<Tensor> grads;
      try {
        const Val loss = total_loss(sup.logits_mi, labels_mi, sup.logit_chaos, labels_chaos,
                                    pairs, cfg, &parts);
        if (!std::isfinite(parts.total))
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
        grads = tape.backward(loss);
      } catch (const DomainError&) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch));
      }

      std::vector<Tensor*> grad_ptrs;
      grad_ptrs.reserve(leaves.vals.size());
      for (const Val& lv : leaves.vals)
        grad_ptrs.push_back(&grads[static_cast<size_t>(lv.id)]);
      clip_global_norm(grad_ptrs, cfg.grad_clip);
      for (size_t i = 0; i < trainable.size(); ++i)
        adamw_step(*trainable[i].second, *grad_ptrs[i], states[i], opt);

      epoch_loss += parts.total;
      ++n_batches;
    }
    report.epoch_losses.push_back(epoch_loss / static_cast<double>(n_batches));
  }

  report.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(params), std::move(report)};
}

namespace {

std::optional<double> f1_or_absent(int64_t tp, int64_t fp, int64_t fn, bool single_class) {
  if (single_class) return std::nullopt;
  return 2.0 * static_cast<double>(tp) /
         static_cast<double>(2 * tp + fp + fn);
}

}  // namespace

EvalReport evaluate(const MtlParams& params, const std::vector<Trial>& corpus) {
  if (corpus.empty()) throw ParameterError("empty corpus");
  const int64_t c = corpus.front().window.dim(0);
  const int64_t t_len = corpus.front().window.dim(1);

  EvalReport rep;
  rep.n_trials = static_cast<int64_t>(corpus.size());
  int64_t mi_correct = 0, chaos_correct = 0;
  int64_t mi_tp = 0, mi_fp = 0, mi_fn = 0;
  int64_t ch_tp = 0, ch_fp = 0, ch_fn = 0;
  bool mi_pos_seen = false, mi_neg_seen = false, ch_pos_seen = false, ch_neg_seen = false;

  constexpr size_t kChunk = 64;
  for (size_t pos = 0; pos < corpus.size(); pos += kChunk) {
    const size_t e = std::min(corpus.size(), pos + kChunk);
    const int64_t b = static_cast<int64_t>(e - pos);
    Tensor xb({b, c, t_len});
    for (int64_t i = 0; i < b; ++i) {
      const Trial& tr = corpus[pos + static_cast<size_t>(i)];
      if (tr.window.dim(0) != c || tr.window.dim(1) != t_len)
        throw ParameterError("trial windows must share dimensions");
      std::copy(tr.window.vec().begin(), tr.window.vec().end(), xb.data() + i * c * t_len);
    }
    const MtlOutputs out = mtl_forward(params, xb);
    for (int64_t i = 0; i < b; ++i) {
      const Trial& tr = corpus[pos + static_cast<size_t>(i)];
      const bool truth_mi = tr.label_mi == MiLabel::imagery;
      const bool pred_mi = out.logits_mi.at(i, 1) > out.logits_mi.at(i, 0);
      (truth_mi ? mi_pos_seen : mi_neg_seen) = true;
      if (pred_mi == truth_mi) ++mi_correct;
      if (pred_mi && truth_mi) ++mi_tp;
      if (pred_mi && !truth_mi) ++mi_fp;
      if (!pred_mi && truth_mi) ++mi_fn;

      const bool truth_ch = tr.label_chaos == ChaosTag::chaotic;
      const bool pred_ch = out.logit_chaos.at(i, 0) > 0.0;
      (truth_ch ? ch_pos_seen : ch_neg_seen) = true;
      if (pred_ch == truth_ch) ++chaos_correct;
      if (pred_ch && truth_ch) ++ch_tp;
      if (pred_ch && !truth_ch) ++ch_fp;
      if (!pred_ch && truth_ch) ++ch_fn;
    }
  }

  const double n = static_cast<double>(corpus.size());
  rep.acc_mi = static_cast<double>(mi_correct) / n;
  rep.acc_chaos = static_cast<double>(chaos_correct) / n;
  rep.f1_mi = f1_or_absent(mi_tp, mi_fp, mi_fn, !(mi_pos_seen && mi_neg_seen));
  rep.f1_chaos = f1_or_absent(ch_tp, ch_fp, ch_fn, !(ch_pos_seen && ch_neg_seen));
  return rep;
}

double linear_probe(const Tensor& embeddings, const std::vector<int>& labels, double lr,
                    int64_t epochs) {
  if (embeddings.rank() != 2) throw DimensionError("embeddings must be (N, D)");
  const int64_t n = embeddings.dim(0), d = embeddings.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ContractError("label count does not match embeddings");
  if (!(lr > 0.0) || epochs < 1) throw ParameterError("probe needs lr > 0 and epochs >= 1");

  int n_classes = 0;
  for (int y : labels) {
    if (y < 0) throw ParameterError("labels must be non-negative");
    n_classes = std::max(n_classes, y + 1);
  }
  if (n_classes < 2) throw DegenerateError("probe needs at least two classes");

  // Deterministic stratified half split: within each class, even-indexed
  // occurrences train, odd-indexed hold out.
  std::vector<int64_t> class_seen(static_cast<size_t>(n_classes), 0);
  std::vector<size_t> train_idx, hold_idx;
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    (class_seen[static_cast<size_t>(y)]++ % 2 == 0 ? train_idx : hold_idx).push_back(i);
  }
  for (int64_t seen : class_seen)
    if (seen < 2) throw DegenerateError("every class needs at least two samples");

  const auto gather = [&](const std::vector<size_t>& idx, std::vector<int>& ys) {
    Tensor x({static_cast<int64_t>(idx.size()), d});
    ys.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      std::copy(embeddings.data() + static_cast<int64_t>(idx[i]) * d,
                embeddings.data() + static_cast<int64_t>(idx[i] + 1) * d,
                x.data() + static_cast<int64_t>(i) * d);
      ys[i] = labels[idx[i]];
    }
    return x;
  };
  std::vector<int> train_y, hold_y;
  const Tensor train_x = gather(train_idx, train_y);
  const Tensor hold_x = gather(hold_idx, hold_y);

  Tensor w({d, n_classes}), bias({n_classes});
  AdamWState w_state = make_adamw_state(w), b_state = make_adamw_state(bias);
  AdamWConfig opt;
  opt.lr = lr;
  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    Tape tape;
    const Val wv = tape.leaf(w), bv = tape.leaf(bias);
    const Val loss = cross_entropy(add(matmul(tape.leaf(train_x), wv), bv), train_y);
    const std::vector<Tensor> grads = tape.backward(loss);
    adamw_step(w, grads[static_cast<size_t>(wv.id)], w_state, opt);
    adamw_step(bias, grads[static_cast<size_t>(bv.id)], b_state, opt);
  }

  int64_t correct = 0;
  for (size_t i = 0; i < hold_idx.size(); ++i) {
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n_classes; ++k) {
      double s = bias[k];
      for (int64_t j = 0; j < d; ++j) s += hold_x.at(static_cast<int64_t>(i), j) * w.at(j, k);
      if (s > best_score) {
        best_score = s;
        best = k;
      }
    }
    if (best == hold_y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(hold_idx.size());
}

}  // namespace neurodyn
