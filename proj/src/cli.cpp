#include "neurodyn/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "neurodyn/chaos_tag.hpp"
#include "neurodyn/denoise.hpp"
#include "neurodyn/io.hpp"
#include "neurodyn/lyapunov.hpp"
#include "neurodyn/multitask.hpp"
#include "neurodyn/plrnn.hpp"
#include "neurodyn/signal.hpp"
#include "neurodyn/synth.hpp"

namespace neurodyn {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

uint64_t resolve_seed(const std::optional<uint64_t>& flag, const json& cfg) {
  if (flag) return *flag;
  if (cfg.contains("seed")) return cfg.at("seed").get<uint64_t>();
  if (const char* env = std::getenv("NEURODYN_SEED")) {
    try {
      size_t used = 0;
      const uint64_t v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ParameterError("NEURODYN_SEED is not an unsigned integer");
  }
  return 0;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json cfg = json::parse(read_file_bytes(path), nullptr, false);
  if (cfg.is_discarded() || !cfg.is_object())
    throw IoError("config is not a JSON object: " + path);
  return cfg;
}

// Rejects unknown keys so config typos fail loudly instead of silently using
// defaults.
void check_keys(const json& cfg, const std::vector<std::string>& allowed,
                const std::string& what) {
  for (const auto& [key, value] : cfg.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ParameterError("unknown " + what + " config key: " + key);
  }
}

template <class T>
void maybe(const json& cfg, const char* key, T& out) {
  if (cfg.contains(key)) out = cfg.at(key).get<T>();
}

// Reports print to stdout when no path is given.
void emit_report(const std::string& path, json report) {
  report["version"] = NEURODYN_VERSION;
  const std::string text = report.dump(2) + "\n";
  if (path.empty())
    std::cout << text;
  else
    atomic_write_bytes(path, text);
}

Recording tensor_recording(const Tensor& window, double rate_hz) {
  Recording rec;
  rec.sample_rate_hz = rate_hz;
  rec.samples = window.dim(1);
  rec.data = window.vec();
  for (int64_t c = 0; c < window.dim(0); ++c) rec.channel_names.push_back("ch" + std::to_string(c));
  return rec;
}

Tensor recording_tensor(const Recording& rec) {
  return Tensor({rec.channels(), rec.samples}, rec.data);
}

MiLabel mi_from_name(const std::string& name) {
  if (name == "real") return MiLabel::real;
  if (name == "imagery") return MiLabel::imagery;
  throw ParameterError("unknown class label: " + name);
}

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
  std::string kind = "sine";
  std::string out;
  std::string corpus_dir;
  bool csv = false;
  int64_t channels = 1;
  int64_t samples = 320;
  double rate = 160.0;
  std::vector<double> freqs;
  std::vector<double> amps;
  double noise = 0.0;
  double logistic_r = 4.0;
  double henon_a = 1.4;
  double henon_b = 0.3;
  int64_t n_per_class = 20;
  int64_t window_len = 320;
  std::optional<uint64_t> seed;
};

void write_corpus(const std::string& dir, const std::vector<Trial>& trials, double rate_hz,
                  json echo) {
  fs::create_directories(dir);
  json index;
  index["trials"] = json::array();
  char name[32];
  for (size_t i = 0; i < trials.size(); ++i) {
    std::snprintf(name, sizeof name, "trial_%04zu.ndts", i);
    write_recording((fs::path(dir) / name).string(), tensor_recording(trials[i].window, rate_hz));
    json entry;
    entry["path"] = name;
    entry["label_mi"] = mi_label_name(trials[i].label_mi);
    entry["label_chaos"] = tag_name(trials[i].label_chaos);
    index["trials"].push_back(entry);
  }
  index["config"] = std::move(echo);
  atomic_write_bytes((fs::path(dir) / "corpus.json").string(), index.dump(2) + "\n");
}

std::vector<Trial> load_corpus(const std::string& index_path) {
  json index = json::parse(read_file_bytes(index_path), nullptr, false);
  if (index.is_discarded() || !index.contains("trials"))
    throw IoError("not a corpus index: " + index_path);
  const fs::path base = fs::path(index_path).parent_path();
  std::vector<Trial> trials;
  for (const json& entry : index.at("trials")) {
    Trial t;
    const Recording rec = read_recording((base / entry.at("path").get<std::string>()).string());
    t.window = recording_tensor(rec);
    t.label_mi = mi_from_name(entry.at("label_mi").get<std::string>());
    t.label_chaos = tag_from_name(entry.at("label_chaos").get<std::string>());
    trials.push_back(std::move(t));
  }
  if (trials.empty()) throw IoError("corpus index lists no trials: " + index_path);
  return trials;
}

int run_synth(const SynthArgs& a) {
  if (a.out.empty() == a.corpus_dir.empty()) {
    std::cerr << "error: give exactly one of --out or --corpus-dir\n";
    return 2;
  }
  const uint64_t seed = resolve_seed(a.seed, json::object());
  if (!a.corpus_dir.empty()) {
    const std::vector<Trial> trials = gen_corpus(a.n_per_class, {a.window_len, 0.0}, seed);
    json echo;
    echo["n_per_class"] = a.n_per_class;
    echo["window_len"] = a.window_len;
    echo["seed"] = seed;
    echo["sample_rate_hz"] = 160.0;
    write_corpus(a.corpus_dir, trials, 160.0, std::move(echo));
    return 0;
  }
  SynthSpec spec;
  spec.kind = synth_kind_from_name(a.kind);
  spec.channels = a.channels;
  spec.duration_samples = a.samples;
  spec.sample_rate_hz = a.rate;
  if (!a.freqs.empty()) spec.frequencies_hz = a.freqs;
  if (!a.amps.empty()) spec.amplitudes = a.amps;
  spec.noise_sigma = a.noise;
  spec.logistic_r = a.logistic_r;
  spec.henon_a = a.henon_a;
  spec.henon_b = a.henon_b;
  spec.seed = seed;
  const Recording rec = gen_signal(spec);
  if (a.csv)
    write_csv(a.out, rec);
  else
    write_recording(a.out, rec);
  return 0;
}

// -------------------------------------------------------------- denoise ----

struct DaeCliConfig {
  DaeConfig dae;
  int64_t window_len = 320;
  double window_overlap = 0.5;
};

DaeCliConfig dae_config_from(const json& cfg) {
  check_keys(cfg,
             {"latent_channels", "hidden_channels", "noise_sigma", "alpha", "beta",
              "smoothl1_delta", "stft_window", "stft_hop", "spectral_p", "lr", "batch",
              "epochs", "seed", "window_len", "window_overlap"},
             "denoise");
  DaeCliConfig out;
  maybe(cfg, "latent_channels", out.dae.latent_channels);
  maybe(cfg, "hidden_channels", out.dae.hidden_channels);
  maybe(cfg, "noise_sigma", out.dae.noise_sigma);
  maybe(cfg, "alpha", out.dae.alpha);
  maybe(cfg, "beta", out.dae.beta);
  maybe(cfg, "smoothl1_delta", out.dae.smoothl1_delta);
  maybe(cfg, "stft_window", out.dae.stft.window);
  maybe(cfg, "stft_hop", out.dae.stft.hop);
  maybe(cfg, "spectral_p", out.dae.spectral_p);
  maybe(cfg, "lr", out.dae.lr);
  maybe(cfg, "batch", out.dae.batch);
  maybe(cfg, "epochs", out.dae.epochs);
  maybe(cfg, "window_len", out.window_len);
  maybe(cfg, "window_overlap", out.window_overlap);
  return out;
}

json dae_config_echo(const DaeCliConfig& c, uint64_t seed) {
  json j;
  j["latent_channels"] = c.dae.latent_channels;
  j["hidden_channels"] = c.dae.hidden_channels;
  j["noise_sigma"] = c.dae.noise_sigma;
  j["alpha"] = c.dae.alpha;
  j["beta"] = c.dae.beta;
  j["smoothl1_delta"] = c.dae.smoothl1_delta;
  j["stft_window"] = c.dae.stft.window;
  j["stft_hop"] = c.dae.stft.hop;
  j["spectral_p"] = c.dae.spectral_p;
  j["lr"] = c.dae.lr;
  j["batch"] = c.dae.batch;
  j["epochs"] = c.dae.epochs;
  j["window_len"] = c.window_len;
  j["window_overlap"] = c.window_overlap;
  j["seed"] = seed;
  return j;
}

struct DenoiseTrainArgs {
  std::vector<std::string> data;
  std::string out;
  std::string config;
  std::string report;
  bool normalize = false;
  std::optional<uint64_t> seed;
};

int run_denoise_train(const DenoiseTrainArgs& a) {
  const Timer timer;
  const json cfg_json = load_config(a.config);
  DaeCliConfig cfg = dae_config_from(cfg_json);
  cfg.dae.seed = resolve_seed(a.seed, cfg_json);

  std::vector<Recording> windows;
  for (const std::string& path : a.data) {
    Recording rec = read_recording(path);
    if (a.normalize) rec = minmax_normalize(rec);
    for (Recording& w : segment_windows(rec, {cfg.window_len, cfg.window_overlap}))
      windows.push_back(std::move(w));
  }
  const DaeResult result = dae_train(windows, cfg.dae);
  save_dae(a.out, result.params);

  if (!a.report.empty()) {
    json rep;
    rep["command"] = "denoise train";
    rep["config"] = dae_config_echo(cfg, cfg.dae.seed);
    rep["seed"] = result.report.seed;
    rep["n_windows"] = windows.size();
    rep["epoch_losses"] = result.report.epoch_losses;
    rep["model"] = a.out;
    rep["timing"] = {{"wall_time_sec", timer.seconds()}};
    emit_report(a.report, std::move(rep));
  }
  return 0;
}

struct DenoiseApplyArgs {
  std::string model, in, out;
};

int run_denoise_apply(const DenoiseApplyArgs& a) {
  const DaeParams params = load_dae(a.model);
  const Recording rec = read_recording(a.in);
  const Tensor denoised = dae_forward(params, recording_tensor(rec));
  Recording out = rec;
  out.data = denoised.vec();
  write_recording(a.out, out);
  return 0;
}

struct DenoiseMetricsArgs {
  std::string a, b, out;
};

int run_denoise_metrics(const DenoiseMetricsArgs& args) {
  const Timer timer;
  const Recording ra = read_recording(args.a);
  const Recording rb = read_recording(args.b);
  if (ra.channels() != rb.channels() || ra.samples != rb.samples)
    throw ParameterError("recordings have different shapes");

  json channels = json::array();
  ReconMetrics mean;
  for (int64_t c = 0; c < ra.channels(); ++c) {
    const ReconMetrics m = recon_metrics(ra.channel_vec(c), rb.channel_vec(c));
    json jc;
    jc["channel"] = ra.channel_names[static_cast<size_t>(c)];
    jc["rmse"] = m.rmse;
    jc["mae"] = m.mae;
    jc["hellinger"] = m.hellinger;
    jc["wasserstein1"] = m.wasserstein1;
    channels.push_back(std::move(jc));
    mean.rmse += m.rmse;
    mean.mae += m.mae;
    mean.hellinger += m.hellinger;
    mean.wasserstein1 += m.wasserstein1;
  }
  const double n = static_cast<double>(ra.channels());
  json rep;
  rep["command"] = "denoise metrics";
  rep["a"] = args.a;
  rep["b"] = args.b;
  rep["channels"] = std::move(channels);
  rep["mean"] = {{"rmse", mean.rmse / n},
                 {"mae", mean.mae / n},
                 {"hellinger", mean.hellinger / n},
                 {"wasserstein1", mean.wasserstein1 / n}};
  rep["timing"] = {{"wall_time_sec", timer.seconds()}};
  emit_report(args.out, std::move(rep));
  return 0;
}

// ---------------------------------------------------------------- plrnn ----

GtfConfig gtf_config_from(const json& cfg) {
  check_keys(cfg,
             {"variant", "alpha", "interval", "seq_len", "batch_size", "batches_per_epoch",
              "epochs", "lr", "reg_latent", "reg_obs", "latent_dim", "hidden_dim", "seed"},
             "dynamics");
  GtfConfig out;
  if (cfg.contains("variant")) out.variant = variant_from_name(cfg.at("variant").get<std::string>());
  maybe(cfg, "alpha", out.alpha);
  maybe(cfg, "interval", out.interval);
  maybe(cfg, "seq_len", out.seq_len);
  maybe(cfg, "batch_size", out.batch_size);
  maybe(cfg, "batches_per_epoch", out.batches_per_epoch);
  maybe(cfg, "epochs", out.epochs);
  maybe(cfg, "lr", out.lr);
  maybe(cfg, "reg_latent", out.reg_latent);
  maybe(cfg, "reg_obs", out.reg_obs);
  maybe(cfg, "latent_dim", out.latent_dim);
  maybe(cfg, "hidden_dim", out.hidden_dim);
  return out;
}

json gtf_config_echo(const GtfConfig& c) {
  json j;
  j["variant"] = variant_name(c.variant);
  j["alpha"] = c.alpha;
  j["interval"] = c.interval;
  j["seq_len"] = c.seq_len;
  j["batch_size"] = c.batch_size;
  j["batches_per_epoch"] = c.batches_per_epoch;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["reg_latent"] = c.reg_latent;
  j["reg_obs"] = c.reg_obs;
  j["latent_dim"] = c.latent_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["seed"] = c.seed;
  return j;
}

struct PlrnnTrainArgs {
  std::string data, out, config, report;
  std::optional<uint64_t> seed;
};

int run_plrnn_train(const PlrnnTrainArgs& a) {
  const Timer timer;
  const json cfg_json = load_config(a.config);
  GtfConfig cfg = gtf_config_from(cfg_json);
  cfg.seed = resolve_seed(a.seed, cfg_json);

  const Recording rec = read_recording(a.data);
  const GtfResult result = gtf_train({rec}, cfg);
  save_plrnn(a.out, result.params);

  if (!a.report.empty()) {
    json rep;
    rep["command"] = "plrnn train";
    rep["config"] = gtf_config_echo(cfg);
    rep["seed"] = result.report.seed;
    rep["epoch_losses"] = result.report.epoch_losses;
    rep["model"] = a.out;
    rep["timing"] = {{"wall_time_sec", timer.seconds()}};
    emit_report(a.report, std::move(rep));
  }
  return 0;
}

// ------------------------------------------------------------- lyapunov ----

struct LyapunovArgs {
  std::string model, out;
  int64_t steps = 10000;
  int64_t burn_in = 1000;
  int64_t qr_interval = 1;
  double epsilon = 0.01;
  std::vector<double> z0;
};

json spectrum_report(const LyapunovSpectrum& spec, double epsilon) {
  const RegimeLabel label = classify(spec, epsilon);
  json rep;
  rep["exponents"] = spec.exponents;
  rep["steps_used"] = spec.steps_used;
  rep["burn_in"] = spec.burn_in;
  rep["qr_interval"] = spec.qr_interval;
  rep["lambda_max"] = label.lambda_max;
  rep["lambda_sum"] = label.lambda_sum;
  rep["epsilon"] = label.epsilon_used;
  rep["regime"] = regime_name(label.regime);
  rep["chaos_binary"] = label.chaos_binary;
  rep["kaplan_yorke_dimension"] = kaplan_yorke(spec);
  return rep;
}

int run_lyapunov(const LyapunovArgs& a) {
  const Timer timer;
  const PlrnnParams params = load_plrnn(a.model);
  std::vector<double> z0 = a.z0;
  if (z0.empty()) z0.assign(static_cast<size_t>(params.latent_dim), 0.1);
  if (static_cast<int64_t>(z0.size()) != params.latent_dim)
    throw ParameterError("--z0 length does not match the model latent dimension");

  const LyapunovSpectrum spec =
      spectrum(plrnn_system(params), z0, a.steps, a.burn_in, a.qr_interval);
  json rep = spectrum_report(spec, a.epsilon);
  rep["command"] = "lyapunov";
  rep["model"] = a.model;
  rep["timing"] = {{"wall_time_sec", timer.seconds()}};
  emit_report(a.out, std::move(rep));
  return 0;
}

// ------------------------------------------------------------------ tag ----

TagConfig tag_config_from(const json& cfg) {
  check_keys(cfg, {"epoch_seconds", "pe_order", "pe_delay", "invert", "seed"}, "tag");
  TagConfig out;
  maybe(cfg, "epoch_seconds", out.epoch_seconds);
  maybe(cfg, "pe_order", out.pe_order);
  maybe(cfg, "pe_delay", out.pe_delay);
  maybe(cfg, "invert", out.invert);
  return out;
}

struct TagEntropyArgs {
  std::string in, out, config;
};

int run_tag_entropy(const TagEntropyArgs& a) {
  const Timer timer;
  const TagConfig cfg = tag_config_from(load_config(a.config));
  const Recording rec = read_recording(a.in);
  const TagReport tag = tag_recording(rec, cfg);

  json rep;
  rep["command"] = "tag entropy";
  rep["input"] = a.in;
  rep["file_label"] = tag_name(tag.file_label);
  json labels = json::array();
  for (ChaosTag t : tag.epoch_labels) labels.push_back(tag_name(t));
  rep["epoch_labels"] = std::move(labels);
  json feats = json::array();
  for (const EntropyFeatures& f : tag.epoch_features)
    feats.push_back({{"h_spec", f.h_spec}, {"h_perm", f.h_perm}});
  rep["epoch_features"] = std::move(feats);
  rep["center_chaotic"] = {{"h_spec", tag.center_chaotic.h_spec},
                           {"h_perm", tag.center_chaotic.h_perm}};
  rep["center_non_chaotic"] = {{"h_spec", tag.center_non_chaotic.h_spec},
                               {"h_perm", tag.center_non_chaotic.h_perm}};
  rep["epoch_samples"] = tag.epoch_samples;
  rep["config"] = {{"epoch_seconds", tag.config.epoch_seconds},
                   {"pe_order", tag.config.pe_order},
                   {"pe_delay", tag.config.pe_delay},
                   {"invert", tag.config.invert}};
  rep["timing"] = {{"wall_time_sec", timer.seconds()}};
  emit_report(a.out, std::move(rep));
  return 0;
}

struct TagAgreeArgs {
  std::string a, b, out;
};

std::vector<ChaosTag> load_epoch_labels(const std::string& path) {
  json j = json::parse(read_file_bytes(path), nullptr, false);
  if (j.is_discarded() || !j.contains("epoch_labels"))
    throw IoError("no epoch labels in " + path);
  std::vector<ChaosTag> tags;
  for (const json& name : j.at("epoch_labels")) tags.push_back(tag_from_name(name.get<std::string>()));
  return tags;
}

int run_tag_agree(const TagAgreeArgs& args) {
  const Timer timer;
  const AgreementReport agree =
      agreement(load_epoch_labels(args.a), load_epoch_labels(args.b));
  json rep;
  rep["command"] = "tag agree";
  rep["a"] = args.a;
  rep["b"] = args.b;
  rep["kappa"] = agree.kappa;
  rep["f1"] = agree.f1;
  rep["both_chaotic"] = agree.both_chaotic;
  rep["a_only_chaotic"] = agree.a_only_chaotic;
  rep["b_only_chaotic"] = agree.b_only_chaotic;
  rep["both_non_chaotic"] = agree.both_non_chaotic;
  rep["timing"] = {{"wall_time_sec", timer.seconds()}};
  emit_report(args.out, std::move(rep));
  return 0;
}

// ------------------------------------------------------------------ mtl ----

void apply_augment_config(const json& cfg, AugmentConfig& out) {
  check_keys(cfg,
             {"jitter_sigma", "scale_sigma", "mask_frac", "mask_prob", "chdrop_p",
              "chdrop_prob", "light_mode"},
             "augment");
  maybe(cfg, "jitter_sigma", out.jitter_sigma);
  maybe(cfg, "scale_sigma", out.scale_sigma);
  maybe(cfg, "mask_frac", out.mask_frac);
  maybe(cfg, "mask_prob", out.mask_prob);
  maybe(cfg, "chdrop_p", out.chdrop_p);
  maybe(cfg, "chdrop_prob", out.chdrop_prob);
  maybe(cfg, "light_mode", out.light_mode);
}

MtlConfig mtl_config_from(const json& cfg, const std::string& preset) {
  MtlConfig out;
  if (preset == "reference") {
    // Defaults already hold the full-size values.
  } else if (preset == "toy") {
    out = MtlConfig::toy();
  } else if (preset == "light") {
    out = MtlConfig::toy();
    out.augment.light_mode = true;
  } else if (preset == "full") {
    out = MtlConfig::toy();
    out.augment.light_mode = false;
  } else {
    throw ParameterError("unknown preset: " + preset);
  }
  check_keys(cfg,
             {"d_model", "n_heads", "n_layers", "ffn_dim", "n_tokens", "stem_filters",
              "stem_kernels", "dropout", "lambda_cls", "lambda_chaos", "lambda_con", "tau",
              "lr", "grad_clip", "batch", "epochs", "seed", "augment"},
             "encoder");
  maybe(cfg, "d_model", out.d_model);
  maybe(cfg, "n_heads", out.n_heads);
  maybe(cfg, "n_layers", out.n_layers);
  maybe(cfg, "ffn_dim", out.ffn_dim);
  maybe(cfg, "n_tokens", out.n_tokens);
  maybe(cfg, "stem_filters", out.stem_filters);
  maybe(cfg, "stem_kernels", out.stem_kernels);
  maybe(cfg, "dropout", out.dropout);
  maybe(cfg, "lambda_cls", out.lambda_cls);
  maybe(cfg, "lambda_chaos", out.lambda_chaos);
  maybe(cfg, "lambda_con", out.lambda_con);
  maybe(cfg, "tau", out.tau);
  maybe(cfg, "lr", out.lr);
  maybe(cfg, "grad_clip", out.grad_clip);
  maybe(cfg, "batch", out.batch);
  maybe(cfg, "epochs", out.epochs);
  if (cfg.contains("augment")) apply_augment_config(cfg.at("augment"), out.augment);
  return out;
}

json mtl_config_echo(const MtlConfig& c) {
  json j;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["ffn_dim"] = c.ffn_dim;
  j["n_tokens"] = c.n_tokens;
  j["dropout"] = c.dropout;
  j["lambda_cls"] = c.lambda_cls;
  j["lambda_chaos"] = c.lambda_chaos;
  j["lambda_con"] = c.lambda_con;
  j["tau"] = c.tau;
  j["lr"] = c.lr;
  j["grad_clip"] = c.grad_clip;
  j["batch"] = c.batch;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["augment"] = {{"jitter_sigma", c.augment.jitter_sigma},
                  {"scale_sigma", c.augment.scale_sigma},
                  {"mask_frac", c.augment.mask_frac},
                  {"mask_prob", c.augment.mask_prob},
                  {"chdrop_p", c.augment.chdrop_p},
                  {"chdrop_prob", c.augment.chdrop_prob},
                  {"light_mode", c.augment.light_mode}};
  return j;
}

struct MtlTrainArgs {
  std::string data, out, config, report;
  std::string preset = "toy";
  std::optional<uint64_t> seed;
};

int run_mtl_train(const MtlTrainArgs& a) {
  const Timer timer;
  const json cfg_json = load_config(a.config);
  MtlConfig cfg = mtl_config_from(cfg_json, a.preset);
  cfg.seed = resolve_seed(a.seed, cfg_json);

  const std::vector<Trial> corpus = load_corpus(a.data);
  const MtlResult result = mtl_train(corpus, cfg);
  save_mtl(a.out, result.params);

  if (!a.report.empty()) {
    json rep;
    rep["command"] = "mtl train";
    rep["preset"] = a.preset;
    rep["config"] = mtl_config_echo(cfg);
    rep["seed"] = result.report.seed;
    rep["n_trials"] = corpus.size();
    rep["epoch_losses"] = result.report.epoch_losses;
    rep["model"] = a.out;
    rep["timing"] = {{"wall_time_sec", timer.seconds()}};
    emit_report(a.report, std::move(rep));
  }
  return 0;
}

struct MtlEvalArgs {
  std::string model, data, out;
};

json eval_json(const EvalReport& ev) {
  json j;
  j["acc_mi"] = ev.acc_mi;
  j["acc_chaos"] = ev.acc_chaos;
  if (ev.f1_mi)
    j["f1_mi"] = *ev.f1_mi;
  else
    j["f1_mi"] = nullptr;
  if (ev.f1_chaos)
    j["f1_chaos"] = *ev.f1_chaos;
  else
    j["f1_chaos"] = nullptr;
  j["n_trials"] = ev.n_trials;
  return j;
}

int run_mtl_eval(const MtlEvalArgs& a) {
  const Timer timer;
  const MtlParams params = load_mtl(a.model);
  const std::vector<Trial> corpus = load_corpus(a.data);
  json rep = eval_json(evaluate(params, corpus));
  rep["command"] = "mtl eval";
  rep["model"] = a.model;
  rep["data"] = a.data;
  rep["timing"] = {{"wall_time_sec", timer.seconds()}};
  emit_report(a.out, std::move(rep));
  return 0;
}

struct MtlProbeArgs {
  std::string model, data, out;
  std::string label = "mi";
  double lr = 0.05;
  int64_t epochs = 200;
};

Tensor corpus_embeddings(const MtlParams& params, const std::vector<Trial>& corpus) {
  const int64_t n = static_cast<int64_t>(corpus.size());
  Tensor out({n, params.d_model});
  constexpr int64_t kChunk = 64;
  for (int64_t pos = 0; pos < n; pos += kChunk) {
    const int64_t b = std::min(kChunk, n - pos);
    const int64_t c = corpus.front().window.dim(0);
    const int64_t t = corpus.front().window.dim(1);
    Tensor xb({b, c, t});
    for (int64_t i = 0; i < b; ++i)
      std::copy(corpus[static_cast<size_t>(pos + i)].window.vec().begin(),
                corpus[static_cast<size_t>(pos + i)].window.vec().end(),
                xb.data() + i * c * t);
    const Tensor emb = mtl_embed(params, xb);
    std::copy(emb.vec().begin(), emb.vec().end(), out.data() + pos * params.d_model);
  }
  return out;
}

int run_mtl_probe(const MtlProbeArgs& a) {
  const Timer timer;
  if (a.label != "mi" && a.label != "chaos")
    throw ParameterError("--label must be mi or chaos");
  const MtlParams params = load_mtl(a.model);
  const std::vector<Trial> corpus = load_corpus(a.data);
  const Tensor emb = corpus_embeddings(params, corpus);
  std::vector<int> labels;
  labels.reserve(corpus.size());
  for (const Trial& t : corpus)
    labels.push_back(a.label == "mi" ? (t.label_mi == MiLabel::imagery ? 1 : 0)
                                     : (t.label_chaos == ChaosTag::chaotic ? 1 : 0));
  const double acc = linear_probe(emb, labels, a.lr, a.epochs);
  json rep;
  rep["command"] = "mtl probe";
  rep["model"] = a.model;
  rep["data"] = a.data;
  rep["label"] = a.label;
  rep["lr"] = a.lr;
  rep["epochs"] = a.epochs;
  rep["probe_accuracy"] = acc;
  rep["timing"] = {{"wall_time_sec", timer.seconds()}};
  emit_report(a.out, std::move(rep));
  return 0;
}

// ------------------------------------------------------------- pipeline ----

struct PipelineArgs {
  std::string workdir, config;
  std::optional<uint64_t> seed;
};

int run_pipeline(const PipelineArgs& a) {
  const Timer total;
  const json cfg_json = load_config(a.config);
  check_keys(cfg_json, {"seed", "denoise", "dynamics", "lyapunov", "tag", "encoder"},
             "pipeline");
  const uint64_t seed = resolve_seed(a.seed, cfg_json);
  fs::create_directories(a.workdir);
  const auto in_dir = [&](const std::string& name) {
    return (fs::path(a.workdir) / name).string();
  };

  json rep;
  rep["command"] = "pipeline";
  rep["seed"] = seed;
  rep["stages"] = json::object();

  // Stage 1: synthesize a clean training signal and a noisy target.
  Timer t_synth;
  SynthSpec clean_spec;
  clean_spec.kind = SynthKind::sine;
  clean_spec.channels = 3;
  clean_spec.duration_samples = 2400;
  clean_spec.sample_rate_hz = 160.0;
  clean_spec.frequencies_hz = {10.0};
  clean_spec.seed = seed;
  const Recording clean = gen_signal(clean_spec);
  SynthSpec noisy_spec = clean_spec;
  noisy_spec.kind = SynthKind::noisy_sine;
  noisy_spec.noise_sigma = 0.05;
  const Recording noisy = gen_signal(noisy_spec);
  write_recording(in_dir("clean.ndts"), clean);
  write_recording(in_dir("noisy.ndts"), noisy);
  rep["stages"]["synth"] = {{"clean", in_dir("clean.ndts")},
                            {"noisy", in_dir("noisy.ndts")},
                            {"timing", {{"wall_time_sec", t_synth.seconds()}}}};

  // Stage 2: train the denoiser on clean windows, denoise the noisy signal.
  Timer t_dae;
  DaeCliConfig dae_cfg;
  dae_cfg.dae.epochs = 5;
  dae_cfg.dae.batch = 8;
  dae_cfg.dae.hidden_channels = 8;
  dae_cfg.dae.latent_channels = 4;
  dae_cfg.window_len = 320;
  dae_cfg.window_overlap = 0.75;
  if (cfg_json.contains("denoise")) dae_cfg = dae_config_from(cfg_json.at("denoise"));
  dae_cfg.dae.seed = seed + 1;
  const std::vector<Recording> windows =
      segment_windows(clean, {dae_cfg.window_len, dae_cfg.window_overlap});
  const DaeResult dae = dae_train(windows, dae_cfg.dae);
  save_dae(in_dir("denoiser.ndck"), dae.params);
  const Tensor denoised_t = dae_forward(dae.params, recording_tensor(noisy));
  Recording denoised = noisy;
  denoised.data = denoised_t.vec();
  write_recording(in_dir("denoised.ndts"), denoised);
  {
    json st;
    st["model"] = in_dir("denoiser.ndck");
    st["output"] = in_dir("denoised.ndts");
    st["config"] = dae_config_echo(dae_cfg, dae_cfg.dae.seed);
    st["final_loss"] =
        dae.report.epoch_losses.empty() ? 0.0 : dae.report.epoch_losses.back();
    ReconMetrics m_noisy, m_denoised;
    for (int64_t c = 0; c < clean.channels(); ++c) {
      const ReconMetrics mn = recon_metrics(noisy.channel_vec(c), clean.channel_vec(c));
      const ReconMetrics md = recon_metrics(denoised.channel_vec(c), clean.channel_vec(c));
      m_noisy.rmse += mn.rmse / static_cast<double>(clean.channels());
      m_denoised.rmse += md.rmse / static_cast<double>(clean.channels());
    }
    st["noisy_rmse"] = m_noisy.rmse;
    st["denoised_rmse"] = m_denoised.rmse;
    st["timing"] = {{"wall_time_sec", t_dae.seconds()}};
    rep["stages"]["denoise"] = std::move(st);
  }

  // Stage 3: fit the latent dynamics on the denoised signal.
  Timer t_gtf;
  GtfConfig gtf_cfg;
  gtf_cfg.latent_dim = 8;
  gtf_cfg.hidden_dim = 32;
  gtf_cfg.epochs = 5;
  gtf_cfg.batches_per_epoch = 10;
  gtf_cfg.seq_len = 30;
  if (cfg_json.contains("dynamics")) gtf_cfg = gtf_config_from(cfg_json.at("dynamics"));
  gtf_cfg.seed = seed + 2;
  const GtfResult gtf = gtf_train({denoised}, gtf_cfg);
  save_plrnn(in_dir("dynamics.ndck"), gtf.params);
  rep["stages"]["dynamics"] = {
      {"model", in_dir("dynamics.ndck")},
      {"config", gtf_config_echo(gtf_cfg)},
      {"final_loss", gtf.report.epoch_losses.empty() ? 0.0 : gtf.report.epoch_losses.back()},
      {"timing", {{"wall_time_sec", t_gtf.seconds()}}}};

  // Stage 4: Lyapunov spectrum and regime of the fitted dynamics.
  Timer t_lyap;
  int64_t lyap_steps = 3000, lyap_burn = 500;
  if (cfg_json.contains("lyapunov")) {
    const json& lj = cfg_json.at("lyapunov");
    check_keys(lj, {"steps", "burn_in"}, "lyapunov");
    maybe(lj, "steps", lyap_steps);
    maybe(lj, "burn_in", lyap_burn);
  }
  const std::vector<double> z0(static_cast<size_t>(gtf.params.latent_dim), 0.1);
  const LyapunovSpectrum spec = spectrum(plrnn_system(gtf.params), z0, lyap_steps, lyap_burn);
  json lyap_rep = spectrum_report(spec, 0.01);
  lyap_rep["timing"] = {{"wall_time_sec", t_lyap.seconds()}};
  rep["stages"]["lyapunov"] = std::move(lyap_rep);

  // Stage 5: entropy-based chaos tag of the denoised recording.
  Timer t_tag;
  TagConfig tag_cfg;
  if (cfg_json.contains("tag")) tag_cfg = tag_config_from(cfg_json.at("tag"));
  const TagReport tag = tag_recording(denoised, tag_cfg);
  {
    json st;
    st["file_label"] = tag_name(tag.file_label);
    json labels = json::array();
    for (ChaosTag t : tag.epoch_labels) labels.push_back(tag_name(t));
    st["epoch_labels"] = std::move(labels);
    st["timing"] = {{"wall_time_sec", t_tag.seconds()}};
    rep["stages"]["tag"] = std::move(st);
  }

  // Stage 6: multitask encoder on a labeled synthetic corpus.
  Timer t_mtl;
  MtlConfig mtl_cfg = MtlConfig::toy();
  mtl_cfg.epochs = 3;
  mtl_cfg.batch = 16;
  if (cfg_json.contains("encoder")) mtl_cfg = mtl_config_from(cfg_json.at("encoder"), "toy");
  mtl_cfg.seed = seed + 3;
  const std::vector<Trial> corpus = gen_corpus(8, {320, 0.0}, seed + 4);
  write_corpus(in_dir("corpus"), corpus, 160.0,
               {{"n_per_class", 8}, {"window_len", 320}, {"seed", seed + 4}});
  const MtlResult mtl = mtl_train(corpus, mtl_cfg);
  save_mtl(in_dir("encoder.ndck"), mtl.params);
  json mtl_rep = eval_json(evaluate(mtl.params, corpus));
  mtl_rep["model"] = in_dir("encoder.ndck");
  mtl_rep["config"] = mtl_config_echo(mtl_cfg);
  mtl_rep["timing"] = {{"wall_time_sec", t_mtl.seconds()}};
  rep["stages"]["mtl"] = std::move(mtl_rep);

  rep["timing"] = {{"wall_time_sec", total.seconds()}};
  emit_report(in_dir("pipeline_report.json"), std::move(rep));
  std::cout << in_dir("pipeline_report.json") << "\n";
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"Deterministic signal-dynamics toolkit: denoising, latent dynamical "
               "reconstruction, Lyapunov analysis, entropy tagging, and a multitask encoder."};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(NEURODYN_VERSION));

  SynthArgs synth_args;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate synthetic recordings or corpora");
  synth_cmd->add_option("--kind", synth_args.kind,
                        "sine | sum_of_sines | logistic_map | henon | noisy_sine");
  synth_cmd->add_option("--out", synth_args.out, "Output recording path");
  synth_cmd->add_flag("--csv", synth_args.csv, "Write CSV instead of the binary format");
  synth_cmd->add_option("--channels", synth_args.channels);
  synth_cmd->add_option("--samples", synth_args.samples);
  synth_cmd->add_option("--rate", synth_args.rate, "Sample rate in Hz");
  synth_cmd->add_option("--freq", synth_args.freqs, "Component frequency in Hz (repeatable)");
  synth_cmd->add_option("--amp", synth_args.amps, "Component amplitude (repeatable)");
  synth_cmd->add_option("--noise", synth_args.noise, "Additive noise sigma");
  synth_cmd->add_option("--logistic-r", synth_args.logistic_r);
  synth_cmd->add_option("--henon-a", synth_args.henon_a);
  synth_cmd->add_option("--henon-b", synth_args.henon_b);
  synth_cmd->add_option("--corpus-dir", synth_args.corpus_dir,
                        "Write a labeled trial corpus into this directory");
  synth_cmd->add_option("--n-per-class", synth_args.n_per_class);
  synth_cmd->add_option("--window-len", synth_args.window_len);
  synth_cmd->add_option("--seed", synth_args.seed);

  CLI::App* denoise_cmd = app.add_subcommand("denoise", "Denoising autoencoder");
  denoise_cmd->require_subcommand(1);
  DenoiseTrainArgs dt_args;
  CLI::App* dt = denoise_cmd->add_subcommand("train", "Train a denoiser on clean recordings");
  dt->add_option("--data", dt_args.data, "Clean recording (repeatable)")->required();
  dt->add_option("--out", dt_args.out, "Checkpoint path")->required();
  dt->add_option("--config", dt_args.config, "JSON config");
  dt->add_option("--report", dt_args.report, "Training report path");
  dt->add_flag("--normalize", dt_args.normalize, "Min-max normalize channels first");
  dt->add_option("--seed", dt_args.seed);
  DenoiseApplyArgs da_args;
  CLI::App* da = denoise_cmd->add_subcommand("apply", "Run a trained denoiser");
  da->add_option("--model", da_args.model)->required();
  da->add_option("--in", da_args.in)->required();
  da->add_option("--out", da_args.out)->required();
  DenoiseMetricsArgs dm_args;
  CLI::App* dm = denoise_cmd->add_subcommand("metrics", "Reconstruction metrics between two recordings");
  dm->add_option("--a", dm_args.a)->required();
  dm->add_option("--b", dm_args.b)->required();
  dm->add_option("--out", dm_args.out, "Report path (stdout when omitted)");

  CLI::App* plrnn_cmd = app.add_subcommand("plrnn", "Latent dynamics reconstruction");
  plrnn_cmd->require_subcommand(1);
  PlrnnTrainArgs pt_args;
  CLI::App* pt = plrnn_cmd->add_subcommand("train", "Fit latent dynamics to a recording");
  pt->add_option("--data", pt_args.data)->required();
  pt->add_option("--out", pt_args.out, "Checkpoint path")->required();
  pt->add_option("--config", pt_args.config, "JSON config");
  pt->add_option("--report", pt_args.report, "Training report path");
  pt->add_option("--seed", pt_args.seed);

  LyapunovArgs ly_args;
  CLI::App* ly = app.add_subcommand("lyapunov", "Lyapunov spectrum of a fitted model");
  ly->add_option("--model", ly_args.model)->required();
  ly->add_option("--out", ly_args.out, "Report path (stdout when omitted)");
  ly->add_option("--steps", ly_args.steps);
  ly->add_option("--burn-in", ly_args.burn_in);
  ly->add_option("--qr-interval", ly_args.qr_interval);
  ly->add_option("--epsilon", ly_args.epsilon, "Regime threshold on the top exponent");
  ly->add_option("--z0", ly_args.z0, "Initial latent state (comma-separated)")->delimiter(',');

  CLI::App* tag_cmd = app.add_subcommand("tag", "Entropy-based chaos tagging");
  tag_cmd->require_subcommand(1);
  TagEntropyArgs te_args;
  CLI::App* te = tag_cmd->add_subcommand("entropy", "Tag a recording epoch by epoch");
  te->add_option("--in", te_args.in)->required();
  te->add_option("--out", te_args.out, "Report path (stdout when omitted)");
  te->add_option("--config", te_args.config, "JSON config");
  TagAgreeArgs ta_args;
  CLI::App* ta = tag_cmd->add_subcommand("agree", "Agreement between two tag reports");
  ta->add_option("--a", ta_args.a)->required();
  ta->add_option("--b", ta_args.b)->required();
  ta->add_option("--out", ta_args.out, "Report path (stdout when omitted)");

  CLI::App* mtl_cmd = app.add_subcommand("mtl", "Multitask encoder");
  mtl_cmd->require_subcommand(1);
  MtlTrainArgs mt_args;
  CLI::App* mt = mtl_cmd->add_subcommand("train", "Train the multitask encoder on a corpus");
  mt->add_option("--data", mt_args.data, "corpus.json index")->required();
  mt->add_option("--out", mt_args.out, "Checkpoint path")->required();
  mt->add_option("--config", mt_args.config, "JSON config");
  mt->add_option("--report", mt_args.report, "Training report path");
  mt->add_option("--preset", mt_args.preset, "reference | toy | light | full");
  mt->add_option("--seed", mt_args.seed);
  MtlEvalArgs me_args;
  CLI::App* me = mtl_cmd->add_subcommand("eval", "Accuracy/F1 of a trained encoder");
  me->add_option("--model", me_args.model)->required();
  me->add_option("--data", me_args.data)->required();
  me->add_option("--out", me_args.out, "Report path (stdout when omitted)");
  MtlProbeArgs mp_args;
  CLI::App* mp = mtl_cmd->add_subcommand("probe", "Linear probe on frozen embeddings");
  mp->add_option("--model", mp_args.model)->required();
  mp->add_option("--data", mp_args.data)->required();
  mp->add_option("--out", mp_args.out, "Report path (stdout when omitted)");
  mp->add_option("--label", mp_args.label, "mi | chaos");
  mp->add_option("--lr", mp_args.lr);
  mp->add_option("--epochs", mp_args.epochs);

  PipelineArgs pl_args;
  CLI::App* pl = app.add_subcommand("pipeline", "End-to-end smoke pipeline");
  pl->add_option("--workdir", pl_args.workdir)->required();
  pl->add_option("--config", pl_args.config, "JSON config");
  pl->add_option("--seed", pl_args.seed);

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("neurodyn");
  for (const std::string& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help / --version print and exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth_args);
    if (dt->parsed()) return run_denoise_train(dt_args);
    if (da->parsed()) return run_denoise_apply(da_args);
    if (dm->parsed()) return run_denoise_metrics(dm_args);
    if (pt->parsed()) return run_plrnn_train(pt_args);
    if (ly->parsed()) return run_lyapunov(ly_args);
    if (te->parsed()) return run_tag_entropy(te_args);
    if (ta->parsed()) return run_tag_agree(ta_args);
    if (mt->parsed()) return run_mtl_train(mt_args);
    if (me->parsed()) return run_mtl_eval(me_args);
    if (mp->parsed()) return run_mtl_probe(mp_args);
    if (pl->parsed()) return run_pipeline(pl_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand selected\n";
  return 2;
}

}  // namespace neurodyn
