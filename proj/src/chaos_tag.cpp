#include "neurodyn/chaos_tag.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "neurodyn/signal.hpp"

namespace neurodyn {

std::string tag_name(ChaosTag t) {
  return t == ChaosTag::chaotic ? "chaotic" : "non_chaotic";
}

ChaosTag tag_from_name(const std::string& name) {
  if (name == "chaotic") return ChaosTag::chaotic;
  if (name == "non_chaotic") return ChaosTag::non_chaotic;
  throw ParameterError("unknown chaos tag: " + name);
}

double spectral_entropy(const std::vector<double>& power) {
  if (power.size() < 2) throw ParameterError("need at least 2 frequency bins");
  double total = 0.0;
  for (double p : power) {
    if (p < 0.0) throw DomainError("negative spectral power");
    total += p;
  }
  if (total == 0.0) throw DegenerateError("zero total power has no spectral distribution");
  double h = 0.0;
  for (double p : power) {
    if (p == 0.0) continue;
    const double q = p / total;
    h -= q * std::log(q);
  }
  return h / std::log(static_cast<double>(power.size()));
}

double permutation_entropy(const std::vector<double>& x, int64_t order, int64_t delay) {
  if (order < 2) throw ParameterError("pattern order must be at least 2");
  if (order > 10) throw ParameterError("pattern order too large to estimate");
  if (delay < 1) throw ParameterError("delay must be positive");
  const int64_t t = static_cast<int64_t>(x.size());
  const int64_t span = (order - 1) * delay;
  if (t < span + 2) throw ParameterError("series too short for the requested pattern order");

  int64_t n_patterns = 1;
  for (int64_t k = 2; k <= order; ++k) n_patterns *= k;

  std::vector<int64_t> counts(static_cast<size_t>(n_patterns), 0);
  std::vector<int64_t> idx(static_cast<size_t>(order));
  std::vector<int64_t> rest;
  const int64_t n_windows = t - span;
  for (int64_t start = 0; start < n_windows; ++start) {
    std::iota(idx.begin(), idx.end(), int64_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
      return x[static_cast<size_t>(start + a * delay)] < x[static_cast<size_t>(start + b * delay)];
    });
    // Lehmer code of the ordinal pattern; rest is consumed by the erases.
    rest.resize(static_cast<size_t>(order));
    std::iota(rest.begin(), rest.end(), int64_t{0});
    int64_t code = 0;
    for (int64_t i = 0; i < order; ++i) {
      const auto it = std::find(rest.begin(), rest.end(), idx[static_cast<size_t>(i)]);
      const int64_t pos = std::distance(rest.begin(), it);
      int64_t fact = 1;
      for (int64_t k = 2; k <= order - 1 - i; ++k) fact *= k;
      code += pos * fact;
      rest.erase(it);
    }
    counts[static_cast<size_t>(code)] += 1;
  }

  double h = 0.0;
  for (int64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(n_windows);
    h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(n_patterns));
}

namespace {

double feature_sum(const EntropyFeatures& f) { return f.h_spec + f.h_perm; }

double sq_dist(const EntropyFeatures& a, const EntropyFeatures& b) {
  const double ds = a.h_spec - b.h_spec;
  const double dp = a.h_perm - b.h_perm;
  return ds * ds + dp * dp;
}

}  // namespace

ClusterResult cluster_tags(const std::vector<EntropyFeatures>& features, bool invert) {
  if (features.size() < 2) throw ParameterError("need at least 2 feature points to cluster");
  bool all_same = true;
  for (const EntropyFeatures& f : features)
    if (f.h_spec != features[0].h_spec || f.h_perm != features[0].h_perm) all_same = false;
  if (all_same) throw DegenerateError("identical feature points cannot be clustered");

  size_t lo = 0, hi = 0;
  for (size_t i = 1; i < features.size(); ++i) {
    if (feature_sum(features[i]) < feature_sum(features[lo])) lo = i;
    if (feature_sum(features[i]) > feature_sum(features[hi])) hi = i;
  }
  EntropyFeatures c0 = features[lo];  // low-entropy seed
  EntropyFeatures c1 = features[hi];

  std::vector<int> assign(features.size(), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < features.size(); ++i) {
      const int a = sq_dist(features[i], c0) <= sq_dist(features[i], c1) ? 0 : 1;
      if (a != assign[i]) changed = true;
      assign[i] = a;
    }
    EntropyFeatures sum0{0.0, 0.0}, sum1{0.0, 0.0};
    int64_t n0 = 0, n1 = 0;
    for (size_t i = 0; i < features.size(); ++i) {
      if (assign[i] == 0) {
        sum0.h_spec += features[i].h_spec;
        sum0.h_perm += features[i].h_perm;
        ++n0;
      } else {
        sum1.h_spec += features[i].h_spec;
        sum1.h_perm += features[i].h_perm;
        ++n1;
      }
    }
    if (n0 > 0) c0 = {sum0.h_spec / static_cast<double>(n0), sum0.h_perm / static_cast<double>(n0)};
    if (n1 > 0) c1 = {sum1.h_spec / static_cast<double>(n1), sum1.h_perm / static_cast<double>(n1)};
    if (!changed && iter > 0) break;
  }

  // Lower mean entropy is tagged chaotic unless inverted.
  const bool c0_chaotic = (feature_sum(c0) / 2.0 <= feature_sum(c1) / 2.0) != invert;
  ClusterResult result;
  result.labels.resize(features.size());
  for (size_t i = 0; i < features.size(); ++i) {
    const bool in_c0 = assign[i] == 0;
    result.labels[i] = (in_c0 == c0_chaotic) ? ChaosTag::chaotic : ChaosTag::non_chaotic;
  }
  result.center_chaotic = c0_chaotic ? c0 : c1;
  result.center_non_chaotic = c0_chaotic ? c1 : c0;
  return result;
}

ChaosTag majority_vote(const std::vector<ChaosTag>& labels) {
  if (labels.empty()) throw ParameterError("cannot vote on an empty label list");
  int64_t chaotic = 0;
  for (ChaosTag t : labels)
    if (t == ChaosTag::chaotic) ++chaotic;
  const int64_t non = static_cast<int64_t>(labels.size()) - chaotic;
  return chaotic > non ? ChaosTag::chaotic : ChaosTag::non_chaotic;
}

AgreementReport agreement(const std::vector<ChaosTag>& a, const std::vector<ChaosTag>& b) {
  if (a.size() != b.size()) throw ContractError("label lists must have equal length");
  if (a.empty()) throw ContractError("label lists must be non-empty");
  AgreementReport r;
  for (size_t i = 0; i < a.size(); ++i) {
    const bool ac = a[i] == ChaosTag::chaotic;
    const bool bc = b[i] == ChaosTag::chaotic;
    if (ac && bc) ++r.both_chaotic;
    else if (ac) ++r.a_only_chaotic;
    else if (bc) ++r.b_only_chaotic;
    else ++r.both_non_chaotic;
  }
  const double n = static_cast<double>(a.size());
  const double po = static_cast<double>(r.both_chaotic + r.both_non_chaotic) / n;
  const double a_pos = static_cast<double>(r.both_chaotic + r.a_only_chaotic);
  const double b_pos = static_cast<double>(r.both_chaotic + r.b_only_chaotic);
  const double pe = (a_pos * b_pos + (n - a_pos) * (n - b_pos)) / (n * n);
  r.kappa = (pe == 1.0) ? 1.0 : (po - pe) / (1.0 - pe);

  const int64_t pos_mass = 2 * r.both_chaotic + r.a_only_chaotic + r.b_only_chaotic;
  // No chaotic mass on either side: vacuous perfect agreement on the class.
  r.f1 = pos_mass == 0 ? 1.0
                       : 2.0 * static_cast<double>(r.both_chaotic) / static_cast<double>(pos_mass);
  return r;
}

double cohens_kappa(const std::vector<ChaosTag>& a, const std::vector<ChaosTag>& b) {
  return agreement(a, b).kappa;
}

TagReport tag_recording(const Recording& rec, const TagConfig& cfg) {
  rec.validate();
  if (!(cfg.epoch_seconds > 0.0)) throw ParameterError("epoch length must be positive");
  const int64_t epoch_len =
      static_cast<int64_t>(std::floor(cfg.epoch_seconds * rec.sample_rate_hz));
  if (epoch_len < 2) throw ParameterError("epoch shorter than 2 samples");

  const std::vector<Recording> epochs = segment_windows(rec, WindowSpec{epoch_len, 0.0});
  if (epochs.size() < 2) throw ParameterError("need at least 2 epochs to tag a recording");

  const int64_t welch_len = std::min<int64_t>(256, epoch_len);
  std::vector<EntropyFeatures> features;
  features.reserve(epochs.size());
  for (const Recording& ep : epochs) {
    const PsdEstimate psd = welch_psd(ep, welch_len, 0.5);
    double hs = 0.0, hp = 0.0;
    for (int64_t c = 0; c < ep.channels(); ++c) {
      std::vector<double> pw(psd.power.begin() + c * psd.bins(),
                             psd.power.begin() + (c + 1) * psd.bins());
      hs += spectral_entropy(pw);
      hp += permutation_entropy(ep.channel_vec(c), cfg.pe_order, cfg.pe_delay);
    }
    const double nc = static_cast<double>(ep.channels());
    features.push_back({hs / nc, hp / nc});
  }

  const ClusterResult cluster = cluster_tags(features, cfg.invert);
  TagReport report;
  report.epoch_labels = cluster.labels;
  report.file_label = majority_vote(cluster.labels);
  report.center_chaotic = cluster.center_chaotic;
  report.center_non_chaotic = cluster.center_non_chaotic;
  report.epoch_features = features;
  report.config = cfg;
  report.epoch_samples = epoch_len;
  return report;
}

}  // namespace neurodyn
