#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neurodyn/recording.hpp"

namespace neurodyn {

enum class ChaosTag { chaotic, non_chaotic };

std::string tag_name(ChaosTag t);
ChaosTag tag_from_name(const std::string& name);

struct EntropyFeatures {
  double h_spec = 0.0;  // normalized spectral entropy in [0, 1]
  double h_perm = 0.0;  // normalized permutation entropy in [0, 1]
};

// Normalized Shannon entropy of a power spectrum: -sum p log p / log N_f.
// Zero-power bins contribute nothing; all-zero spectra are degenerate.
double spectral_entropy(const std::vector<double>& power);

// Normalized Shannon entropy of ordinal patterns of `order` samples spaced by
// `delay`; ties are broken by index order (stable sort by value).
double permutation_entropy(const std::vector<double>& x, int64_t order = 4,
                           int64_t delay = 1);

struct ClusterResult {
  std::vector<ChaosTag> labels;          // one per feature point
  EntropyFeatures center_chaotic;        // centroid of the chaotic-tagged cluster
  EntropyFeatures center_non_chaotic;
};

// Deterministic 2-means in (h_spec, h_perm): centroids start at the min-sum
// and max-sum points; the lower-mean-entropy cluster is tagged chaotic (the
// convention this pipeline standardizes on), flipped when invert is set.
ClusterResult cluster_tags(const std::vector<EntropyFeatures>& features, bool invert = false);

// Majority label; an exact tie resolves to non_chaotic.
ChaosTag majority_vote(const std::vector<ChaosTag>& labels);

struct AgreementReport {
  double kappa = 0.0;
  double f1 = 0.0;             // positive class = chaotic; a is reference, b prediction
  int64_t both_chaotic = 0;    // contingency counts
  int64_t a_only_chaotic = 0;
  int64_t b_only_chaotic = 0;
  int64_t both_non_chaotic = 0;
};

// Chance-corrected agreement (p_o - p_e) / (1 - p_e); two constant equal
// raters (p_e == 1) count as full agreement.
double cohens_kappa(const std::vector<ChaosTag>& a, const std::vector<ChaosTag>& b);

AgreementReport agreement(const std::vector<ChaosTag>& a, const std::vector<ChaosTag>& b);

struct TagConfig {
  double epoch_seconds = 3.0;
  int64_t pe_order = 4;
  int64_t pe_delay = 1;
  bool invert = false;
};

struct TagReport {
  std::vector<ChaosTag> epoch_labels;
  ChaosTag file_label = ChaosTag::non_chaotic;
  EntropyFeatures center_chaotic;
  EntropyFeatures center_non_chaotic;
  std::vector<EntropyFeatures> epoch_features;
  TagConfig config;
  int64_t epoch_samples = 0;
};

// Whole-recording tagging: split into non-overlapping epochs, compute
// channel-averaged entropy features per epoch, cluster, majority-vote.
TagReport tag_recording(const Recording& rec, const TagConfig& cfg = {});

}  // namespace neurodyn
