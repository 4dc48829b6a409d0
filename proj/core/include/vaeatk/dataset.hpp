#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vaeatk/attacks.hpp"
#include "vaeatk/tensor.hpp"

namespace vaeatk {

struct DatasetSplit {
  Tensor images;            // [N,C,H,W], pixels in [0,1]
  std::vector<int> labels;  // size N
  std::string split_tag;    // train | val | test
  std::vector<std::string> provenance;  // "path#checksum" per source file

  std::int64_t size() const { return images.defined() ? images.shape()[0] : 0; }
  Tensor image(std::int64_t i) const;  // [C,H,W] copy
  int num_classes() const;

  // Row subset preserving order.
  DatasetSplit subset(const std::vector<std::int64_t>& rows, const std::string& tag) const;
};

// Parses the big-endian IDX pair (magic 0x00000803 for images,
// 0x00000801 for labels, unsigned bytes), rescaling pixels by /255.
// Transparently inflates gzip-compressed files. Bad magic, truncation and
// image/label count mismatch raise distinct IoErrors.
DatasetSplit load_idx(const std::string& images_path, const std::string& labels_path);

// Deterministic labeled synthetic data, no network access:
//   "shapes" - 4 classes of geometric glyphs with jitter
//   "blobs"  - Gaussian bumps whose center quadrant is the class (a good
//              fit for 2-D latent demos)
// Classes are assigned round-robin, so counts are exactly stratified.
DatasetSplit make_synthetic(const std::string& kind, std::int64_t n, std::uint64_t seed);

struct PairSelection {
  std::vector<int> reference_ids;
  std::vector<int> target_ids;           // empty for unsupervised plans
  int inits_per_reference = 0;           // 0 for supervised plans
  std::map<int, int> per_class_counts;   // stratification record of the references

  std::vector<AttackItem> items() const;
};

// Class-stratified reference sampling (per-class counts differ by at most
// one); the supervised plan is the full reference x target cross product,
// targets drawn from the remaining pool. Throws ValueError naming the
// class when a class cannot supply enough members.
PairSelection select_pairs_supervised(const DatasetSplit& split, int n_refs, int n_targets,
                                      std::uint64_t seed);

// Each reference is replicated with `inits` distinct init indices.
PairSelection select_pairs_unsupervised(const DatasetSplit& split, int n_refs, int inits,
                                        std::uint64_t seed);

}  // namespace vaeatk
