#pragma once

#include <string>
#include <vector>

#include "mhg/config.hpp"
#include "mhg/core.hpp"
#include "mhg/pgm.hpp"

namespace mhg {

struct Sample {
    ImageGrid image;            // [0,1] intensities, same dims as mask
    LabelMask mask;             // organ class ids, 0 = background
    std::string subject_id;
    std::vector<int> annotated_organs;  // labels covered by this sample's protocol
};

inline LabelMask load_mask(const std::string& path) { return load_pgm(path); }
inline void save_mask(const LabelMask& m, const std::string& path) { save_pgm(m, path); }

// Zero-pads to a centered square, then resizes to size x size.
// Image bilinear, mask nearest neighbor (sample mapping src = (dst+0.5)*scale - 0.5).
Sample pad_and_resize(const Sample& s, int size);

// Applies each enabled transform with independent probability 0.5:
// h-flip, v-flip, rotation uniform in +/-rotate_max_deg, transpose.
Sample augment(const Sample& s, const DatasetConfig& cfg, Rng& rng);

struct SplitResult {
    std::vector<int> train;  // indices into the input sample list
    std::vector<int> val;
    std::vector<int> test;
};

// Subject-wise split: all samples of a subject land in one partition.
// Test and val each get round(n_subjects * test_fraction) subjects (min 1),
// train keeps the rest (at least 1 subject).
SplitResult split_subjects(const std::vector<Sample>& samples, double test_fraction, uint64_t seed);

struct ManifestEntry {
    std::string subject_id;
    std::string image_path;  // relative to the manifest directory
    std::string mask_path;
    std::vector<int> annotated_organs;
};

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);
std::vector<ManifestEntry> load_manifest(const std::string& path);

// Loads every sample listed in a manifest, resolving paths relative to it.
std::vector<Sample> load_dataset(const std::string& manifest_path);

// Removes a label from the sample's protocol: mask pixels cleared, label
// dropped from annotated_organs.
void drop_organ_annotation(Sample& s, int organ);

}  // namespace mhg
