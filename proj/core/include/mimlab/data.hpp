#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mimlab/image.hpp"
#include "mimlab/tensor.hpp"

namespace mimlab {

// Labeled image collection. Item order is fixed at construction (manifest
// order, or generation order for synthetic data); images are held decoded.
struct LabeledDataset {
  std::vector<Image> images;
  std::vector<int64_t> labels;
  int64_t num_classes = 0;
  std::string split;  // "train" or "test"

  size_t size() const { return images.size(); }
};

// Manifest: UTF-8 lines of "relative_path<TAB>integer_label". Paths resolve
// against the manifest's directory. Errors cite the offending line.
LabeledDataset load_image_folder(const std::string& manifest_path, int64_t num_classes, const std::string& split);
// Writes images/NNNNN.ppm plus manifest.tsv under dir.
void save_dataset(const LabeledDataset& ds, const std::string& dir);

// Procedural shapes-on-textured-background dataset. Class k renders shape
// class_shape(k) in hue family class_hue(k) with jittered position, scale,
// rotation, and hue; byte-identical for equal seeds. Labels stratified:
// label(i) = i mod num_classes.
std::pair<LabeledDataset, LabeledDataset> synth_generate(uint64_t seed, int64_t n_train, int64_t n_test,
                                                         int64_t num_classes, int size);
int class_shape(int64_t label);
int class_hue(int64_t label);

struct PatchSequence {
  int rows = 0;
  int cols = 0;
  int64_t n = 0;  // rows * cols
  int64_t d = 0;  // 3 * patch^2
  Tensor patches;  // [n, d] f32, grid row-major; flattening is channel, then
                   // pixel row, then pixel column within the patch
};

PatchSequence patchify(const Image& img, int patch_size);
Image unpatchify(const PatchSequence& ps, int patch_size);

enum class AugmentPolicy { None, Basic, SmallData };

AugmentPolicy augment_policy_from_name(const std::string& name);
const char* augment_policy_name(AugmentPolicy p);

// basic: random resized crop (scale [0.2,1]) + horizontal flip (p=0.5).
// small_data: basic, then greyscale p=0.2, solarize p=0.2 at 0.5, blur p=0.5
// with sigma in [0.1,2], and brightness/contrast/saturation jitter of +-0.4.
Image augment(const Image& img, AugmentPolicy policy, int out_size, Rng& rng);

}  // namespace mimlab
