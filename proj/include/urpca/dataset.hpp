#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "urpca/rng.hpp"
#include "urpca/tensor.hpp"

namespace urpca {

struct DatasetSample {
  Tensor image;  // (1,H,W), values in [0,1]
  Tensor mask;   // (1,H,W), values in {0,1}
  std::string name;
};

enum class Split { train, test };
std::string split_name(Split s);

// Reads `<root>/<split>/images/*.png` with matching masks under masks/,
// ordered by name. resize_to > 0 rescales both (bilinear image, nearest
// mask) to a square of that size.
std::vector<DatasetSample> load_dataset(const std::filesystem::path& root, Split split,
                                        int resize_to = 0);

// Inverse layout of load_dataset; masks written as 0/255.
void write_dataset(const std::vector<DatasetSample>& samples, const std::filesystem::path& root,
                   Split split);

struct SynthSceneSpec {
  int height = 64;
  int width = 64;
  int background_rank = 3;
  int num_targets = 2;
  double amp_lo = 0.4, amp_hi = 0.9;      // target peak amplitude range
  double sigma_lo = 1.0, sigma_hi = 2.5;  // target radius range, pixels
  double noise_std = 0.01;
  uint64_t seed = 0;
  std::string name = "synth";

  void validate() const;
};

// Low-rank smooth background in [0, 0.7] plus isotropic Gaussian targets and
// pixel noise, clamped to [0,1]. The mask marks pixels where a target's own
// contribution reaches half its amplitude; the background matrix has
// numerical rank <= background_rank. Pure function of the spec.
DatasetSample synth_scene(const SynthSceneSpec& spec);

}  // namespace urpca
