#pragma once

// Dataset ingestion, the stratified 70/20/10 split, preprocessing, and a
// synthetic dataset with known discriminative regions.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "leafcam/image.hpp"
#include "leafcam/tensor.hpp"

namespace leafcam {

inline constexpr int kDefaultImageSize = 32;

struct Sample {
  Tensor image;  // [C, H, W] in [0, 1]
  int label = 0;
  std::string source;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;  // byte-order sorted

  std::size_t size() const { return samples.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

// Stacks the selected samples into [B, C, H, W].
Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

// RGB bytes -> [3, H, W] in [0, 1].
Tensor image_to_tensor(const RgbImage& image);
// [3, H, W] in [0, 1] -> RGB bytes, rounded.
RgbImage tensor_to_image(const Tensor& chw);

// Bilinear resize of a [C, H, W] tensor with half-pixel centers and edge
// clamping. Same-size input is returned unchanged.
Tensor resize_bilinear(const Tensor& chw, int out_height, int out_width);

// decode -> [0,1] -> bilinear resize to size x size.
Tensor preprocess(std::span<const std::uint8_t> bytes, int size = kDefaultImageSize);
Tensor preprocess(const RgbImage& image, int size = kDefaultImageSize);

// root/<class>/<file>.{ppm,png}; one class per subdirectory, samples ordered
// by class name then file name (byte order).
Dataset load_dataset(const std::filesystem::path& root, int size = kDefaultImageSize);

enum class SplitTag : std::uint8_t { train, val, test };

std::string to_string(SplitTag tag);
SplitTag parse_split_tag(std::string_view s);

struct SplitRatios {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

struct SplitAssignment {
  std::vector<SplitTag> tags;  // one per sample
  SplitRatios ratios;
  std::uint64_t seed = 0;

  std::size_t count(SplitTag tag) const;
};

// Stratified per class after a seeded shuffle:
// n_test = floor(test * n), n_val = floor(val * n), the rest to train.
SplitAssignment split(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed);

Dataset subset(const Dataset& data, const SplitAssignment& assignment, SplitTag tag);

enum class BlobShape : std::uint8_t { square, disc, diamond };

struct BlobGeometry {
  int cell = 0;  // row-major index into the grid x grid layout
  BlobShape shape = BlobShape::square;
  std::array<std::uint8_t, 3> color{};

  friend bool operator==(const BlobGeometry&, const BlobGeometry&) = default;
};

struct SynthSpec {
  int classes = 7;
  int per_class = 50;
  int size = kDefaultImageSize;
  int grid = 4;
  std::vector<BlobGeometry> geometry;  // empty: default_geometry(classes, grid)
  double noise = 0.1;                  // uniform amplitude in [0,1] pixel units
  int jitter = 0;                      // blob offset in pixels, uniform in [-jitter, jitter]
  std::uint64_t seed = 42;
};

std::vector<BlobGeometry> default_geometry(int classes, int grid);

// Pixel box, inclusive-exclusive.
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  friend bool operator==(const Box&, const Box&) = default;
};

struct SynthDataset {
  Dataset dataset;
  std::vector<RgbImage> images;
  std::vector<Box> boxes;
  std::vector<std::string> files;  // relative paths, "<class>/<class>_NNNN.ppm"
};

SynthDataset synth_dataset(const SynthSpec& spec);

// Writes root/<class>/<file>.ppm plus root/boxes.csv.
void write_synth_tree(const SynthDataset& synth, const std::filesystem::path& root);

}  // namespace leafcam
