#include "leafcam/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <set>

#include "leafcam/error.hpp"
#include "leafcam/fileio.hpp"
#include "leafcam/rng.hpp"

namespace leafcam {

Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw usage_error("cannot stack an empty batch");
  const Shape& chw = data.samples.at(indices[0]).image.shape();
  Tensor batch({static_cast<int>(indices.size()), chw[0], chw[1], chw[2]});
  const std::size_t per = shape_numel(chw);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = data.samples.at(indices[i]).image;
    if (img.shape() != chw) throw dimension_error("dataset images have inconsistent shapes");
    std::copy(img.data().begin(), img.data().end(), batch.data().begin() + i * per);
  }
  return batch;
}

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(data.samples.at(i).label);
  return labels;
}

Tensor image_to_tensor(const RgbImage& image) {
  Tensor t({3, image.height, image.width});
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) t[c * plane + p] = static_cast<float>(image.pixels[p * 3 + c]) / 255.0f;
  return t;
}

RgbImage tensor_to_image(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw dimension_error("expected [3,H,W], got " + shape_str(chw.shape()));
  RgbImage img(chw.dim(2), chw.dim(1));
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(chw[c * plane + p], 0.0f, 1.0f) * 255.0f;
      img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v));
    }
  return img;
}

Tensor resize_bilinear(const Tensor& chw, int out_height, int out_width) {
  if (chw.rank() != 3) throw dimension_error("resize expects [C,H,W], got " + shape_str(chw.shape()));
  const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  if (H == out_height && W == out_width) return chw;

  struct Tap {
    int lo, hi;
    float frac;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const int lo = static_cast<int>(std::floor(src));
      t[o] = {lo, std::min(lo + 1, in - 1), static_cast<float>(src - lo)};
    }
    return t;
  };
  const std::vector<Tap> ty = taps(H, out_height), tx = taps(W, out_width);

  Tensor out({C, out_height, out_width});
  for (int c = 0; c < C; ++c) {
    const float* src = chw.data().data() + static_cast<std::size_t>(c) * H * W;
    for (int y = 0; y < out_height; ++y)
      for (int x = 0; x < out_width; ++x) {
        const Tap& a = ty[y];
        const Tap& b = tx[x];
        const float top = src[a.lo * W + b.lo] * (1 - b.frac) + src[a.lo * W + b.hi] * b.frac;
        const float bot = src[a.hi * W + b.lo] * (1 - b.frac) + src[a.hi * W + b.hi] * b.frac;
        out[(static_cast<std::size_t>(c) * out_height + y) * out_width + x] = top * (1 - a.frac) + bot * a.frac;
      }
  }
  return out;
}

Tensor preprocess(const RgbImage& image, int size) {
  if (size < 1) throw config_error("image size must be >= 1");
  return resize_bilinear(image_to_tensor(image), size, size);
}

Tensor preprocess(std::span<const std::uint8_t> bytes, int size) {
  return preprocess(decode_image(bytes), size);
}

namespace {

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm" || ext == ".png";
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& root, int size) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw io_error("dataset root " + root.string() + " is not a directory");

  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.size() < 2) {
    throw data_error("dataset root " + root.string() + " needs at least 2 class directories");
  }

  Dataset data;
  data.class_names = classes;
  std::vector<std::pair<fs::path, int>> files;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(root / classes[k])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) names.push_back(entry.path().filename().string());
    }
    if (names.empty()) throw data_error("class directory " + (root / classes[k]).string() + " has no images");
    std::sort(names.begin(), names.end());
    for (const std::string& n : names) files.emplace_back(fs::path(classes[k]) / n, static_cast<int>(k));
  }

  data.samples.resize(files.size());
  std::optional<Error> failure;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < files.size(); ++i) {
    try {
      const fs::path full = root / files[i].first;
      data.samples[i] = {preprocess(read_image(full), size), files[i].second, files[i].first.generic_string()};
    } catch (const Error& e) {
#pragma omp critical
      if (!failure) failure = e;
    }
  }
  if (failure) throw *failure;
  return data;
}

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
  }
  return "?";
}

SplitTag parse_split_tag(std::string_view s) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "test") return SplitTag::test;
  throw config_error("unknown split '" + std::string(s) + "'");
}

std::size_t SplitAssignment::count(SplitTag tag) const {
  return static_cast<std::size_t>(std::count(tags.begin(), tags.end(), tag));
}

SplitAssignment split(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw config_error("split ratios must be nonnegative and sum to 1");
  }
  std::vector<std::vector<std::size_t>> by_class(data.class_names.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const int label = data.samples[i].label;
    if (label < 0 || label >= data.num_classes()) throw data_error("sample label out of range");
    by_class[label].push_back(i);
  }

  SplitAssignment out;
  out.tags.assign(data.samples.size(), SplitTag::train);
  out.ratios = ratios;
  out.seed = seed;
  Rng rng(seed);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    std::vector<std::size_t>& members = by_class[k];
    if (members.empty()) throw data_error("class '" + data.class_names[k] + "' has no samples");
    rng.shuffle(std::span(members));
    const double n = static_cast<double>(members.size());
    // The epsilon keeps exact products such as 0.1 * 70 from flooring low.
    const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * n + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * n + 1e-9));
    for (std::size_t j = 0; j < members.size(); ++j) {
      out.tags[members[j]] = j < n_test ? SplitTag::test : (j < n_test + n_val ? SplitTag::val : SplitTag::train);
    }
  }
  return out;
}

Dataset subset(const Dataset& data, const SplitAssignment& assignment, SplitTag tag) {
  if (assignment.tags.size() != data.samples.size()) throw usage_error("split does not match dataset");
  Dataset out;
  out.class_names = data.class_names;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    if (assignment.tags[i] == tag) out.samples.push_back(data.samples[i]);
  return out;
}

std::vector<BlobGeometry> default_geometry(int classes, int grid) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette = {{
      {205, 40, 40},    // red
      {235, 205, 40},   // yellow
      {135, 75, 30},    // brown
      {160, 160, 160},  // gray
      {245, 135, 20},   // orange
      {140, 60, 175},   // purple
      {240, 240, 240},  // white
      {40, 70, 205},    // blue
  }};
  // Spread classes over the grid before reusing cells.
  std::vector<int> cells;
  const int n = grid * grid;
  for (int pass = 0; static_cast<int>(cells.size()) < n; ++pass) {
    for (int step = 0; step < n; ++step) {
      const int c = (step * 5 + pass) % n;
      if (std::find(cells.begin(), cells.end(), c) == cells.end()) cells.push_back(c);
    }
  }
  std::vector<BlobGeometry> out;
  for (int k = 0; k < classes; ++k) {
    out.push_back({cells[k % n], static_cast<BlobShape>(k % 3), kPalette[k % kPalette.size()]});
  }
  return out;
}

namespace {

std::string class_name(int k, int classes) {
  const int width = static_cast<int>(std::to_string(std::max(classes - 1, 0)).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%0*d", width, k);
  return buf;
}

bool inside_shape(BlobShape shape, double dx, double dy, double radius) {
  switch (shape) {
    case BlobShape::square: return true;
    case BlobShape::disc: return dx * dx + dy * dy <= radius * radius;
    case BlobShape::diamond: return std::abs(dx) + std::abs(dy) <= radius;
  }
  return false;
}

}  // namespace

SynthDataset synth_dataset(const SynthSpec& spec) {
  if (spec.classes < 2) throw config_error("synthetic dataset needs at least 2 classes");
  if (spec.per_class < 1) throw config_error("synthetic dataset needs at least 1 image per class");
  if (spec.grid < 1 || spec.size < spec.grid || spec.size % spec.grid) {
    throw config_error("image size must be a positive multiple of the grid");
  }
  if (!(spec.noise >= 0.0 && spec.noise <= 1.0)) throw config_error("noise amplitude must be in [0,1]");
  if (spec.jitter < 0) throw config_error("jitter must be >= 0");

  const std::vector<BlobGeometry> geometry =
      spec.geometry.empty() ? default_geometry(spec.classes, spec.grid) : spec.geometry;
  if (static_cast<int>(geometry.size()) != spec.classes) throw config_error("one blob geometry per class is required");
  for (std::size_t a = 0; a < geometry.size(); ++a) {
    if (geometry[a].cell < 0 || geometry[a].cell >= spec.grid * spec.grid) throw config_error("blob cell outside the grid");
    for (std::size_t b = a + 1; b < geometry.size(); ++b)
      if (geometry[a] == geometry[b]) {
        throw config_error("classes " + std::to_string(a) + " and " + std::to_string(b) +
                           " share the same blob signature");
      }
  }

  static constexpr std::array<std::uint8_t, 3> kBackground = {70, 120, 60};
  const int cell = spec.size / spec.grid;
  const double radius = cell / 2.0;
  Rng rng(spec.seed);

  SynthDataset out;
  for (int k = 0; k < spec.classes; ++k) out.dataset.class_names.push_back(class_name(k, spec.classes));

  for (int k = 0; k < spec.classes; ++k) {
    const BlobGeometry& g = geometry[k];
    for (int i = 0; i < spec.per_class; ++i) {
      int ox = (g.cell % spec.grid) * cell;
      int oy = (g.cell / spec.grid) * cell;
      if (spec.jitter > 0) {
        ox += static_cast<int>(rng.below(2 * spec.jitter + 1)) - spec.jitter;
        oy += static_cast<int>(rng.below(2 * spec.jitter + 1)) - spec.jitter;
        ox = std::clamp(ox, 0, spec.size - cell);
        oy = std::clamp(oy, 0, spec.size - cell);
      }

      RgbImage img(spec.size, spec.size);
      Box box{spec.size, spec.size, 0, 0};
      for (int y = 0; y < spec.size; ++y)
        for (int x = 0; x < spec.size; ++x) {
          const bool in_cell = x >= ox && x < ox + cell && y >= oy && y < oy + cell;
          const bool in_blob =
              in_cell && inside_shape(g.shape, x + 0.5 - (ox + radius), y + 0.5 - (oy + radius), radius);
          const auto& base = in_blob ? g.color : kBackground;
          for (int c = 0; c < 3; ++c) {
            double v = base[c];
            if (spec.noise > 0) v += (2.0 * rng.uniform() - 1.0) * spec.noise * 255.0;
            img.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
          }
          if (in_blob) {
            box.x0 = std::min(box.x0, x);
            box.y0 = std::min(box.y0, y);
            box.x1 = std::max(box.x1, x + 1);
            box.y1 = std::max(box.y1, y + 1);
          }
        }

      char file[96];
      const std::string& name = out.dataset.class_names[k];
      std::snprintf(file, sizeof file, "%s/%s_%04d.ppm", name.c_str(), name.c_str(), i);
      out.dataset.samples.push_back({image_to_tensor(img), k, file});
      out.images.push_back(std::move(img));
      out.boxes.push_back(box);
      out.files.emplace_back(file);
    }
  }
  return out;
}

void write_synth_tree(const SynthDataset& synth, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  for (const std::string& name : synth.dataset.class_names) fs::create_directories(root / name);
  std::string csv = "file,class,x0,y0,x1,y1\n";
  for (std::size_t i = 0; i < synth.images.size(); ++i) {
    write_file_atomic(root / synth.files[i], encode_ppm(synth.images[i]));
    const Box& b = synth.boxes[i];
    csv += synth.files[i] + "," + synth.dataset.class_names[synth.dataset.samples[i].label] + "," +
           std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
           std::to_string(b.y1) + "\n";
  }
  write_file_atomic(root / "boxes.csv", csv);
}

}  // namespace leafcam
