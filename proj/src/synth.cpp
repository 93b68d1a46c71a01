#include "occseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "occseg/image_io.hpp"

namespace occseg {

namespace {

double sample_zero_padded(const BinaryMask& m, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto at = [&](int xi, int yi) -> double {
    if (xi < 0 || yi < 0 || xi >= m.width() || yi >= m.height()) return 0.0;
    return m(xi, yi);
  };
  return (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x0 + 1, y0) +
         (1 - fx) * fy * at(x0, y0 + 1) + fx * fy * at(x0 + 1, y0 + 1);
}

// Fisher-Yates with explicit index draws so the permutation does not depend
// on the standard library's shuffle implementation.
void shuffle_indices(std::vector<int>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

std::vector<BinaryMask> ShapeDataset::training_shapes() const {
  std::vector<BinaryMask> out;
  for (int i : train) out.push_back(shapes.at(i));
  return out;
}

std::vector<BinaryMask> ShapeDataset::test_shapes() const {
  std::vector<BinaryMask> out;
  for (int i : test) out.push_back(shapes.at(i));
  return out;
}

void ShapeDataset::validate() const {
  if (shapes.empty()) throw DataError("shape dataset is empty");
  for (const auto& s : shapes)
    if (s.width() != width || s.height() != height)
      throw DataError("shape dataset has mixed dimensions");
  std::vector<int> seen(shapes.size(), 0);
  for (int i : train) {
    if (i < 0 || i >= static_cast<int>(shapes.size())) throw DataError("split index out of range");
    ++seen[i];
  }
  for (int i : test) {
    if (i < 0 || i >= static_cast<int>(shapes.size())) throw DataError("split index out of range");
    ++seen[i];
  }
  for (int s : seen)
    if (s != 1) throw DataError("dataset split must be disjoint and cover every shape");
}

BinaryMask normalize_shape(const BinaryMask& mask, int target_w, int target_h) {
  BinaryMask out(target_w, target_h);
  int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask(x, y)) x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
  if (x1 < 0) return out;

  const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
  // Padded box with the target aspect ratio, in whole pixels.
  int pw = bw, ph = bh;
  if (static_cast<long>(bw) * target_h > static_cast<long>(bh) * target_w)
    ph = static_cast<int>(std::lround(static_cast<double>(bw) * target_h / target_w));
  else
    pw = static_cast<int>(std::lround(static_cast<double>(bh) * target_w / target_h));
  pw = std::max(pw, bw);
  ph = std::max(ph, bh);
  const int left = x0 - (pw - bw) / 2, top = y0 - (ph - bh) / 2;
  const double sx = static_cast<double>(pw) / target_w, sy = static_cast<double>(ph) / target_h;

  for (int j = 0; j < target_h; ++j)
    for (int i = 0; i < target_w; ++i) {
      const double v = sample_zero_padded(mask, left + (i + 0.5) * sx - 0.5, top + (j + 0.5) * sy - 0.5);
      out(i, j) = v >= 0.5 ? 1 : 0;
    }
  return out;
}

void split_dataset(ShapeDataset& ds, std::uint64_t seed) {
  std::vector<int> idx(ds.shapes.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  shuffle_indices(idx, rng);
  const std::size_t n_train = (idx.size() + 1) / 2;
  ds.train.assign(idx.begin(), idx.begin() + n_train);
  ds.test.assign(idx.begin() + n_train, idx.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.test.begin(), ds.test.end());
}

ShapeDataset load_dataset(const std::filesystem::path& dir, int target_w, int target_h,
                          std::uint64_t split_seed) {
  if (target_w < 1 || target_h < 1) throw DataError("target dimensions must be positive");
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".pgm" || ext == ".pbm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no mask images in " + dir.string());

  ShapeDataset ds;
  ds.width = target_w;
  ds.height = target_h;
  for (const auto& f : files) {
    ds.shapes.push_back(normalize_shape(read_mask(f), target_w, target_h));
    ds.names.push_back(f.filename().string());
  }
  split_dataset(ds, split_seed);
  return ds;
}

BinaryMask flip_horizontal(const BinaryMask& mask) {
  BinaryMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) out(x, y) = mask(mask.width() - 1 - x, y);
  return out;
}

ShapeDataset flip_augment(const ShapeDataset& ds) {
  ShapeDataset out = ds;
  for (int i : ds.train) {
    out.train.push_back(static_cast<int>(out.shapes.size()));
    out.shapes.push_back(flip_horizontal(ds.shapes.at(i)));
    out.names.push_back(i < static_cast<int>(ds.names.size()) ? ds.names[i] + "#flip" : "#flip");
  }
  return out;
}

ShapeDataset concat_datasets(const std::vector<ShapeDataset>& parts) {
  if (parts.empty()) throw DataError("nothing to concatenate");
  ShapeDataset out;
  out.width = parts.front().width;
  out.height = parts.front().height;
  for (const auto& p : parts) {
    if (p.width != out.width || p.height != out.height)
      throw DataError("datasets differ in dimensions");
    const int base = static_cast<int>(out.shapes.size());
    out.shapes.insert(out.shapes.end(), p.shapes.begin(), p.shapes.end());
    out.names.insert(out.names.end(), p.names.begin(), p.names.end());
    for (int i : p.train) out.train.push_back(base + i);
    for (int i : p.test) out.test.push_back(base + i);
  }
  return out;
}

ShapeDataset toy_shapes(ToyShape kind, int width, int height, int count, std::uint64_t seed) {
  if (width < 4 || height < 4) throw DataError("toy shapes need at least 4x4 pixels");
  if (count < 1) throw DataError("toy shape count must be positive");
  std::mt19937_64 rng(seed);
  const int side = std::min(width, height);
  ShapeDataset ds;
  ds.width = width;
  ds.height = height;
  const char* label = kind == ToyShape::cross ? "cross" : kind == ToyShape::square ? "square" : "disk";
  for (int n = 0; n < count; ++n) {
    BinaryMask m(width, height);
    switch (kind) {
      case ToyShape::square: {
        std::uniform_int_distribution<int> s_dist(std::max(2, side / 2), std::max(2, side - 2));
        const int s = s_dist(rng);
        const int x0 = (width - s) / 2, y0 = (height - s) / 2;
        for (int y = y0; y < y0 + s; ++y)
          for (int x = x0; x < x0 + s; ++x) m(x, y) = 1;
        break;
      }
      case ToyShape::cross: {
        std::uniform_int_distribution<int> l_dist(std::max(3, (side * 5) / 8), std::max(3, side - 1));
        const int len = l_dist(rng);
        std::uniform_int_distribution<int> t_dist(std::max(1, len / 5), std::max(1, len / 3));
        const int t = t_dist(rng);
        const int lx = (width - len) / 2, ly = (height - len) / 2;
        const int tx = (width - t) / 2, ty = (height - t) / 2;
        for (int y = ly; y < ly + len; ++y)
          for (int x = tx; x < tx + t; ++x) m(x, y) = 1;
        for (int y = ty; y < ty + t; ++y)
          for (int x = lx; x < lx + len; ++x) m(x, y) = 1;
        break;
      }
      case ToyShape::disk: {
        std::uniform_real_distribution<double> r_dist(side * 0.25, side * 0.5 - 0.5);
        const double r = r_dist(rng);
        const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x)
            if (std::hypot(x - cx, y - cy) <= r) m(x, y) = 1;
        break;
      }
    }
    ds.shapes.push_back(std::move(m));
    ds.names.push_back(std::string(label) + "_" + std::to_string(n));
  }
  split_dataset(ds, seed);
  return ds;
}

Image render(const std::vector<BinaryMask>& masks, const std::vector<double>& intensities) {
  if (masks.empty()) throw DataError("nothing to render");
  if (intensities.size() != masks.size() + 1)
    throw DataError("render needs one intensity per mask plus the background");
  Image img(masks.front().width(), masks.front().height(), intensities.back());
  for (std::size_t p = 0; p < img.size(); ++p)
    for (std::size_t i = 0; i < masks.size(); ++i)
      if (masks[i][p]) {
        img[p] = intensities[i];
        break;
      }
  return img;
}

std::vector<BinaryMask> visible_masks(const std::vector<BinaryMask>& masks) {
  std::vector<BinaryMask> out;
  if (masks.empty()) return out;
  BinaryMask covered(masks.front().width(), masks.front().height());
  for (const auto& m : masks) {
    BinaryMask vis(m.width(), m.height());
    for (std::size_t p = 0; p < m.size(); ++p) {
      vis[p] = m[p] && !covered[p];
      covered[p] |= m[p];
    }
    out.push_back(std::move(vis));
  }
  return out;
}

SyntheticScene synthesize(const ShapeDataset& ds, int n_objects, int canvas_w, int canvas_h,
                          double sigma, std::uint64_t seed,
                          std::optional<std::vector<double>> intensities) {
  ds.validate();
  if (n_objects != 2 && n_objects != 3) throw DataError("scenes have two or three objects");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DataError("noise sigma must be >= 0");
  if (ds.test.empty()) throw DataError("dataset has no test shapes");
  if (canvas_w < ds.width || canvas_h < ds.height)
    throw DataError("canvas is smaller than the shape tiles");

  SyntheticScene scene;
  scene.sigma = sigma;
  scene.seed = seed;
  if (intensities) {
    if (intensities->size() != static_cast<std::size_t>(n_objects) + 1)
      throw DataError("need one intensity per object plus the background");
    for (double c : *intensities)
      if (!(c >= 0.0 && c <= 1.0)) throw DataError("intensities must lie in [0,1]");
    for (std::size_t i = 0; i < intensities->size(); ++i)
      for (std::size_t j = i + 1; j < intensities->size(); ++j)
        if ((*intensities)[i] == (*intensities)[j]) throw DataError("intensities must be distinct");
    scene.intensities = *intensities;
  } else {
    const double defaults[] = {0.9, 0.6, 0.4};
    scene.intensities.assign(defaults, defaults + n_objects);
    scene.intensities.push_back(0.1);
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(ds.test.size()) - 1);
  for (int i = 0; i < n_objects; ++i) scene.shape_indices.push_back(ds.test[pick(rng)]);
  for (int idx : scene.shape_indices)
    if (std::none_of(ds.shapes[idx].values().begin(), ds.shapes[idx].values().end(),
                     [](std::uint8_t v) { return v != 0; }))
      throw DataError("drawn shape " + std::to_string(idx) + " is empty");

  std::uniform_int_distribution<int> px(0, canvas_w - ds.width), py(0, canvas_h - ds.height);
  for (int attempt = 0;; ++attempt) {
    if (attempt == 100) throw DataError("no placement without full occlusion after 100 attempts");
    scene.positions.clear();
    scene.truth_masks.clear();
    for (int i = 0; i < n_objects; ++i) {
      const int ox = px(rng), oy = py(rng);
      scene.positions.emplace_back(ox, oy);
      BinaryMask m(canvas_w, canvas_h);
      const auto& s = ds.shapes[scene.shape_indices[i]];
      for (int y = 0; y < ds.height; ++y)
        for (int x = 0; x < ds.width; ++x) m(ox + x, oy + y) = s(x, y);
      scene.truth_masks.push_back(std::move(m));
    }
    const auto vis = visible_masks(scene.truth_masks);
    const bool all_visible = std::all_of(vis.begin(), vis.end(), [](const BinaryMask& v) {
      return std::any_of(v.values().begin(), v.values().end(), [](std::uint8_t b) { return b != 0; });
    });
    if (all_visible) break;
  }

  scene.image = render(scene.truth_masks, scene.intensities);
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (std::size_t p = 0; p < scene.image.size(); ++p)
      scene.image[p] = std::clamp(scene.image[p] + noise(rng), 0.0, 1.0);
  }
  return scene;
}

}  // namespace occseg
