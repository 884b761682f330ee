#include "ptychoforge/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "ptychoforge/tensor_io.hpp"

namespace ptychoforge {

RealImage2D FrameStack::image(std::size_t j) const {
  RealImage2D img(height, width);
  const auto src = frame(j);
  for (std::size_t i = 0; i < src.size(); ++i) img[i] = static_cast<double>(src[i]);
  return img;
}

void FrameStack::set(std::size_t j, const RealImage2D& img, double scale) {
  if (img.height() != height || img.width() != width) throw ShapeError("FrameStack::set: shape mismatch");
  auto dst = frame(j);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(img[i] * scale);
}

FrameStack FrameStack::select(const std::vector<std::size_t>& ids) const {
  FrameStack out(ids.size(), height, width);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= count) throw ArgumentError("FrameStack::select: index out of range");
    std::copy_n(frame(ids[k]).begin(), frame_elems(), out.frame(k).begin());
  }
  return out;
}

TripletDataset TripletDataset::select(const std::vector<std::size_t>& ids) const {
  TripletDataset out;
  out.diffraction = diffraction.select(ids);
  out.amplitude = amplitude.select(ids);
  out.phase = phase.select(ids);
  out.norm = norm;
  out.grid.step_px = grid.step_px;
  out.grid.rows = ids.empty() ? 0 : 1;
  out.grid.cols = ids.size();
  for (auto i : ids) out.grid.positions.push_back(grid.positions.at(i));
  return out;
}

RealImage2D extract_patch(const RealImage2D& image, const ScanPosition& position, std::size_t size) {
  if (position.row + size > image.height() || position.col + size > image.width()) {
    throw GeometryError("extract_patch: window at (" + std::to_string(position.row) + "," +
                        std::to_string(position.col) + ") exceeds image bounds");
  }
  RealImage2D patch(size, size);
  for (std::size_t r = 0; r < size; ++r) {
    std::copy_n(&image(position.row + r, position.col), size, &patch(r, 0));
  }
  return patch;
}

namespace {

void check_consistent(const DiffractionStack& stack, const RealImage2D& amplitude_image,
                      const ScanGrid& grid) {
  if (stack.size() != grid.size()) throw ArgumentError("build_triplets: stack and grid sizes differ");
  if (stack.size() == 0) throw ArgumentError("build_triplets: empty stack");
  const std::size_t n = stack.frame_size();
  for (const auto& f : stack.frames) {
    if (f.height() != n || f.width() != n) throw ArgumentError("build_triplets: ragged frames");
  }
  try {
    grid.check_fits(amplitude_image.height(), amplitude_image.width(), n);
  } catch (const GeometryError& e) {
    throw ArgumentError(std::string("build_triplets: ") + e.what());
  }
}

}  // namespace

NormMeta compute_norm(const DiffractionStack& stack, const RealImage2D& amplitude_image,
                      const ScanGrid& grid, const std::vector<std::size_t>& ids) {
  check_consistent(stack, amplitude_image, grid);
  const std::size_t n = stack.frame_size();
  std::vector<std::size_t> use = ids;
  if (use.empty()) {
    use.resize(stack.size());
    for (std::size_t i = 0; i < use.size(); ++i) use[i] = i;
  }
  NormMeta meta{0.0, 0.0};
  for (auto j : use) {
    for (double v : stack.frames.at(j).values()) meta.diff_scale = std::max(meta.diff_scale, v);
    const auto& pos = grid.positions[j];
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) meta.amp_scale = std::max(meta.amp_scale, amplitude_image(pos.row + r, pos.col + c));
    }
  }
  if (!(meta.diff_scale > 0.0) || !(meta.amp_scale > 0.0)) {
    throw ArgumentError("compute_norm: all-zero diffraction or amplitude");
  }
  return meta;
}

TripletDataset build_triplets(const DiffractionStack& stack, const RealImage2D& amplitude_image,
                              const RealImage2D& phase_image, const ScanGrid& grid,
                              const std::optional<NormMeta>& norm) {
  check_consistent(stack, amplitude_image, grid);
  if (!amplitude_image.same_shape(phase_image)) {
    throw ArgumentError("build_triplets: amplitude and phase images differ in shape");
  }
  const std::size_t n = stack.frame_size();
  TripletDataset ds;
  ds.grid = grid;
  ds.norm = norm ? *norm : compute_norm(stack, amplitude_image, grid);
  ds.diffraction = FrameStack(stack.size(), n, n);
  ds.amplitude = FrameStack(stack.size(), n, n);
  ds.phase = FrameStack(stack.size(), n, n);
  for (std::size_t j = 0; j < stack.size(); ++j) {
    ds.diffraction.set(j, stack.frames[j], 1.0 / ds.norm.diff_scale);
    ds.amplitude.set(j, extract_patch(amplitude_image, grid.positions[j], n), 1.0 / ds.norm.amp_scale);
    ds.phase.set(j, extract_patch(phase_image, grid.positions[j], n));
  }
  return ds;
}

SplitIndex split_90_10(std::size_t count, std::uint64_t seed) {
  if (count < 10) throw ArgumentError("split_90_10: need at least 10 records");
  SeededRng rng(seed);
  const auto perm = random_permutation(rng, count);
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(count)));
  SplitIndex split;
  split.seed = seed;
  split.train_ids.assign(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_val));
  split.val_ids.assign(perm.end() - static_cast<std::ptrdiff_t>(n_val), perm.end());
  return split;
}

namespace {

Tensor frames_tensor(const FrameStack& s) {
  return Tensor::from_f32({s.count, s.height, s.width}, s.data);
}

FrameStack frames_from(const Tensor& t) {
  if (t.dtype != DType::F32 || t.dims.size() != 3) throw FormatError("dataset: expected a 3-D f32 tensor", 0);
  FrameStack s(t.dims[0], t.dims[1], t.dims[2]);
  s.data = t.f32;
  return s;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const TripletDataset& dataset) {
  std::vector<double> grid_values;
  grid_values.reserve(2 * dataset.grid.size());
  for (const auto& p : dataset.grid.positions) {
    grid_values.push_back(static_cast<double>(p.row));
    grid_values.push_back(static_cast<double>(p.col));
  }
  TensorBundle bundle;
  bundle.emplace_back("diffraction", frames_tensor(dataset.diffraction));
  bundle.emplace_back("amplitude", frames_tensor(dataset.amplitude));
  bundle.emplace_back("phase", frames_tensor(dataset.phase));
  bundle.emplace_back("positions", Tensor::from_f64({dataset.grid.size(), 2}, std::move(grid_values)));
  bundle.emplace_back("grid_shape", Tensor::from_f64({3}, {static_cast<double>(dataset.grid.rows),
                                                           static_cast<double>(dataset.grid.cols),
                                                           static_cast<double>(dataset.grid.step_px)}));
  bundle.emplace_back("norm", Tensor::from_f64({2}, {dataset.norm.diff_scale, dataset.norm.amp_scale}));
  save_bundle(path, bundle);
}

TripletDataset load_dataset(const std::filesystem::path& path) {
  const auto bundle = load_bundle(path);
  TripletDataset ds;
  ds.diffraction = frames_from(bundle_get(bundle, "diffraction"));
  ds.amplitude = frames_from(bundle_get(bundle, "amplitude"));
  ds.phase = frames_from(bundle_get(bundle, "phase"));
  const auto& pos = bundle_get(bundle, "positions");
  for (std::size_t j = 0; j < pos.dims.at(0); ++j) {
    ds.grid.positions.push_back({static_cast<std::size_t>(pos.f64[2 * j]), static_cast<std::size_t>(pos.f64[2 * j + 1])});
  }
  const auto& shape = bundle_get(bundle, "grid_shape");
  ds.grid.rows = static_cast<std::size_t>(shape.f64.at(0));
  ds.grid.cols = static_cast<std::size_t>(shape.f64.at(1));
  ds.grid.step_px = static_cast<std::size_t>(shape.f64.at(2));
  const auto& norm = bundle_get(bundle, "norm");
  ds.norm = {norm.f64.at(0), norm.f64.at(1)};
  if (ds.amplitude.count != ds.diffraction.count || ds.phase.count != ds.diffraction.count ||
      ds.grid.size() != ds.diffraction.count) {
    throw FormatError("dataset: record counts disagree", 0);
  }
  return ds;
}

}  // namespace ptychoforge
