#include "vidqa/video.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "vidqa/errors.hpp"

namespace vidqa {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'E', 'N'};
constexpr std::uint64_t kMaxElements = 1ULL << 30;

void check_crop_fits(const VideoTensor& v, std::size_t ch, std::size_t cw) {
  if (ch == 0 || cw == 0 || ch > v.height || cw > v.width)
    throw std::invalid_argument("crop " + std::to_string(cw) + "x" + std::to_string(ch) +
                                " does not fit frame " + std::to_string(v.width) + "x" +
                                std::to_string(v.height));
}

Rect draw_rect(const VideoTensor& v, std::size_t ch, std::size_t cw, RngStream& rng) {
  Rect r;
  r.w = cw;
  r.h = ch;
  r.x = rng.uniform_index(v.width - cw + 1);
  r.y = rng.uniform_index(v.height - ch + 1);
  return r;
}

}  // namespace

VideoTensor VideoTensor::zeros(std::size_t c, std::size_t f, std::size_t h,
                               std::size_t w) {
  VideoTensor v;
  v.channels = c;
  v.frames = f;
  v.height = h;
  v.width = w;
  v.data.assign(c * f * h * w, 0.0);
  return v;
}

void store_tensor_file(const std::string& path, const std::vector<std::uint32_t>& dims,
                       const std::vector<float>& payload) {
  std::uint64_t count = 1;
  for (std::uint32_t d : dims) count *= d;
  if (count != payload.size())
    throw ShapeError("tensor file: payload size " + std::to_string(payload.size()) +
                     " does not match dims product " + std::to_string(count));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  std::uint32_t ndim = static_cast<std::uint32_t>(dims.size());
  out.write(reinterpret_cast<const char*>(&ndim), 4);
  out.write(reinterpret_cast<const char*>(dims.data()),
            static_cast<std::streamsize>(dims.size() * 4));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * 4));
  if (!out) throw DataError("short write to " + path);
}

std::pair<std::vector<std::uint32_t>, std::vector<float>> load_tensor_file(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);

  char magic[4];
  if (!in.read(magic, 4))
    throw FormatError(path + ": truncated header at byte 0");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(path + ": bad magic at byte 0");

  std::uint32_t ndim = 0;
  if (!in.read(reinterpret_cast<char*>(&ndim), 4))
    throw FormatError(path + ": truncated dimension count at byte 4");
  if (ndim == 0 || ndim > 8)
    throw FormatError(path + ": unreasonable dimension count " + std::to_string(ndim) +
                      " at byte 4");

  std::vector<std::uint32_t> dims(ndim);
  if (!in.read(reinterpret_cast<char*>(dims.data()), ndim * 4))
    throw FormatError(path + ": truncated dims at byte 8");

  std::uint64_t count = 1;
  for (std::uint32_t d : dims) {
    if (d == 0)
      throw FormatError(path + ": zero dimension at byte 8");
    count *= d;
    if (count > kMaxElements)
      throw FormatError(path + ": dimension overflow at byte 8");
  }

  std::vector<float> payload(count);
  std::size_t header = 8 + static_cast<std::size_t>(ndim) * 4;
  if (!in.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(count * 4))) {
    std::size_t got = static_cast<std::size_t>(in.gcount());
    throw FormatError(path + ": truncated payload at byte " +
                      std::to_string(header + got));
  }
  return {std::move(dims), std::move(payload)};
}

void store_video(const std::string& path, const VideoTensor& v) {
  std::vector<float> payload(v.data.size());
  for (std::size_t i = 0; i < payload.size(); ++i)
    payload[i] = static_cast<float>(v.data[i]);
  store_tensor_file(path,
                    {static_cast<std::uint32_t>(v.channels),
                     static_cast<std::uint32_t>(v.frames),
                     static_cast<std::uint32_t>(v.height),
                     static_cast<std::uint32_t>(v.width)},
                    payload);
}

VideoTensor load_video(const std::string& path) {
  auto [dims, payload] = load_tensor_file(path);
  if (dims.size() != 4)
    throw FormatError(path + ": expected 4 dims for video, got " +
                      std::to_string(dims.size()) + " at byte 4");
  VideoTensor v;
  v.channels = dims[0];
  v.frames = dims[1];
  v.height = dims[2];
  v.width = dims[3];
  v.data.resize(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i)
    v.data[i] = static_cast<double>(payload[i]);
  return v;
}

std::vector<std::size_t> sample_frame_indices(std::size_t total_frames, std::size_t n,
                                              RngStream& rng) {
  if (n == 0 || n > total_frames)
    throw std::invalid_argument("sample_frame_indices: cannot draw " + std::to_string(n) +
                                " frames from " + std::to_string(total_frames));
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t lo = i * total_frames / n;
    std::size_t hi = (i + 1) * total_frames / n;
    out[i] = lo + rng.uniform_index(hi - lo);
  }
  return out;
}

VideoTensor sample_frames(const VideoTensor& video, std::size_t n, RngStream& rng) {
  std::vector<std::size_t> idx = sample_frame_indices(video.frames, n, rng);
  VideoTensor out = VideoTensor::zeros(video.channels, n, video.height, video.width);
  for (std::size_t c = 0; c < video.channels; ++c)
    for (std::size_t f = 0; f < n; ++f)
      for (std::size_t y = 0; y < video.height; ++y)
        for (std::size_t x = 0; x < video.width; ++x)
          out.at(c, f, y, x) = video.at(c, idx[f], y, x);
  return out;
}

VideoTensor apply_crop(const VideoTensor& video, const CropSpec& spec) {
  if (spec.rects.size() != video.frames)
    throw ShapeError("apply_crop: " + std::to_string(spec.rects.size()) +
                     " rects for " + std::to_string(video.frames) + " frames");
  std::size_t ch = spec.rects[0].h, cw = spec.rects[0].w;
  for (const Rect& r : spec.rects) {
    if (r.h != ch || r.w != cw)
      throw ShapeError("apply_crop: rect sizes differ across frames");
    if (r.x + r.w > video.width || r.y + r.h > video.height)
      throw std::invalid_argument("apply_crop: rect outside frame");
  }
  VideoTensor out = VideoTensor::zeros(video.channels, video.frames, ch, cw);
  for (std::size_t c = 0; c < video.channels; ++c)
    for (std::size_t f = 0; f < video.frames; ++f) {
      const Rect& r = spec.rects[f];
      for (std::size_t y = 0; y < ch; ++y)
        for (std::size_t x = 0; x < cw; ++x)
          out.at(c, f, y, x) = video.at(c, f, r.y + y, r.x + x);
    }
  return out;
}

std::pair<VideoTensor, CropSpec> temporal_crop(const VideoTensor& video, std::size_t ch,
                                               std::size_t cw, RngStream& rng) {
  check_crop_fits(video, ch, cw);
  CropSpec spec;
  spec.mode = CropMode::kTemporal;
  spec.rects.assign(video.frames, draw_rect(video, ch, cw, rng));
  return {apply_crop(video, spec), std::move(spec)};
}

std::pair<VideoTensor, CropSpec> spatial_crop(const VideoTensor& video, std::size_t ch,
                                              std::size_t cw, RngStream& rng) {
  check_crop_fits(video, ch, cw);
  std::size_t variants = (video.width - cw + 1) * (video.height - ch + 1);
  if (video.frames >= 2 && variants == 1)
    throw std::invalid_argument(
        "spatial_crop: crop equals frame, per-frame rects cannot differ");
  CropSpec spec;
  spec.mode = CropMode::kSpatial;
  for (int attempt = 0; attempt < 64; ++attempt) {
    spec.rects.clear();
    for (std::size_t f = 0; f < video.frames; ++f)
      spec.rects.push_back(draw_rect(video, ch, cw, rng));
    bool varied = video.frames < 2;
    for (const Rect& r : spec.rects)
      if (!(r == spec.rects[0])) varied = true;
    if (varied) return {apply_crop(video, spec), std::move(spec)};
  }
  throw std::invalid_argument("spatial_crop: could not draw distinct rects");
}

std::vector<std::pair<VideoTensor, CropSpec>> temporal_crop_set(const VideoTensor& video,
                                                                std::size_t count,
                                                                std::size_t ch,
                                                                std::size_t cw,
                                                                RngStream& rng) {
  if (count == 0) throw std::invalid_argument("temporal_crop_set: count must be positive");
  std::vector<std::pair<VideoTensor, CropSpec>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(temporal_crop(video, ch, cw, rng));
  return out;
}

std::vector<std::pair<VideoTensor, CropSpec>> spatial_crop_set(const VideoTensor& video,
                                                               std::size_t count,
                                                               std::size_t ch,
                                                               std::size_t cw,
                                                               RngStream& rng) {
  if (count == 0) throw std::invalid_argument("spatial_crop_set: count must be positive");
  std::vector<std::pair<VideoTensor, CropSpec>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(spatial_crop(video, ch, cw, rng));
  return out;
}

VideoTensor random_mask(const VideoTensor& video, double lo, double hi,
                        std::size_t patch, RngStream& rng) {
  if (patch == 0 || video.height % patch != 0 || video.width % patch != 0)
    throw std::invalid_argument("random_mask: patch " + std::to_string(patch) +
                                " does not tile frame " + std::to_string(video.width) +
                                "x" + std::to_string(video.height));
  if (lo < 0.0 || hi > 1.0 || lo > hi)
    throw std::invalid_argument("random_mask: bad fraction range [" + std::to_string(lo) +
                                "," + std::to_string(hi) + "]");
  std::size_t gy = video.height / patch, gx = video.width / patch;
  std::size_t patch_count = gy * gx;
  double fraction = lo + (hi - lo) * rng.uniform();
  std::size_t masked =
      static_cast<std::size_t>(std::lround(fraction * static_cast<double>(patch_count)));

  VideoTensor out = video;
  if (masked == 0) return out;

  std::vector<std::size_t> order(patch_count);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (std::size_t k = 0; k < masked; ++k) {
    std::size_t py = order[k] / gx, px = order[k] % gx;
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t f = 0; f < out.frames; ++f)
        for (std::size_t y = py * patch; y < (py + 1) * patch; ++y)
          for (std::size_t x = px * patch; x < (px + 1) * patch; ++x)
            out.at(c, f, y, x) = 0.0;
  }
  return out;
}

VideoTensor resize_video(const VideoTensor& video, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0)
    throw std::invalid_argument("resize_video: output size must be positive");
  if (out_h == video.height && out_w == video.width) return video;
  VideoTensor out = VideoTensor::zeros(video.channels, video.frames, out_h, out_w);
  double sy = static_cast<double>(video.height) / static_cast<double>(out_h);
  double sx = static_cast<double>(video.width) / static_cast<double>(out_w);
  for (std::size_t c = 0; c < video.channels; ++c)
    for (std::size_t f = 0; f < video.frames; ++f)
      for (std::size_t y = 0; y < out_h; ++y) {
        double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
        src_y = std::clamp(src_y, 0.0, static_cast<double>(video.height - 1));
        std::size_t y0 = static_cast<std::size_t>(src_y);
        std::size_t y1 = std::min(y0 + 1, video.height - 1);
        double fy = src_y - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
          double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
          src_x = std::clamp(src_x, 0.0, static_cast<double>(video.width - 1));
          std::size_t x0 = static_cast<std::size_t>(src_x);
          std::size_t x1 = std::min(x0 + 1, video.width - 1);
          double fx = src_x - static_cast<double>(x0);
          double top = video.at(c, f, y0, x0) * (1.0 - fx) + video.at(c, f, y0, x1) * fx;
          double bot = video.at(c, f, y1, x0) * (1.0 - fx) + video.at(c, f, y1, x1) * fx;
          double v = top * (1.0 - fy) + bot * fy;
          out.at(c, f, y, x) = static_cast<double>(static_cast<float>(v));
        }
      }
  return out;
}

}  // namespace vidqa
