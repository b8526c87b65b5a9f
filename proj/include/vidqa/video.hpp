#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vidqa/rng.hpp"

namespace vidqa {

// Dense [channels x frames x height x width] video, row-major in that order,
// values in [0,1]. Payloads that came from disk or the generator are exactly
// float32-representable so file round trips are bitwise stable.
struct VideoTensor {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  static VideoTensor zeros(std::size_t c, std::size_t f, std::size_t h, std::size_t w);
  std::size_t size() const { return channels * frames * height * width; }
  double at(std::size_t c, std::size_t f, std::size_t y, std::size_t x) const {
    return data[((c * frames + f) * height + y) * width + x];
  }
  double& at(std::size_t c, std::size_t f, std::size_t y, std::size_t x) {
    return data[((c * frames + f) * height + y) * width + x];
  }
};

// Tensor file layer: magic "VTEN", u32 LE ndim, u32 LE dims, float32 LE
// row-major payload.
void store_tensor_file(const std::string& path, const std::vector<std::uint32_t>& dims,
                       const std::vector<float>& payload);
std::pair<std::vector<std::uint32_t>, std::vector<float>> load_tensor_file(
    const std::string& path);

void store_video(const std::string& path, const VideoTensor& video);
VideoTensor load_video(const std::string& path);

struct Rect {
  std::size_t x = 0, y = 0, w = 0, h = 0;
  bool operator==(const Rect&) const = default;
};

enum class CropMode { kTemporal, kSpatial };

struct CropSpec {
  CropMode mode = CropMode::kTemporal;
  std::vector<Rect> rects;  // one per frame
};

// Sparse sampling: the frame range is split into n equal segments and one
// index is drawn uniformly from each, so outputs strictly increase.
std::vector<std::size_t> sample_frame_indices(std::size_t total_frames, std::size_t n,
                                              RngStream& rng);
VideoTensor sample_frames(const VideoTensor& video, std::size_t n, RngStream& rng);

VideoTensor apply_crop(const VideoTensor& video, const CropSpec& spec);

// Temporal crop: one random rect shared by every frame. Spatial crop: an
// independent rect per frame; when the video has 2+ frames the rects are
// resampled until at least two distinct ones appear (impossible-to-vary
// geometry is an argument error).
std::pair<VideoTensor, CropSpec> temporal_crop(const VideoTensor& video, std::size_t ch,
                                               std::size_t cw, RngStream& rng);
std::pair<VideoTensor, CropSpec> spatial_crop(const VideoTensor& video, std::size_t ch,
                                              std::size_t cw, RngStream& rng);
std::vector<std::pair<VideoTensor, CropSpec>> temporal_crop_set(const VideoTensor& video,
                                                                std::size_t count,
                                                                std::size_t ch,
                                                                std::size_t cw,
                                                                RngStream& rng);
std::vector<std::pair<VideoTensor, CropSpec>> spatial_crop_set(const VideoTensor& video,
                                                               std::size_t count,
                                                               std::size_t ch,
                                                               std::size_t cw,
                                                               RngStream& rng);

// Zero out round(fraction * patch_count) whole patches, fraction drawn from
// [lo,hi]; the same patch mask is applied to every frame. Frame size must be
// divisible by patch.
VideoTensor random_mask(const VideoTensor& video, double lo, double hi,
                        std::size_t patch, RngStream& rng);

// Bilinear resize of every frame (pixel-center convention).
VideoTensor resize_video(const VideoTensor& video, std::size_t out_h, std::size_t out_w);

}  // namespace vidqa
