#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dropvid/core_types.hpp"

namespace dropvid {

// "frame_000123.png"
std::string frame_filename(int index);

// 8-bit RGB PNG <-> 3×H×W frame in [0,1]. Writing rounds to the nearest level.
Frame read_frame_png(const std::filesystem::path& path, int time_index = 0);
void write_frame_png(const std::filesystem::path& path, const Frame& f);

// 8-bit grayscale PNG <-> 1×H×W evidence in [0,1].
Tensor read_gray_png(const std::filesystem::path& path);
void write_gray_png(const std::filesystem::path& path, const Tensor& plane);

// Sorted *.png files of a directory. Throws if the directory does not exist.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

// Loads every PNG of a directory as consecutive frames starting at time 0.
VideoClip read_clip_dir(const std::filesystem::path& dir, int window_radius = 2);
void write_clip_dir(const std::filesystem::path& dir, const VideoClip& clip);

// Rounds to 8-bit levels and back, i.e. what a PNG round trip yields.
Tensor quantize8(const Tensor& t);

}  // namespace dropvid
