#include "dropvid/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dropvid {

namespace fs = std::filesystem;

namespace {

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

const std::vector<int> kPngParams{cv::IMWRITE_PNG_COMPRESSION, 6};

}  // namespace

std::string frame_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.png", index);
  return buf;
}

Frame read_frame_png(const fs::path& path, int time_index) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("cannot read image " + path.string());
  Tensor t(Shape{3, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = row[x][2 - c] / 255.0;  // BGR on disk order
  }
  return Frame{std::move(t), time_index};
}

void write_frame_png(const fs::path& path, const Frame& f) {
  const Tensor& t = f.pixels;
  if (t.rank() != 3 || (t.channels() != 3 && t.channels() != 1))
    throw std::invalid_argument("write_frame_png: expected 3×H×W or 1×H×W");
  cv::Mat m(t.height(), t.width(), CV_8UC3);
  for (int y = 0; y < t.height(); ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < t.width(); ++x)
      for (int c = 0; c < 3; ++c) row[x][2 - c] = to_byte(t.at(t.channels() == 3 ? c : 0, y, x));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m, kPngParams)) throw std::runtime_error("cannot write " + path.string());
}

Tensor read_gray_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw std::runtime_error("cannot read image " + path.string());
  Tensor t(Shape{1, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) t.at(0, y, x) = m.at<unsigned char>(y, x) / 255.0;
  return t;
}

void write_gray_png(const fs::path& path, const Tensor& plane) {
  cv::Mat m(plane.height(), plane.width(), CV_8UC1);
  for (int y = 0; y < plane.height(); ++y)
    for (int x = 0; x < plane.width(); ++x) m.at<unsigned char>(y, x) = to_byte(plane.at(0, y, x));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m, kPngParams)) throw std::runtime_error("cannot write " + path.string());
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

VideoClip read_clip_dir(const fs::path& dir, int window_radius) {
  VideoClip clip;
  clip.window_radius = window_radius;
  int t = 0;
  for (const auto& p : list_frames(dir)) clip.frames.push_back(read_frame_png(p, t++));
  if (clip.frames.empty()) throw std::runtime_error("no PNG frames in " + dir.string());
  validate_clip(clip);
  return clip;
}

void write_clip_dir(const fs::path& dir, const VideoClip& clip) {
  for (std::size_t i = 0; i < clip.frames.size(); ++i)
    write_frame_png(dir / frame_filename(static_cast<int>(i)), clip.frames[i]);
}

Tensor quantize8(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.values()) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace dropvid
