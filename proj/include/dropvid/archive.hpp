#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dropvid/core_types.hpp"

namespace dropvid {

// Self-describing container of named arrays. On disk:
//   "DVCK" | u32 version | u32 count | count × entry
//   entry = u32 name_len | name | u32 rank | rank × u32 dim | numel × f64
// All integers and doubles little-endian; entries sorted by name.
class Archive {
public:
  static constexpr std::uint32_t kFormatVersion = 1;

  void put(const std::string& name, Tensor t);
  void put_scalar(const std::string& name, double v);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  const std::map<std::string, Tensor>& entries() const { return entries_; }

  std::string to_bytes() const;
  static Archive from_bytes(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

private:
  std::map<std::string, Tensor> entries_;
};

// Type round-trips through the archive format.
Archive to_archive(const Frame& f);
Frame frame_from_archive(const Archive& a);
Archive to_archive(const RaindropMask& m);
RaindropMask mask_from_archive(const Archive& a);
Archive to_archive(const FlowField& f);
FlowField flow_from_archive(const Archive& a);
Archive to_archive(const FeatureMap& f);
FeatureMap feature_from_archive(const Archive& a);
Archive to_archive(const OffsetField& f);
OffsetField offsets_from_archive(const Archive& a);
Archive to_archive(const LossReport& r);
LossReport loss_report_from_archive(const Archive& a);

// git-style blob hash (SHA-1 over "blob <len>\0" + bytes), hex encoded.
std::string content_hash(const std::string& bytes);
std::string file_content_hash(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace dropvid
