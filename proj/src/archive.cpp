#include "dropvid/archive.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dropvid {

namespace {

constexpr char kMagic[4] = {'D', 'V', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
  explicit Reader(const std::string& b) : bytes_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("archive truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Archive::put(const std::string& name, Tensor t) { entries_[name] = std::move(t); }

void Archive::put_scalar(const std::string& name, double v) { entries_[name] = Tensor(Shape{1}, v); }

const Tensor& Archive::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::runtime_error("archive has no entry '" + name + "'");
  return it->second;
}

double Archive::get_scalar(const std::string& name) const {
  const Tensor& t = get(name);
  if (t.size() != 1) throw std::runtime_error("archive entry '" + name + "' is not a scalar");
  return t[0];
}

std::string Archive::to_bytes() const {
  std::string out(kMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) put_f64(out, v);
  }
  return out;
}

Archive Archive::from_bytes(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw std::runtime_error("not a DVCK archive (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw std::runtime_error("unsupported archive format version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  Archive a;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.f64();
    a.entries_[name] = Tensor(std::move(shape), std::move(values));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after archive");
  return a;
}

void Archive::save(const std::filesystem::path& path) const { write_file_bytes(path, to_bytes()); }

Archive Archive::load(const std::filesystem::path& path) { return from_bytes(read_file_bytes(path)); }

Archive to_archive(const Frame& f) {
  Archive a;
  a.put("pixels", f.pixels);
  a.put_scalar("time_index", f.time_index);
  return a;
}

Frame frame_from_archive(const Archive& a) {
  return Frame{a.get("pixels"), static_cast<int>(a.get_scalar("time_index"))};
}

Archive to_archive(const RaindropMask& m) {
  Archive a;
  a.put("evidence", m.evidence);
  a.put("nonrain_weight", m.nonrain_weight);
  a.put_scalar("threshold", m.threshold);
  return a;
}

RaindropMask mask_from_archive(const Archive& a) {
  return RaindropMask{a.get("evidence"), a.get("nonrain_weight"), a.get_scalar("threshold")};
}

Archive to_archive(const FlowField& f) {
  Archive a;
  a.put("vectors", f.vectors);
  a.put_scalar("source_index", f.source_index);
  a.put_scalar("target_index", f.target_index);
  return a;
}

FlowField flow_from_archive(const Archive& a) {
  return FlowField{a.get("vectors"), static_cast<int>(a.get_scalar("source_index")),
                   static_cast<int>(a.get_scalar("target_index"))};
}

Archive to_archive(const FeatureMap& f) {
  Archive a;
  a.put("activations", f.activations);
  a.put_scalar("time_index", f.time_index);
  return a;
}

FeatureMap feature_from_archive(const Archive& a) {
  return FeatureMap{a.get("activations"), static_cast<int>(a.get_scalar("time_index"))};
}

Archive to_archive(const OffsetField& f) {
  Archive a;
  a.put("offsets", f.offsets);
  return a;
}

OffsetField offsets_from_archive(const Archive& a) { return OffsetField{a.get("offsets")}; }

Archive to_archive(const LossReport& r) {
  Archive a;
  a.put_scalar("flow", r.flow);
  a.put_scalar("mask_ct", r.mask_ct);
  a.put_scalar("mask_cl", r.mask_cl);
  a.put_scalar("temp", r.temp);
  a.put_scalar("lambda_t", r.lambda_t);
  a.put_scalar("total", r.total);
  return a;
}

LossReport loss_report_from_archive(const Archive& a) {
  LossReport r;
  r.flow = a.get_scalar("flow");
  r.mask_ct = a.get_scalar("mask_ct");
  r.mask_cl = a.get_scalar("mask_cl");
  r.temp = a.get_scalar("temp");
  r.lambda_t = a.get_scalar("lambda_t");
  r.total = a.get_scalar("total");
  return r;
}

std::string content_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string file_content_hash(const std::filesystem::path& path) { return content_hash(read_file_bytes(path)); }

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace dropvid
