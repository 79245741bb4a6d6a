#include "selfboost/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace selfboost {

namespace {

constexpr char kMagic[] = {'M', 'D', 'C', 'K', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError("'" + origin_ + "': checkpoint truncated at byte offset " + std::to_string(pos_));
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  std::string out(kMagic, sizeof kMagic);
  for (const auto& e : entries) {
    if (numel(e.shape) != e.data.size()) throw DimensionError("checkpoint entry '" + e.name + "' size mismatch");
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write '" + tmp.string() + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw InputError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open checkpoint '" + path.string() + "'");
  Reader in(std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()), path.string());
  if (in.take(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw FormatError("'" + path.string() + "' is not an MDCK1 checkpoint");
  }
  std::vector<CheckpointEntry> entries;
  while (!in.done()) {
    CheckpointEntry e;
    e.name = in.take(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank == 0) throw FormatError("'" + path.string() + "': tensor '" + e.name + "' has rank 0");
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(in.u32());
    const std::size_t n = numel(e.shape);
    in.need(4 * n);
    e.data.resize(n);
    for (auto& v : e.data) v = std::bit_cast<float>(in.u32());
    entries.push_back(std::move(e));
  }
  return entries;
}

bool has_prefix(const std::vector<CheckpointEntry>& entries, const std::string& prefix) {
  for (const auto& e : entries)
    if (e.name.rfind(prefix, 0) == 0) return true;
  return false;
}

}  // namespace selfboost
