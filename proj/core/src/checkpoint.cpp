#include "evomoe/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "evomoe/error.hpp"

namespace evomoe {
namespace {

constexpr std::size_t kDigestBytes = 32;
// Guards against absurd allocations when a length field is corrupt.
constexpr std::uint64_t kMaxRank = 8;

void sha256(std::string_view bytes, unsigned char* out) {
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out, &len, EVP_sha256(), nullptr) != 1 || len != kDigestBytes) {
    throw Error("SHA-256 digest failed");
  }
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void f64s(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{u8()} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{u8()} << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<double> f64s() {
    const auto n = u64();
    if (n > remaining() / 8) fail("array length exceeds file size");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw CorruptArtifactError("checkpoint: " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::uint64_t n) const {
    if (n > remaining()) fail("truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[kDigestBytes];
  sha256(bytes, digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 15]);
  }
  return out;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.str(ckpt.config_text);
  w.i64(ckpt.iteration);
  w.u8(ckpt.diversified ? 1 : 0);
  w.f64(ckpt.cumulative_flops);

  w.u64(ckpt.params.size());
  for (const auto& p : ckpt.params) {
    if (numel(p.shape) != p.data.size()) throw DimensionError("checkpoint blob " + p.name + " shape/data mismatch");
    w.str(p.name);
    w.u64(p.shape.size());
    for (auto d : p.shape) w.u64(d);
    for (double x : p.data) w.f64(x);
  }

  w.u64(ckpt.adam.moments.size());
  for (const auto& [name, mom] : ckpt.adam.moments) {
    w.str(name);
    w.i64(mom.steps);
    w.f64s(mom.m);
    w.f64s(mom.v);
  }
  w.str(ckpt.model_rng);
  w.str(ckpt.data_rng);

  unsigned char digest[kDigestBytes];
  sha256(w.bytes(), digest);
  w.raw(std::string_view(reinterpret_cast<const char*>(digest), kDigestBytes));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8 + kDigestBytes) throw CorruptArtifactError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CorruptArtifactError("checkpoint: bad magic");
  const auto body = bytes.substr(0, bytes.size() - kDigestBytes);
  unsigned char digest[kDigestBytes];
  sha256(body, digest);
  if (std::memcmp(digest, bytes.data() + body.size(), kDigestBytes) != 0) {
    throw CorruptArtifactError("checkpoint: checksum mismatch");
  }

  Reader r(body.substr(4));
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_text = r.str();
  ckpt.iteration = r.i64();
  ckpt.diversified = r.u8() != 0;
  ckpt.cumulative_flops = r.f64();

  const auto n_params = r.u64();
  for (std::uint64_t i = 0; i < n_params; ++i) {
    ParamBlob p;
    p.name = r.str();
    const auto rank = r.u64();
    if (rank > kMaxRank) r.fail("implausible rank");
    std::uint64_t count = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      p.shape.push_back(r.u64());
      count *= p.shape.back();
    }
    if (count > r.remaining() / 8) r.fail("parameter " + p.name + " exceeds file size");
    p.data.resize(count);
    for (auto& x : p.data) x = r.f64();
    ckpt.params.push_back(std::move(p));
  }

  const auto n_moments = r.u64();
  for (std::uint64_t i = 0; i < n_moments; ++i) {
    auto name = r.str();
    AdamMoments mom;
    mom.steps = r.i64();
    mom.m = r.f64s();
    mom.v = r.f64s();
    if (mom.m.size() != mom.v.size()) r.fail("moment size mismatch for " + name);
    ckpt.adam.moments.emplace(std::move(name), std::move(mom));
  }
  ckpt.model_rng = r.str();
  ckpt.data_rng = r.str();
  if (r.remaining() != 0) r.fail("trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptArtifactError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace evomoe
