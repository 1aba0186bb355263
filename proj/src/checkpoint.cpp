#include "pairrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "pairrl/errors.hpp"

namespace pairrl {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw LoadError("checkpoint truncated");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw DimensionError("dimension exceeds u32");
      put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ParamSet decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 6) != 0) {
    throw LoadError("not a checkpoint (bad magic)");
  }
  if (std::memcmp(bytes.data() + 6, kCheckpointMagic + 6, 2) != 0) {
    throw LoadError("unsupported checkpoint version '" + std::string(reinterpret_cast<const char*>(bytes.data() + 6), 2) +
                    "'");
  }
  Reader in(bytes);
  in.str(8);
  const std::uint32_t count = in.u32();
  ParamSet params;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = in.u32();
    std::string name = in.str(name_len);
    const std::uint32_t rank = in.u32();
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t d = in.u32();
      if (d == 0) throw LoadError("zero dimension in tensor '" + name + "'");
      shape.push_back(d);
      numel *= d;
    }
    if (numel > in.remaining() / 4) throw LoadError("checkpoint truncated in tensor '" + name + "'");
    std::vector<float> data(numel);
    for (auto& v : data) v = in.f32();
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite()) throw LoadError("non-finite values in tensor '" + name + "'");
    if (!params.emplace(std::move(name), std::move(t)).second) throw LoadError("duplicate tensor name");
  }
  if (!in.done()) throw LoadError("trailing bytes after last tensor");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace pairrl
