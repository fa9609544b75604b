#include <cstring>
#include <fstream>

#include "thpn/training.hpp"

namespace thpn {

namespace {

constexpr char kMagic[4] = {'T', 'H', 'P', 'N'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

void put_str(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<std::uint32_t>(s.size()));
  buf += s;
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  std::uint32_t u32() {
    if (pos_ + 4 > data_.size()) fail("truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str() {
    const std::uint32_t len = u32();
    if (pos_ + len > data_.size()) fail("truncated string");
    std::string s = data_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void expect_magic() {
    if (data_.size() < 4 || std::memcmp(data_.data(), kMagic, 4) != 0)
      fail("not a THPN checkpoint");
    pos_ = 4;
  }

  bool done() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& why) const {
    throw CheckpointError(path_ + ": " + why);
  }

 private:
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, ckpt.version);
  put_str(buf, serialize_hyperparams(ckpt.hp));
  put_u32(buf, static_cast<std::uint32_t>(ckpt.vocab_tokens.size()));
  for (const auto& tok : ckpt.vocab_tokens) put_str(buf, tok);
  put_u32(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& nt : ckpt.tensors) {
    put_str(buf, nt.name);
    put_u32(buf, static_cast<std::uint32_t>(nt.shape.size()));
    for (int d : nt.shape) put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : nt.data) put_f32(buf, v);
  }
  write_file_atomic(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r(data, path);
  r.expect_magic();
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion)
    throw CheckpointError(path + ": format version " + std::to_string(ckpt.version) +
                          " is incompatible with supported version " +
                          std::to_string(kCheckpointVersion));
  ckpt.hp = parse_hyperparams(r.str());
  const std::uint32_t vocab_count = r.u32();
  ckpt.vocab_tokens.reserve(vocab_count);
  for (std::uint32_t i = 0; i < vocab_count; ++i) ckpt.vocab_tokens.push_back(r.str());
  const std::uint32_t tensor_count = r.u32();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    NamedTensorF32 nt;
    nt.name = r.str();
    const std::uint32_t rank = r.u32();
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      nt.shape.push_back(static_cast<int>(r.u32()));
      numel *= static_cast<std::size_t>(nt.shape.back());
    }
    nt.data.reserve(numel);
    for (std::size_t k = 0; k < numel; ++k) nt.data.push_back(r.f32());
    ckpt.tensors.push_back(std::move(nt));
  }
  if (!r.done()) r.fail("trailing bytes");
  return ckpt;
}

LoadedModel load_model(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  Vocabulary vocab(ckpt.vocab_tokens);
  RngState rng(ckpt.hp.seed);
  ThpnModel model(model_config_from(ckpt.hp, vocab.size()), vocab, rng);
  Mat initial = model.encoder_embedding();
  apply_checkpoint(ckpt, model);
  return LoadedModel{std::move(ckpt), std::move(model), std::move(initial)};
}

}  // namespace thpn
