#include "glua/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace glua {

CheckpointError::CheckpointError(const std::string& what, std::size_t offset)
    : std::runtime_error("checkpoint: " + what + " (at byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'G', 'L', 'U', 'A'};
constexpr std::uint32_t kMaxRank = 16;

class Writer {
 public:
  template <typename U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put_bytes(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("truncated while reading ") + what + ": expected " + std::to_string(n) +
                                " more bytes, file has " + std::to_string(bytes_.size() - pos_) +
                                " (total length " + std::to_string(bytes_.size()) + ")",
                            pos_);
    }
  }
  template <typename U>
  U get_le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

template <Real T>
std::vector<std::uint8_t> payload_of(const Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Writer w;
  for (T v : t.data()) w.put_le(std::bit_cast<Bits>(v));
  return w.take();
}

template <Real T>
Tensor<T> tensor_of(const CheckpointTensor& ct) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<T> values(shape_numel(ct.shape));
  for (std::size_t i = 0; i < values.size(); ++i) {
    Bits b = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) b |= static_cast<Bits>(static_cast<Bits>(ct.payload[i * sizeof(T) + k]) << (8 * k));
    values[i] = std::bit_cast<T>(b);
  }
  return Tensor<T>(ct.shape, std::move(values));
}

void check_header(Reader& r) {
  auto magic = r.get_bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw CheckpointError("bad magic, not a GLUA file", 0);
  const auto version = r.get_le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported version " + std::to_string(version), 4);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointTensor> tensors) {
  Writer w;
  w.put_bytes(kMagic);
  w.put_le(kCheckpointVersion);
  w.put_le(static_cast<std::uint32_t>(tensors.size()));
  for (const CheckpointTensor& t : tensors) {
    w.put_le(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(t.name.data()), t.name.size()});
    w.put_le(static_cast<std::uint8_t>(t.dtype));
    w.put_le(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.put_le(static_cast<std::uint64_t>(d));
    w.put_bytes(t.payload);
  }
  return w.take();
}

template <Real T>
std::vector<std::uint8_t> encode_checkpoint(std::span<const Parameter<T>* const> params) {
  std::vector<CheckpointTensor> tensors;
  tensors.reserve(params.size());
  for (const Parameter<T>* p : params) {
    tensors.push_back({p->name, dtype_of<T>, p->value.shape(), payload_of(p->value)});
  }
  return encode_checkpoint(tensors);
}

std::vector<CheckpointTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  check_header(r);
  const auto count = r.get_le<std::uint32_t>("tensor count");
  std::vector<CheckpointTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.get_le<std::uint32_t>("name length");
    auto name = r.get_bytes(name_len, "tensor name");
    t.name.assign(name.begin(), name.end());
    const std::size_t dtype_at = r.pos();
    const auto dtype = r.get_le<std::uint8_t>("dtype");
    if (dtype > 1) throw CheckpointError("unknown dtype " + std::to_string(dtype) + " for '" + t.name + "'", dtype_at);
    t.dtype = static_cast<DType>(dtype);
    const std::size_t rank_at = r.pos();
    const auto rank = r.get_le<std::uint32_t>("rank");
    if (rank == 0 || rank > kMaxRank) {
      throw CheckpointError("invalid rank " + std::to_string(rank) + " for '" + t.name + "'", rank_at);
    }
    // Payload size is validated against the remaining bytes before anything
    // of that size is allocated.
    std::size_t elements = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::size_t dim_at = r.pos();
      const auto d = r.get_le<std::uint64_t>("dimension");
      if (d == 0 || d > r.remaining() || elements > r.remaining() / d) {
        throw CheckpointError("dimension " + std::to_string(d) + " of '" + t.name + "' exceeds the file length",
                              dim_at);
      }
      elements *= d;
      t.shape.push_back(static_cast<std::size_t>(d));
    }
    const std::size_t payload_bytes = elements * dtype_size(t.dtype);
    auto payload = r.get_bytes(payload_bytes, "tensor payload");
    t.payload.assign(payload.begin(), payload.end());
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) {
    throw CheckpointError(std::to_string(r.remaining()) + " trailing bytes after the last tensor", r.pos());
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

template <Real T>
void checkpoint_save(const Model<T>& model, const std::filesystem::path& path) {
  const auto& params = model.parameters();
  std::vector<const Parameter<T>*> view(params.begin(), params.end());
  write_file_atomic(path, encode_checkpoint<T>(view));
}

template <Real T>
void checkpoint_load(Model<T>& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::array<std::uint8_t, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  {
    Reader r(std::span<const std::uint8_t>(head.data(), static_cast<std::size_t>(in.gcount())));
    check_header(r);
  }
  in.seekg(0);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto tensors = decode_checkpoint(bytes);

  const auto& params = model.parameters();
  if (tensors.size() != params.size()) {
    throw CheckpointError("file holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                              std::to_string(params.size()),
                          8);
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const CheckpointTensor& t = tensors[i];
    Parameter<T>& p = *params[i];
    if (t.name != p.name || t.shape != p.value.shape() || t.dtype != dtype_of<T>) {
      throw std::invalid_argument("checkpoint tensor '" + t.name + "' " + shape_str(t.shape) +
                                  " does not match model parameter '" + p.name + "' " + shape_str(p.value.shape()));
    }
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) params[i]->value = tensor_of<T>(tensors[i]);
}

template std::vector<std::uint8_t> encode_checkpoint<float>(std::span<const Parameter<float>* const>);
template std::vector<std::uint8_t> encode_checkpoint<double>(std::span<const Parameter<double>* const>);
template void checkpoint_save<float>(const Model<float>&, const std::filesystem::path&);
template void checkpoint_save<double>(const Model<double>&, const std::filesystem::path&);
template void checkpoint_load<float>(Model<float>&, const std::filesystem::path&);
template void checkpoint_load<double>(Model<double>&, const std::filesystem::path&);

}  // namespace glua
