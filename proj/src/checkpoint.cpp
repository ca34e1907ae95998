#include "episteer/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace episteer {

namespace {

constexpr char kMagic[4] = {'E', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char buf[sizeof(U)];
  in.read(reinterpret_cast<char*>(buf), sizeof(U));
  if (!in) throw ValidationError("checkpoint truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params,
                     const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, params.size());
  nlohmann::json tensors = nlohmann::json::array();
  for (const Parameter* p : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.cols()));
    for (Index i = 0; i < p->value.rows(); ++i)
      for (Index j = 0; j < p->value.cols(); ++j) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(p->value(i, j)));
    tensors.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}});
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());

  nlohmann::json manifest = {{"format", "EPCK"}, {"version", kVersion}, {"tensors", tensors}, {"metadata", metadata}};
  std::ofstream mf(path.string() + ".json");
  if (!mf) throw ValidationError("cannot write checkpoint manifest for " + path.string());
  mf << manifest.dump(2) << '\n';
}

const Matrix* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("not a checkpoint file: " + path.string());
  if (get_le<std::uint32_t>(in) != kVersion) throw ValidationError("unsupported checkpoint version");
  const auto count = get_le<std::uint64_t>(in);
  Checkpoint ckpt;
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto len = get_le<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto ndims = get_le<std::uint32_t>(in);
    if (ndims < 1 || ndims > 2) throw ValidationError("unsupported tensor rank in checkpoint: " + name);
    const auto rows = static_cast<Index>(get_le<std::uint64_t>(in));
    const auto cols = ndims == 2 ? static_cast<Index>(get_le<std::uint64_t>(in)) : Index{1};
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = std::bit_cast<double>(get_le<std::uint64_t>(in));
    ckpt.tensors.push_back({std::move(name), std::move(m)});
  }
  std::ifstream mf(path.string() + ".json");
  if (mf) {
    auto manifest = nlohmann::json::parse(mf, nullptr, false);
    if (!manifest.is_discarded() && manifest.contains("metadata")) ckpt.metadata = manifest["metadata"];
  }
  if (ckpt.metadata.is_null()) ckpt.metadata = nlohmann::json::object();
  return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    const Matrix* m = ckpt.find(p->name);
    if (m == nullptr) throw ValidationError("checkpoint is missing tensor " + p->name);
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols()) {
      throw ValidationError("checkpoint tensor " + p->name + " has shape " + shape_str(m->rows(), m->cols()) +
                            ", expected " + shape_str(p->value.rows(), p->value.cols()));
    }
    p->value = *m;
    p->zero_grad();
  }
}

}  // namespace episteer
