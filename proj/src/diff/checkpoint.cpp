#include "cmet/diff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cmet/error.hpp"

namespace cmet::diff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'E', 'T', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorKind::BadFormat, path + ": truncated checkpoint");
  }
  return v;
}

struct Entry {
  std::string name;
  const Tensor* tensor;
};

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store, nlohmann::json metadata,
                     bool with_optimizer) {
  std::vector<Entry> entries;
  for (const Parameter& p : store.all()) {
    entries.push_back({p.name, &p.value});
    if (with_optimizer) {
      entries.push_back({p.name + "@m", &p.first_moment});
      entries.push_back({p.name + "@v", &p.second_moment});
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const Entry& e : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor->rank()));
    for (std::size_t d : e.tensor->shape) put<std::uint64_t>(out, d);
    put<std::uint64_t>(out, offset);
    offset += e.tensor->size();
  }
  put<std::uint64_t>(out, offset);
  for (const Entry& e : entries) {
    out.write(reinterpret_cast<const char*>(e.tensor->data.data()),
              static_cast<std::streamsize>(e.tensor->size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);

  metadata["step"] = store.step;
  metadata["format"] = "METCKPT1";
  metadata["format_version"] = kCheckpointVersion;
  std::ofstream side(path + ".json", std::ios::trunc);
  if (!side) throw Error(ErrorKind::Io, "cannot write " + path + ".json");
  side << metadata.dump(2) << '\n';
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorKind::BadFormat, path + ": not a METCKPT1 checkpoint");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::BadFormat, path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, path);
  struct Header {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Header> headers;
  for (std::uint32_t i = 0; i < count; ++i) {
    Header h;
    const auto len = get<std::uint32_t>(in, path);
    if (len > 4096) throw Error(ErrorKind::BadFormat, path + ": implausible name length");
    h.name.resize(len);
    if (!in.read(h.name.data(), len)) throw Error(ErrorKind::BadFormat, path + ": truncated checkpoint");
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 16) throw Error(ErrorKind::BadFormat, path + ": implausible rank");
    for (std::uint32_t r = 0; r < rank; ++r) h.shape.push_back(get<std::uint64_t>(in, path));
    h.offset = get<std::uint64_t>(in, path);
    headers.push_back(std::move(h));
  }
  const auto total = get<std::uint64_t>(in, path);
  std::vector<double> data(total);
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(total * sizeof(double)))) {
    throw Error(ErrorKind::BadFormat, path + ": truncated checkpoint data");
  }
  std::map<std::string, Tensor> out;
  for (Header& h : headers) {
    const std::size_t n = shape_size(h.shape);
    if (h.offset + n > total) throw Error(ErrorKind::BadFormat, path + ": entry '" + h.name + "' overruns data");
    std::vector<double> vals(data.begin() + static_cast<std::ptrdiff_t>(h.offset),
                             data.begin() + static_cast<std::ptrdiff_t>(h.offset + n));
    out.emplace(h.name, Tensor(std::move(h.shape), std::move(vals)));
  }
  return out;
}

nlohmann::json read_checkpoint_metadata(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path + ".json");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadFormat, path + ".json: " + e.what());
  }
}

void load_checkpoint(const std::string& path, ParameterStore& store) {
  auto entries = read_checkpoint(path);
  for (Parameter& p : store.all()) {
    const auto it = entries.find(p.name);
    if (it == entries.end()) throw Error(ErrorKind::BadFormat, path + ": missing parameter '" + p.name + "'");
    if (it->second.shape != p.value.shape) {
      throw Error(ErrorKind::ShapeMismatch, path + ": parameter '" + p.name + "' has shape " +
                                                shape_string(it->second.shape) + ", expected " +
                                                shape_string(p.value.shape));
    }
    p.value = std::move(it->second);
    if (auto m = entries.find(p.name + "@m"); m != entries.end()) p.first_moment = std::move(m->second);
    if (auto v = entries.find(p.name + "@v"); v != entries.end()) p.second_moment = std::move(v->second);
  }
  const nlohmann::json meta = read_checkpoint_metadata(path);
  store.step = meta.value("step", std::size_t{0});
}

}  // namespace cmet::diff
