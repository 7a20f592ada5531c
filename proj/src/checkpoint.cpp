#include "gfkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "gfkd/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec writes raw little-endian words");

namespace gfkd {
namespace {

constexpr char kMagic[4] = {'G', 'F', 'K', 'D'};

template <typename T>
void put(std::ofstream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::ifstream& is, const std::string& path, const char* what) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!is)
    throw ValidationError("checkpoint " + path + ": truncated while reading " + what);
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<ParamStore::Entry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put<std::uint16_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, entries.size());
  for (const auto& e : entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.extents.size()));
    for (std::size_t d : e.extents) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(e.values.data()),
             static_cast<std::streamsize>(e.values.size() * sizeof(double)));
  }
  os.flush();
  if (!os) throw ValidationError("checkpoint: write to " + path + " failed");
}

std::vector<ParamStore::Entry> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("checkpoint " + path + ": bad magic, expected \"GFKD\"");
  const auto version = get<std::uint16_t>(is, path, "version");
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint " + path + ": format version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto count = get<std::uint64_t>(is, path, "entry count");

  std::vector<ParamStore::Entry> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ParamStore::Entry e;
    const auto name_len = get<std::uint32_t>(is, path, "name length");
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    if (!is) throw ValidationError("checkpoint " + path + ": truncated inside a name");
    const auto rank = get<std::uint32_t>(is, path, "rank");
    e.extents.resize(rank);
    for (auto& d : e.extents) d = get<std::uint64_t>(is, path, "extent");
    e.values.resize(numel(e.extents));
    is.read(reinterpret_cast<char*>(e.values.data()),
            static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    if (!is)
      throw ValidationError("checkpoint " + path + ": truncated inside values of " +
                            e.name);
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ParamStore::Entry> store_entries(const ParamStore& store,
                                             const std::string& prefix) {
  std::vector<ParamStore::Entry> out;
  out.reserve(store.entries().size());
  for (const auto& e : store.entries())
    out.push_back({prefix + e.name, e.extents, e.values});
  return out;
}

void load_into_store(ParamStore& store, const std::vector<ParamStore::Entry>& entries,
                     const std::string& prefix) {
  std::size_t loaded = 0;
  for (const auto& e : entries) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    const std::string name = e.name.substr(prefix.size());
    if (!store.has(name)) continue;
    auto& dst = store.at(name);
    if (dst.extents != e.extents)
      throw ValidationError("checkpoint: " + e.name + " has shape " +
                            shape_str(e.extents) + ", store expects " +
                            shape_str(dst.extents));
    dst.values = e.values;
    ++loaded;
  }
  if (loaded != store.entries().size())
    throw ValidationError("checkpoint: loaded " + std::to_string(loaded) + " of " +
                          std::to_string(store.entries().size()) +
                          " parameters (prefix \"" + prefix + "\")");
}

double u64_as_double(std::uint64_t x) {
  double d;
  std::memcpy(&d, &x, sizeof d);
  return d;
}

std::uint64_t double_as_u64(double x) {
  std::uint64_t u;
  std::memcpy(&u, &x, sizeof u);
  return u;
}

}  // namespace gfkd
